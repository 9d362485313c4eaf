"""Transformer encoder with two per-position heads and analytic gradients.

A small bidirectional encoder (post-layer-norm, GELU feed-forward) maps a
token sequence to per-position hidden states, vocabulary logits, and a
20-way profile distribution. Forward, loss, and backward are written
directly in numpy so every gradient is checkable against central finite
differences; training runs in float32, gradient checking in float64.

Padding positions are excluded from attention and from all losses, so
appending padding never changes the outputs or gradients of real
positions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .alphabet import ALPHABET_SIZE, PAD_ID, VOCAB_SIZE
from .exceptions import (
    InvalidConfigError,
    LengthExceededError,
    ShapeMismatchError,
    TokenOutOfRangeError,
)

_NEG_BIAS = -1e9
_LN_EPS = 1e-5

OBJECTIVES = ("pp", "mlm", "joint")


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters. Defaults are the desk-scale build."""

    num_layers: int = 2
    num_heads: int = 4
    hidden_dim: int = 64
    ff_dim: int = 256
    max_positions: int = 256
    dropout_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if min(self.num_layers, self.num_heads, self.hidden_dim,
               self.ff_dim, self.max_positions) < 1:
            raise InvalidConfigError("all size fields must be >= 1")
        if self.hidden_dim % self.num_heads != 0:
            raise InvalidConfigError(
                f"hidden_dim {self.hidden_dim} not divisible by "
                f"num_heads {self.num_heads}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise InvalidConfigError(
                f"dropout_rate {self.dropout_rate} outside [0, 1)")

    @property
    def vocab_size(self) -> int:
        return VOCAB_SIZE

    @property
    def head_dim(self) -> int:
        return self.hidden_dim // self.num_heads

    @classmethod
    def paper_scale(cls, **overrides) -> "ModelConfig":
        """The cited full-scale architecture; constructible, not exercised."""
        base = dict(num_layers=12, num_heads=12, hidden_dim=768,
                    ff_dim=3072, max_positions=512)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return {
            "num_layers": self.num_layers,
            "num_heads": self.num_heads,
            "hidden_dim": self.hidden_dim,
            "ff_dim": self.ff_dim,
            "max_positions": self.max_positions,
            "dropout_rate": self.dropout_rate,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        return cls(**data)


def tensor_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every parameter tensor's name and shape, in canonical order."""
    d, f = config.hidden_dim, config.ff_dim
    shapes: dict[str, tuple[int, ...]] = {
        "token_embed": (config.vocab_size, d),
        "pos_embed": (config.max_positions, d),
        "embed_ln.scale": (d,),
        "embed_ln.offset": (d,),
    }
    for i in range(config.num_layers):
        p = f"layer{i}"
        shapes[f"{p}.attn.wq"] = (d, d)
        shapes[f"{p}.attn.bq"] = (d,)
        shapes[f"{p}.attn.wk"] = (d, d)
        shapes[f"{p}.attn.bk"] = (d,)
        shapes[f"{p}.attn.wv"] = (d, d)
        shapes[f"{p}.attn.bv"] = (d,)
        shapes[f"{p}.attn.wo"] = (d, d)
        shapes[f"{p}.attn.bo"] = (d,)
        shapes[f"{p}.ln1.scale"] = (d,)
        shapes[f"{p}.ln1.offset"] = (d,)
        shapes[f"{p}.ff.w1"] = (d, f)
        shapes[f"{p}.ff.b1"] = (f,)
        shapes[f"{p}.ff.w2"] = (f, d)
        shapes[f"{p}.ff.b2"] = (d,)
        shapes[f"{p}.ln2.scale"] = (d,)
        shapes[f"{p}.ln2.offset"] = (d,)
    shapes["vocab_head.w"] = (d, config.vocab_size)
    shapes["vocab_head.b"] = (config.vocab_size,)
    shapes["profile_head.w"] = (d, ALPHABET_SIZE)
    shapes["profile_head.b"] = (ALPHABET_SIZE,)
    return shapes


class ModelParams:
    """Named tensor collection plus the config its shapes derive from."""

    def __init__(self, config: ModelConfig, tensors: dict[str, np.ndarray]):
        expected = tensor_shapes(config)
        if set(tensors) != set(expected):
            missing = sorted(set(expected) - set(tensors))
            extra = sorted(set(tensors) - set(expected))
            raise InvalidConfigError(
                f"tensor names do not match config (missing {missing}, "
                f"extra {extra})")
        for name, shape in expected.items():
            if tuple(tensors[name].shape) != shape:
                raise ShapeMismatchError(
                    f"tensor {name!r} has shape {tensors[name].shape}, "
                    f"expected {shape}")
        self.config = config
        self.tensors = {name: tensors[name] for name in expected}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def items(self):
        return self.tensors.items()

    @property
    def dtype(self):
        return self.tensors["token_embed"].dtype

    def astype(self, dtype) -> "ModelParams":
        return ModelParams(
            self.config,
            {k: v.astype(dtype) for k, v in self.tensors.items()})

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.config, {k: v.copy() for k, v in self.tensors.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.tensors.values())


def init_params(config: ModelConfig, dtype=np.float32) -> ModelParams:
    """Deterministic initialization: scaled normals (std 0.02), zero
    offsets, unit layer-norm scales."""
    from .seeding import derive_rng

    rng = derive_rng(config.seed, "init")
    tensors = {}
    for name, shape in tensor_shapes(config).items():
        if name.endswith(".scale"):
            tensors[name] = np.ones(shape, dtype=dtype)
        elif name.endswith((".offset", ".b", ".bq", ".bk", ".bv", ".bo",
                            ".b1", ".b2")):
            tensors[name] = np.zeros(shape, dtype=dtype)
        else:
            tensors[name] = (0.02 * rng.standard_normal(shape)).astype(dtype)
    return ModelParams(config, tensors)


@dataclass
class ForwardOutput:
    hidden_states: np.ndarray   # (B, T, D)
    vocab_logits: np.ndarray    # (B, T, V)
    profile_probs: np.ndarray   # (B, T, 20), rows sum to 1
    attention: list | None = None  # per layer (B, H, T, T) when requested


@dataclass
class Batch:
    """One padded training batch.

    lengths holds each sequence's residue count; labels/label_mask carry
    profile targets, mlm_targets/mlm_mask the original tokens at masked
    positions. Unused target fields may be None.
    """

    tokens: np.ndarray                      # (B, T) int64
    lengths: np.ndarray                     # (B,) int64
    labels: np.ndarray | None = None        # (B, T, 20)
    label_mask: np.ndarray | None = None    # (B, T) bool
    mlm_targets: np.ndarray | None = None   # (B, T) int64
    mlm_mask: np.ndarray | None = None      # (B, T) bool
    ids: tuple[str, ...] = field(default_factory=tuple)


def _check_tokens(config: ModelConfig, tokens: np.ndarray) -> None:
    if tokens.ndim != 2 or tokens.size == 0:
        raise ShapeMismatchError(f"tokens must be non-empty (B, T), got {tokens.shape}")
    if tokens.shape[1] > config.max_positions:
        raise LengthExceededError(
            f"sequence length {tokens.shape[1]} exceeds "
            f"max_positions {config.max_positions}")
    if tokens.min() < 0 or tokens.max() >= config.vocab_size:
        raise TokenOutOfRangeError(
            f"token ids must lie in [0, {config.vocab_size})")


def _layer_norm_fwd(x, scale, offset):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * scale + offset, (xhat, inv)


def _layer_norm_bwd(dy, cache, scale):
    xhat, inv = cache
    dscale = np.sum(dy * xhat, axis=tuple(range(dy.ndim - 1)))
    doffset = np.sum(dy, axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * scale
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = np.mean(dxhat * xhat, axis=-1, keepdims=True)
    dx = inv * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat)
    return dx, dscale, doffset


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return cdf + x * pdf


def _softmax_last(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _log_softmax_last(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _dropout_mask(rng, shape, rate, dtype):
    return (rng.random(shape) >= rate).astype(dtype) / (1.0 - rate)


def _forward_trunk(params: ModelParams, tokens: np.ndarray,
                   train: bool, rng) -> tuple[np.ndarray, dict]:
    config = params.config
    _check_tokens(config, tokens)
    dtype = params.dtype
    B, T = tokens.shape
    H, Dh = config.num_heads, config.head_dim
    use_dropout = train and config.dropout_rate > 0.0
    if use_dropout and rng is None:
        raise InvalidConfigError("train-mode forward with dropout needs an rng")

    pad_mask = tokens != PAD_ID                      # (B, T) True at real tokens
    attn_bias = np.where(pad_mask[:, None, None, :], 0.0, _NEG_BIAS).astype(dtype)

    cache: dict = {"tokens": tokens, "pad_mask": pad_mask, "layers": [],
                   "dropout_masks": {}}

    x = params["token_embed"][tokens] + params["pos_embed"][:T][None, :, :]
    x, ln_cache = _layer_norm_fwd(x, params["embed_ln.scale"],
                                  params["embed_ln.offset"])
    cache["embed_ln"] = ln_cache
    if use_dropout:
        mask = _dropout_mask(rng, x.shape, config.dropout_rate, dtype)
        cache["dropout_masks"]["embed"] = mask
        x = x * mask

    inv_sqrt_dh = np.asarray(1.0 / np.sqrt(Dh), dtype=dtype)

    for i in range(config.num_layers):
        p = f"layer{i}"
        lc: dict = {"x_in": x}

        def split_heads(t):
            return t.reshape(B, T, H, Dh).transpose(0, 2, 1, 3)

        q = split_heads(x @ params[f"{p}.attn.wq"] + params[f"{p}.attn.bq"])
        k = split_heads(x @ params[f"{p}.attn.wk"] + params[f"{p}.attn.bk"])
        v = split_heads(x @ params[f"{p}.attn.wv"] + params[f"{p}.attn.bv"])
        scores = (q @ k.transpose(0, 1, 3, 2)) * inv_sqrt_dh + attn_bias
        probs = _softmax_last(scores)
        ctx = (probs @ v).transpose(0, 2, 1, 3).reshape(B, T, -1)
        attn_out = ctx @ params[f"{p}.attn.wo"] + params[f"{p}.attn.bo"]
        if use_dropout:
            mask = _dropout_mask(rng, attn_out.shape, config.dropout_rate, dtype)
            cache["dropout_masks"][f"{p}.attn"] = mask
            attn_out = attn_out * mask
        lc.update(q=q, k=k, v=v, probs=probs, ctx=ctx)
        x, lc["ln1"] = _layer_norm_fwd(x + attn_out, params[f"{p}.ln1.scale"],
                                       params[f"{p}.ln1.offset"])
        lc["x_mid"] = x

        u = x @ params[f"{p}.ff.w1"] + params[f"{p}.ff.b1"]
        a = _gelu(u)
        y = a @ params[f"{p}.ff.w2"] + params[f"{p}.ff.b2"]
        if use_dropout:
            mask = _dropout_mask(rng, y.shape, config.dropout_rate, dtype)
            cache["dropout_masks"][f"{p}.ff"] = mask
            y = y * mask
        lc.update(u=u, a=a)
        x, lc["ln2"] = _layer_norm_fwd(x + y, params[f"{p}.ln2.scale"],
                                       params[f"{p}.ln2.offset"])
        cache["layers"].append(lc)

    cache["hidden"] = x
    return x, cache


def forward(params: ModelParams, tokens, train: bool = False, rng=None,
            return_attention: bool = False) -> ForwardOutput:
    """Run the encoder and both heads on a padded (B, T) token batch."""
    tokens = np.asarray(tokens, dtype=np.int64)
    hidden, cache = _forward_trunk(params, tokens, train, rng)
    vocab_logits = hidden @ params["vocab_head.w"] + params["vocab_head.b"]
    profile_logits = hidden @ params["profile_head.w"] + params["profile_head.b"]
    profile_probs = _softmax_last(profile_logits)
    attention = [lc["probs"] for lc in cache["layers"]] if return_attention else None
    return ForwardOutput(hidden_states=hidden, vocab_logits=vocab_logits,
                         profile_probs=profile_probs, attention=attention)


def _check_objective(objective: str) -> None:
    if objective not in OBJECTIVES:
        raise InvalidConfigError(
            f"objective must be one of {OBJECTIVES}, got {objective!r}")


def _loss_terms(params: ModelParams, batch: Batch, hidden: np.ndarray,
                objective: str, mlm_normalize: str):
    """Per-head losses and logit gradients (before mixing weights).

    Both losses average per-sequence values over the batch; inside one
    sequence the divisor is the residue count n (also for the masked-token
    loss, matching the stated 1/n normalization) unless mlm_normalize is
    "mask".
    """
    B = batch.tokens.shape[0]
    lengths = np.asarray(batch.lengths, dtype=np.float64)
    result = {}

    if objective in ("pp", "joint"):
        if batch.labels is None or batch.label_mask is None:
            raise ShapeMismatchError("profile objective needs labels and label_mask")
        logits = hidden @ params["profile_head.w"] + params["profile_head.b"]
        log_q = _log_softmax_last(logits)
        q = np.exp(log_q)
        l = batch.labels
        mask = batch.label_mask
        log_l = np.where(l > 0, np.log(np.where(l > 0, l, 1.0)), 0.0)
        kl = np.where(l > 0, l * (log_l - log_q), 0.0).sum(axis=-1)  # (B, T)
        per_seq = (kl * mask).sum(axis=1) / lengths
        pp_loss = per_seq.mean()
        scale = (mask / (lengths[:, None] * B)).astype(hidden.dtype)
        dlogits = (q - l) * scale[:, :, None]
        result["pp"] = (float(pp_loss), dlogits.astype(hidden.dtype), q)

    if objective in ("mlm", "joint"):
        if batch.mlm_targets is None or batch.mlm_mask is None:
            raise ShapeMismatchError("masked objective needs mlm_targets and mlm_mask")
        logits = hidden @ params["vocab_head.w"] + params["vocab_head.b"]
        log_p = _log_softmax_last(logits)
        mask = batch.mlm_mask
        onehot = np.zeros(logits.shape, dtype=hidden.dtype)
        bidx, tidx = np.nonzero(mask)
        onehot[bidx, tidx, batch.mlm_targets[bidx, tidx]] = 1.0
        nll = -(log_p * onehot).sum(axis=-1)  # (B, T), zero off-mask
        if mlm_normalize == "length":
            denom = lengths
        else:
            denom = np.maximum(mask.sum(axis=1).astype(np.float64), 1.0)
        per_seq = (nll * mask).sum(axis=1) / denom
        mlm_loss_value = per_seq.mean()
        scale = (mask / (denom[:, None] * B)).astype(hidden.dtype)
        dlogits = (np.exp(log_p) - onehot) * scale[:, :, None]
        result["mlm"] = (float(mlm_loss_value), dlogits.astype(hidden.dtype), None)

    return result


def compute_loss(params: ModelParams, batch: Batch, objective: str,
                 lam: float = 0.5, train: bool = False, rng=None,
                 mlm_normalize: str = "length"):
    """Forward pass plus the selected loss. Returns (loss, parts dict)."""
    _check_objective(objective)
    hidden, _ = _forward_trunk(params, np.asarray(batch.tokens, np.int64),
                               train, rng)
    terms = _loss_terms(params, batch, hidden, objective, mlm_normalize)
    return _mix_losses(terms, objective, lam)


def _mix_losses(terms, objective: str, lam: float):
    parts = {}
    if objective == "pp":
        loss = terms["pp"][0]
        parts["pp"] = terms["pp"][0]
    elif objective == "mlm":
        loss = terms["mlm"][0]
        parts["mlm"] = terms["mlm"][0]
    else:
        if not 0.0 <= lam <= 1.0:
            raise InvalidConfigError(f"lambda {lam} outside [0, 1]")
        parts["mlm"] = terms["mlm"][0]
        parts["pp"] = terms["pp"][0]
        loss = lam * parts["mlm"] + (1.0 - lam) * parts["pp"]
    parts["loss"] = float(loss)
    return float(loss), parts


def _backward_trunk(params: ModelParams, cache: dict,
                    dhidden: np.ndarray, grads: dict) -> None:
    """Accumulate trunk gradients from d(hidden) into grads (in place)."""
    config = params.config
    tokens = cache["tokens"]
    B, T = tokens.shape
    H, Dh = config.num_heads, config.head_dim
    dmasks = cache["dropout_masks"]
    dx = dhidden

    for i in reversed(range(config.num_layers)):
        p = f"layer{i}"
        lc = cache["layers"][i]

        # x_out = LN2(x_mid + y)
        dres, dscale, doffset = _layer_norm_bwd(dx, lc["ln2"],
                                                params[f"{p}.ln2.scale"])
        grads[f"{p}.ln2.scale"] += dscale
        grads[f"{p}.ln2.offset"] += doffset
        dy = dres
        if f"{p}.ff" in dmasks:
            dy = dy * dmasks[f"{p}.ff"]
        a_flat = lc["a"].reshape(B * T, -1)
        dy_flat = dy.reshape(B * T, -1)
        grads[f"{p}.ff.w2"] += a_flat.T @ dy_flat
        grads[f"{p}.ff.b2"] += dy_flat.sum(axis=0)
        da = dy @ params[f"{p}.ff.w2"].T
        du = da * _gelu_grad(lc["u"])
        xm_flat = lc["x_mid"].reshape(B * T, -1)
        du_flat = du.reshape(B * T, -1)
        grads[f"{p}.ff.w1"] += xm_flat.T @ du_flat
        grads[f"{p}.ff.b1"] += du_flat.sum(axis=0)
        dx_mid = dres + du @ params[f"{p}.ff.w1"].T

        # x_mid = LN1(x_in + attn_out)
        dres, dscale, doffset = _layer_norm_bwd(dx_mid, lc["ln1"],
                                                params[f"{p}.ln1.scale"])
        grads[f"{p}.ln1.scale"] += dscale
        grads[f"{p}.ln1.offset"] += doffset
        dattn_out = dres
        if f"{p}.attn" in dmasks:
            dattn_out = dattn_out * dmasks[f"{p}.attn"]
        ctx_flat = lc["ctx"].reshape(B * T, -1)
        dout_flat = dattn_out.reshape(B * T, -1)
        grads[f"{p}.attn.wo"] += ctx_flat.T @ dout_flat
        grads[f"{p}.attn.bo"] += dout_flat.sum(axis=0)
        dctx = (dattn_out @ params[f"{p}.attn.wo"].T) \
            .reshape(B, T, H, Dh).transpose(0, 2, 1, 3)

        probs, q, k, v = lc["probs"], lc["q"], lc["k"], lc["v"]
        dprobs = dctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ dctx
        dscores = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True))
        inv_sqrt_dh = 1.0 / np.sqrt(Dh)
        dq = (dscores @ k) * inv_sqrt_dh
        dk = (dscores.transpose(0, 1, 3, 2) @ q) * inv_sqrt_dh

        def merge_heads(t):
            return t.transpose(0, 2, 1, 3).reshape(B, T, -1)

        x_in = lc["x_in"]
        x_flat = x_in.reshape(B * T, -1)
        dx_in = dres
        for name, dproj in (("wq", dq), ("wk", dk), ("wv", dv)):
            dflat = merge_heads(dproj).reshape(B * T, -1)
            grads[f"{p}.attn.{name}"] += x_flat.T @ dflat
            grads[f"{p}.attn.b{name[1]}"] += dflat.sum(axis=0)
            dx_in = dx_in + (dflat @ params[f"{p}.attn.{name}"].T).reshape(B, T, -1)
        dx = dx_in

    if "embed" in dmasks:
        dx = dx * dmasks["embed"]
    dx, dscale, doffset = _layer_norm_bwd(dx, cache["embed_ln"],
                                          params["embed_ln.scale"])
    grads["embed_ln.scale"] += dscale
    grads["embed_ln.offset"] += doffset
    grads["pos_embed"][:T] += dx.sum(axis=0)
    np.add.at(grads["token_embed"], tokens, dx)


def backward(params: ModelParams, batch: Batch, objective: str,
             lam: float = 0.5, train: bool = False, rng=None,
             mlm_normalize: str = "length"):
    """Loss and exact analytic gradients for every parameter tensor.

    Returns (loss, grads dict keyed like params, parts dict).
    """
    _check_objective(objective)
    tokens = np.asarray(batch.tokens, dtype=np.int64)
    hidden, cache = _forward_trunk(params, tokens, train, rng)
    terms = _loss_terms(params, batch, hidden, objective, mlm_normalize)
    loss, parts = _mix_losses(terms, objective, lam)

    dtype = params.dtype
    grads = {name: np.zeros_like(t) for name, t in params.items()}
    B, T = tokens.shape
    dhidden = np.zeros_like(hidden)
    h_flat = hidden.reshape(B * T, -1)

    if objective == "pp":
        weights = {"pp": 1.0}
    elif objective == "mlm":
        weights = {"mlm": 1.0}
    else:
        weights = {"mlm": lam, "pp": 1.0 - lam}

    if "pp" in weights:
        dlogits = terms["pp"][1] * dtype.type(weights["pp"])
        dl_flat = dlogits.reshape(B * T, -1)
        grads["profile_head.w"] += h_flat.T @ dl_flat
        grads["profile_head.b"] += dl_flat.sum(axis=0)
        dhidden += dlogits @ params["profile_head.w"].T
    if "mlm" in weights:
        dlogits = terms["mlm"][1] * dtype.type(weights["mlm"])
        dl_flat = dlogits.reshape(B * T, -1)
        grads["vocab_head.w"] += h_flat.T @ dl_flat
        grads["vocab_head.b"] += dl_flat.sum(axis=0)
        dhidden += dlogits @ params["vocab_head.w"].T

    _backward_trunk(params, cache, dhidden, grads)
    return loss, grads, parts


@dataclass
class GradCheckReport:
    """Per-tensor maximum relative error of analytic vs numeric gradients."""

    objective: str
    tolerance: float
    max_rel_error: dict[str, float]
    worst_entry: dict[str, tuple]

    @property
    def overall_max(self) -> float:
        return max(self.max_rel_error.values())

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_error.values())

    def format(self) -> str:
        lines = [f"# gradient check: objective={self.objective} "
                 f"tolerance={self.tolerance:g}"]
        for name in sorted(self.max_rel_error):
            err = self.max_rel_error[name]
            status = "ok" if err < self.tolerance else "FAIL"
            lines.append(f"{name}\t{err:.3e}\t{status}")
        lines.append(f"overall\t{self.overall_max:.3e}\t"
                     f"{'ok' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _fd_sweep(params64: ModelParams, batch: Batch, analytic_by_obj: dict,
              lam: float, epsilon: float, mlm_normalize: str):
    """One central-difference pass checking any subset of the objectives.

    A joint forward yields both loss components, so a single sweep prices
    pp, mlm, and joint simultaneously. Returns per-objective
    (max_rel_error, worst_entry) dicts.
    """
    objectives = list(analytic_by_obj)
    max_err = {obj: {} for obj in objectives}
    worst = {obj: {} for obj in objectives}
    # evaluate only the heads the requested objectives need
    probe = objectives[0] if len(objectives) == 1 else "joint"

    def losses_at_point():
        loss, parts = compute_loss(params64, batch, probe, lam=lam,
                                   mlm_normalize=mlm_normalize)
        parts = dict(parts)
        parts["joint"] = parts["loss"] if probe == "joint" else None
        parts[probe] = parts.get(probe, loss)
        return parts

    for name, tensor in params64.items():
        flat = tensor.reshape(-1)
        a_flats = {obj: analytic_by_obj[obj][name].reshape(-1)
                   for obj in objectives}
        err_max = {obj: 0.0 for obj in objectives}
        err_idx = {obj: 0 for obj in objectives}
        for idx in range(flat.size):
            orig = flat[idx]
            h = epsilon * max(abs(orig), epsilon)
            flat[idx] = orig + h
            plus = losses_at_point()
            flat[idx] = orig - h
            minus = losses_at_point()
            flat[idx] = orig
            for obj in objectives:
                numeric = (plus[obj] - minus[obj]) / (2.0 * h)
                a = a_flats[obj][idx]
                rel = abs(a - numeric) / max(abs(a) + abs(numeric), 1e-3)
                if rel > err_max[obj]:
                    err_max[obj], err_idx[obj] = rel, idx
        for obj in objectives:
            max_err[obj][name] = err_max[obj]
            worst[obj][name] = (err_idx[obj], float(a_flats[obj][err_idx[obj]]))
    return max_err, worst


def grad_check(params: ModelParams, batch: Batch, objective: str,
               lam: float = 0.5, tolerance: float = 1e-3,
               epsilon: float = 1e-3,
               mlm_normalize: str = "length") -> GradCheckReport:
    """Central-difference check of every gradient entry, in float64.

    The step is epsilon scaled by the entry's magnitude (floored at
    epsilon itself, so zero-valued entries still move); the relative error
    denominator is floored at 1e-3 so entries whose true gradient is zero
    compare against finite-difference noise in absolute terms.
    """
    _check_objective(objective)
    params64 = params.astype(np.float64)
    _, analytic, _ = backward(params64, batch, objective, lam=lam,
                              train=False, mlm_normalize=mlm_normalize)
    max_err, worst = _fd_sweep(params64, batch, {objective: analytic},
                               lam, epsilon, mlm_normalize)
    return GradCheckReport(objective=objective, tolerance=tolerance,
                           max_rel_error=max_err[objective],
                           worst_entry=worst[objective])


def grad_check_all(params: ModelParams, batch: Batch, lam: float = 0.5,
                   tolerance: float = 1e-3, epsilon: float = 1e-3,
                   mlm_normalize: str = "length") -> dict[str, GradCheckReport]:
    """Check pp, mlm, and joint gradients in one finite-difference sweep."""
    params64 = params.astype(np.float64)
    analytic_by_obj = {}
    for objective in OBJECTIVES:
        _, analytic, _ = backward(params64, batch, objective, lam=lam,
                                  train=False, mlm_normalize=mlm_normalize)
        analytic_by_obj[objective] = analytic
    max_err, worst = _fd_sweep(params64, batch, analytic_by_obj, lam,
                               epsilon, mlm_normalize)
    return {obj: GradCheckReport(objective=obj, tolerance=tolerance,
                                 max_rel_error=max_err[obj],
                                 worst_entry=worst[obj])
            for obj in OBJECTIVES}
