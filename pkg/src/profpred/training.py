"""Pre-training loop: schedule, Adam, token-budget batching, checkpoints.

Every source of randomness is derived functionally from (seed, purpose,
counters), so a run is a pure function of (config, corpus) and resuming
from a serialized TrainState reproduces the remaining metrics log
byte-for-byte.
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .alphabet import PAD_ID, ALPHABET_SIZE, encode_sequence
from .checkpoint import (
    PPTS_MAGIC,
    read_tensor_container,
    save_checkpoint,
    write_tensor_container,
)
from .exceptions import (
    ConfigMismatchError,
    MalformedRecordError,
    NonFiniteGradientError,
    RecordTooLongError,
    ShapeMismatchError,
)
from .labels import LabelSequence, read_labels
from .losses import JointLossConfig, MaskingPolicy, apply_masking
from .model import Batch, ModelConfig, ModelParams, backward, compute_loss, init_params
from .msa import parse_aligned_fasta
from .seeding import derive_rng, stable_id_hash

LR_DEFAULTS = {"pp": 0.00025, "mlm": 0.0001, "joint": 0.0001}


@dataclass(frozen=True)
class TrainConfig:
    """Pre-training hyperparameters.

    peak_lr None resolves to the per-objective default (0.00025 for the
    profile objective, 0.0001 otherwise).
    """

    objective: str = "pp"
    peak_lr: float | None = None
    warmup_steps: int = 100
    max_epochs: int = 10
    max_steps: int | None = None
    max_tokens_per_batch: int = 2048
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    checkpoint_interval: int = 200
    log_interval: int = 10
    holdout_fraction: float = 0.05
    mask_rate: float = 0.15
    lambda_policy: str = "auto"
    fixed_lambda: float = 0.5
    lambda_window: int = 100
    mlm_normalize: str = "length"
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.objective not in LR_DEFAULTS:
            raise ValueError(f"unknown objective {self.objective!r}")
        if self.warmup_steps < 1:
            raise ValueError("warmup_steps must be >= 1")
        if self.peak_lr is not None and self.peak_lr <= 0:
            raise ValueError("peak_lr must be > 0")
        if not 0.0 <= self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction outside [0, 1)")

    @property
    def resolved_lr(self) -> float:
        return self.peak_lr if self.peak_lr is not None else LR_DEFAULTS[self.objective]

    def to_dict(self) -> dict:
        data = {
            "objective": self.objective,
            "peak_lr": self.peak_lr,
            "warmup_steps": self.warmup_steps,
            "max_epochs": self.max_epochs,
            "max_steps": self.max_steps,
            "max_tokens_per_batch": self.max_tokens_per_batch,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_eps": self.adam_eps,
            "seed": self.seed,
            "checkpoint_interval": self.checkpoint_interval,
            "log_interval": self.log_interval,
            "holdout_fraction": self.holdout_fraction,
            "mask_rate": self.mask_rate,
            "lambda_policy": self.lambda_policy,
            "fixed_lambda": self.fixed_lambda,
            "lambda_window": self.lambda_window,
            "mlm_normalize": self.mlm_normalize,
            "model": self.model.to_dict(),
        }
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        data["model"] = ModelConfig.from_dict(data["model"])
        return cls(**data)


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Linear ramp 0 -> peak over warmup_steps, constant afterwards."""
    peak = config.resolved_lr
    if step >= config.warmup_steps:
        return peak
    return peak * step / config.warmup_steps


def init_adam_moments(params: ModelParams):
    m = {name: np.zeros_like(t) for name, t in params.items()}
    v = {name: np.zeros_like(t) for name, t in params.items()}
    return m, v


def adam_step_tensors(tensors: dict, grads: dict, m: dict, v: dict,
                      step: int, lr: float, beta1: float = 0.9,
                      beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam over a plain name->tensor dict, in place.

    step is the 1-based update count. Raises NonFiniteGradientError
    (naming the tensor) before touching any state if a gradient contains
    NaN or Inf.
    """
    for name in tensors:
        if not np.isfinite(grads[name]).all():
            raise NonFiniteGradientError(name)
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for name, tensor in tensors.items():
        g = grads[name]
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * (g * g)
        m_hat = m[name] / bc1
        v_hat = v[name] / bc2
        tensor -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_update(params: ModelParams, grads: dict, moments, step: int,
                lr: float, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> None:
    """Adam step over a ModelParams collection, in place."""
    m, v = moments
    adam_step_tensors(params.tensors, grads, m, v, step, lr, beta1, beta2, eps)


def make_dynamic_batches(lengths, max_tokens: int, rng=None) -> list[list[int]]:
    """Greedy token-budget packing.

    Records are visited in rng-shuffled order (input order when rng is
    None) and packed so that batch_size * max_length_in_batch, padding
    included, never exceeds max_tokens.
    """
    lengths = list(lengths)
    for i, n in enumerate(lengths):
        if n > max_tokens:
            raise RecordTooLongError(
                f"record {i} has length {n} > budget {max_tokens}")
    order = np.arange(len(lengths))
    if rng is not None:
        rng.shuffle(order)
    batches: list[list[int]] = []
    current: list[int] = []
    current_max = 0
    for idx in order:
        n = lengths[idx]
        new_max = max(current_max, n)
        if current and (len(current) + 1) * new_max > max_tokens:
            batches.append(current)
            current, current_max = [], 0
            new_max = n
        current.append(int(idx))
        current_max = new_max
    if current:
        batches.append(current)
    return batches


@dataclass(frozen=True)
class TrainingRecord:
    """One pre-training example: token ids plus per-residue target rows."""

    id: str
    tokens: np.ndarray           # (n,) int64
    labels: np.ndarray           # (n, 20) float32
    states: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "tokens",
                           np.ascontiguousarray(self.tokens, dtype=np.int64))
        object.__setattr__(self, "labels",
                           np.ascontiguousarray(self.labels, dtype=np.float32))
        if self.labels.shape != (self.tokens.shape[0], ALPHABET_SIZE):
            raise ShapeMismatchError(
                f"record {self.id!r}: labels {self.labels.shape} do not match "
                f"{self.tokens.shape[0]} tokens")

    @property
    def length(self) -> int:
        return self.tokens.shape[0]


def records_from_labels(sequences: dict[str, str],
                        labels: list[LabelSequence]) -> list[TrainingRecord]:
    """Join ungapped sequences with their label records by id."""
    out = []
    for lab in labels:
        if lab.id not in sequences:
            raise MalformedRecordError(f"no sequence for labelled id {lab.id!r}")
        tokens = encode_sequence(sequences[lab.id])
        if tokens.shape[0] != lab.n:
            raise MalformedRecordError(
                f"id {lab.id!r}: sequence length {tokens.shape[0]} != "
                f"label rows {lab.n}")
        out.append(TrainingRecord(id=lab.id, tokens=tokens, labels=lab.labels,
                                  states=lab.states))
    return out


def load_corpus(data_dir) -> list[TrainingRecord]:
    """Load a corpus directory of matching <stem>.fasta / <stem>.pplb pairs.

    Sequences come from degapped aligned-FASTA rows; label files supply the
    target rows. Ids must be unique across the whole corpus.
    """
    stems = sorted(
        name[:-5] for name in os.listdir(data_dir) if name.endswith(".pplb"))
    if not stems:
        raise MalformedRecordError(f"no .pplb files in {data_dir}")
    records: list[TrainingRecord] = []
    seen: set[str] = set()
    for stem in stems:
        fasta_path = os.path.join(data_dir, stem + ".fasta")
        if not os.path.exists(fasta_path):
            raise MalformedRecordError(f"missing {stem}.fasta for {stem}.pplb")
        with open(fasta_path, "rb") as fh:
            msa = parse_aligned_fasta(fh.read())
        seqs = {msa.ids[i]: msa.sequence_record(i + 1).residues
                for i in range(msa.k)}
        with open(os.path.join(data_dir, stem + ".pplb"), "rb") as fh:
            labels = read_labels(fh.read())
        for rec in records_from_labels(seqs, labels):
            if rec.id in seen:
                raise MalformedRecordError(f"duplicate id {rec.id!r} in corpus")
            seen.add(rec.id)
            records.append(rec)
    return records


def split_holdout(records: list[TrainingRecord], fraction: float):
    """Deterministic split by id hash; stable across runs and machines.

    With a positive fraction the held-out side is never left empty: the
    smallest-hash record moves over if the hash rule selected none.
    """
    if fraction <= 0.0:
        return list(records), []
    threshold = int(fraction * 10**6)
    train, held = [], []
    for rec in records:
        if stable_id_hash(rec.id) % 10**6 < threshold:
            held.append(rec)
        else:
            train.append(rec)
    if not held and train:
        idx = min(range(len(train)), key=lambda i: stable_id_hash(train[i].id))
        held.append(train.pop(idx))
    if not train:
        raise ShapeMismatchError("holdout fraction left no training records")
    return train, held


def assemble_batch(records: list[TrainingRecord], objective: str,
                   policy: MaskingPolicy | None, mask_rngs) -> Batch:
    """Pad records into one Batch; corrupt tokens for masked objectives."""
    B = len(records)
    T = max(r.length for r in records)
    tokens = np.full((B, T), PAD_ID, dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    labels = np.zeros((B, T, ALPHABET_SIZE), dtype=np.float32)
    label_mask = np.zeros((B, T), dtype=bool)
    for b, rec in enumerate(records):
        n = rec.length
        tokens[b, :n] = rec.tokens
        lengths[b] = n
        labels[b, :n] = rec.labels
        label_mask[b, :n] = True
    if objective == "pp":
        return Batch(tokens=tokens, lengths=lengths, labels=labels,
                     label_mask=label_mask,
                     ids=tuple(r.id for r in records))
    mlm_targets = tokens.copy()
    mlm_mask = np.zeros((B, T), dtype=bool)
    corrupted = tokens.copy()
    for b, rec in enumerate(records):
        n = rec.length
        new_tokens, masked = apply_masking(rec.tokens, policy, mask_rngs[b])
        corrupted[b, :n] = new_tokens
        mlm_mask[b, masked] = True
    return Batch(tokens=corrupted, lengths=lengths, labels=labels,
                 label_mask=label_mask, mlm_targets=mlm_targets,
                 mlm_mask=mlm_mask, ids=tuple(r.id for r in records))


@dataclass
class TrainState:
    """Resumable trainer state: counters, parameters, optimizer moments."""

    config: TrainConfig
    params: ModelParams
    adam_m: dict
    adam_v: dict
    joint: JointLossConfig
    step: int = 0
    epoch: int = 0
    batch_in_epoch: int = 0
    best_heldout: float = float("inf")
    corpus_digest: str = ""


def _corpus_digest(records: list[TrainingRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(rec.id.encode("utf-8"))
        h.update(rec.tokens.tobytes())
    return h.hexdigest()[:16]


def init_train_state(config: TrainConfig,
                     records: list[TrainingRecord]) -> TrainState:
    params = init_params(config.model)
    m, v = init_adam_moments(params)
    joint = JointLossConfig(lambda_policy=config.lambda_policy,
                            fixed_lambda=config.fixed_lambda,
                            window=config.lambda_window)
    return TrainState(config=config, params=params, adam_m=m, adam_v=v,
                      joint=joint, corpus_digest=_corpus_digest(records))


def serialize_state(state: TrainState) -> bytes:
    meta = {
        "train_config": state.config.to_dict(),
        "step": state.step,
        "epoch": state.epoch,
        "batch_in_epoch": state.batch_in_epoch,
        "best_heldout": state.best_heldout,
        "corpus_digest": state.corpus_digest,
        "joint": {
            "lambda_policy": state.joint.lambda_policy,
            "fixed_lambda": state.joint.fixed_lambda,
            "window": state.joint.window,
            "decay": state.joint.decay,
            "running_mlm": state.joint.running_mlm,
            "running_pp": state.joint.running_pp,
            "lam": state.joint.lam,
            "steps_observed": state.joint.steps_observed,
        },
    }
    tensors = dict(state.params.items())
    for name, t in state.adam_m.items():
        tensors[f"adam.m.{name}"] = t
    for name, t in state.adam_v.items():
        tensors[f"adam.v.{name}"] = t
    return write_tensor_container(PPTS_MAGIC, meta, tensors)


def deserialize_state(data) -> TrainState:
    meta, tensors = read_tensor_container(data, PPTS_MAGIC)
    config = TrainConfig.from_dict(meta["train_config"])
    param_tensors = {k: v for k, v in tensors.items() if not k.startswith("adam.")}
    params = ModelParams(config.model, param_tensors)
    m = {k[len("adam.m."):]: v for k, v in tensors.items()
         if k.startswith("adam.m.")}
    v_ = {k[len("adam.v."):]: v for k, v in tensors.items()
          if k.startswith("adam.v.")}
    joint = JointLossConfig(**meta["joint"])
    return TrainState(config=config, params=params, adam_m=m, adam_v=v_,
                      joint=joint, step=meta["step"], epoch=meta["epoch"],
                      batch_in_epoch=meta["batch_in_epoch"],
                      best_heldout=meta["best_heldout"],
                      corpus_digest=meta["corpus_digest"])


def save_state(path, state: TrainState) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize_state(state))


def load_state(path) -> TrainState:
    with open(path, "rb") as fh:
        return deserialize_state(fh.read())


def evaluate_heldout(state: TrainState, heldout: list[TrainingRecord]):
    """Deterministic held-out loss under the configured objective."""
    config = state.config
    if not heldout:
        return None
    policy = MaskingPolicy(mask_rate=config.mask_rate, seed=config.seed)
    batches = make_dynamic_batches([r.length for r in heldout],
                                   config.max_tokens_per_batch)
    losses, parts_acc = [], {"pp": [], "mlm": []}
    for batch_idxs in batches:
        recs = [heldout[i] for i in batch_idxs]
        rngs = [derive_rng(config.seed, "eval-mask", int(i)) for i in batch_idxs]
        batch = assemble_batch(recs, config.objective, policy, rngs)
        loss, parts = compute_loss(state.params, batch, config.objective,
                                   lam=state.joint.lam,
                                   mlm_normalize=config.mlm_normalize)
        losses.append((loss, len(recs)))
        for key in ("pp", "mlm"):
            if key in parts:
                parts_acc[key].append((parts[key], len(recs)))
    total = sum(n for _, n in losses)
    value = sum(l * n for l, n in losses) / total
    detail = {}
    for key, acc in parts_acc.items():
        if acc:
            detail[key] = sum(l * n for l, n in acc) / total
    return value, detail


@dataclass
class TrainResult:
    state: TrainState
    metrics_lines: list[str]
    heldout_lines: list[str]
    checkpoints: dict[str, str]


def _format_metrics_line(step, lr, lam, parts) -> str:
    mlm = parts.get("mlm", float("nan"))
    pp = parts.get("pp", float("nan"))
    return (f"{step}\t{lr:.8g}\t{lam:.8g}\t{mlm:.8g}\t{pp:.8g}"
            f"\t{parts['loss']:.8g}")


def pretrain(records: list[TrainingRecord], config: TrainConfig,
             out_dir=None, resume_state: TrainState | None = None) -> TrainResult:
    """Run the pre-training loop over a labelled corpus.

    Writes metrics.tsv, heldout.tsv, and interval/best/final checkpoints
    under out_dir when given. Passing resume_state continues a previous
    run; the remaining metrics lines match an uninterrupted run
    byte-for-byte.
    """
    if not records:
        raise ShapeMismatchError("empty corpus")
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    train, heldout = split_holdout(records, config.holdout_fraction)
    if resume_state is not None:
        state = resume_state
        if state.config.to_dict() != config.to_dict():
            raise ConfigMismatchError("resume state was produced by a different config")
        if state.corpus_digest != _corpus_digest(records):
            raise ConfigMismatchError("resume state was produced by a different corpus")
    else:
        state = init_train_state(config, records)
    policy = MaskingPolicy(mask_rate=config.mask_rate, seed=config.seed)
    lam_weight = 1.0 if config.objective == "mlm" else 0.0

    metrics_lines: list[str] = []
    heldout_lines: list[str] = []
    checkpoints: dict[str, str] = {}

    def emit_heldout(step):
        result = evaluate_heldout(state, heldout)
        if result is None:
            return None
        value, _ = result
        heldout_lines.append(f"{step}\t{value:.8g}")
        return value

    def save_files(tag):
        if out_dir is None:
            return
        ck = os.path.join(out_dir, f"checkpoint_{tag}.ppck")
        st = os.path.join(out_dir, f"state_{tag}.ppts")
        save_checkpoint(ck, state.params, {"step": state.step})
        save_state(st, state)
        checkpoints[tag] = ck

    done = False
    while state.epoch < config.max_epochs and not done:
        epoch = state.epoch
        shuffle_rng = derive_rng(config.seed, "shuffle", epoch)
        plan = make_dynamic_batches([r.length for r in train],
                                    config.max_tokens_per_batch, shuffle_rng)
        order_rng = derive_rng(config.seed, "batch-order", epoch)
        order = np.arange(len(plan))
        order_rng.shuffle(order)
        plan = [plan[i] for i in order]

        while state.batch_in_epoch < len(plan):
            batch_idxs = plan[state.batch_in_epoch]
            recs = [train[i] for i in batch_idxs]
            rngs = [derive_rng(config.seed, "mask", epoch, int(i))
                    for i in batch_idxs]
            batch = assemble_batch(recs, config.objective, policy, rngs)

            lam = state.joint.lam if config.objective == "joint" else lam_weight
            lr = lr_at_step(state.step, config)
            dropout_rng = derive_rng(config.seed, "dropout", state.step)
            try:
                loss, grads, parts = backward(
                    state.params, batch, config.objective, lam=lam,
                    train=True, rng=dropout_rng,
                    mlm_normalize=config.mlm_normalize)
                adam_update(state.params, grads, (state.adam_m, state.adam_v),
                            state.step + 1, lr, config.adam_beta1,
                            config.adam_beta2, config.adam_eps)
            except NonFiniteGradientError:
                save_files("abort")
                raise
            if config.objective == "joint":
                state.joint.observe(parts["mlm"], parts["pp"])
            state.step += 1
            state.batch_in_epoch += 1

            if state.step == 1 or state.step % config.log_interval == 0:
                metrics_lines.append(
                    _format_metrics_line(state.step, lr, lam, parts))
            if state.step % config.checkpoint_interval == 0:
                value = emit_heldout(state.step)
                save_files(f"{state.step:07d}")
                if value is not None and value < state.best_heldout:
                    state.best_heldout = value
                    save_files("best")
            if config.max_steps is not None and state.step >= config.max_steps:
                done = True
                break
        if not done:
            state.epoch += 1
            state.batch_in_epoch = 0

    if state.step % config.checkpoint_interval != 0:
        value = emit_heldout(state.step)
        if value is not None and value < state.best_heldout:
            state.best_heldout = value
            save_files("best")
    save_files("final")

    if out_dir is not None:
        with open(os.path.join(out_dir, "metrics.tsv"), "w") as fh:
            fh.write("# step\tlr\tlambda\tmlm\tpp\tloss\n")
            for line in metrics_lines:
                fh.write(line + "\n")
        with open(os.path.join(out_dir, "heldout.tsv"), "w") as fh:
            fh.write("# step\tloss\n")
            for line in heldout_lines:
                fh.write(line + "\n")
    return TrainResult(state=state, metrics_lines=metrics_lines,
                       heldout_lines=heldout_lines, checkpoints=checkpoints)
