"""Pre-training losses: profile KL, masked-token cross-entropy, joint mix.

The profile loss averages KL(label || prediction) over residue positions.
The masked-token loss follows the 1/n normalization (sequence length, not
mask size); dividing by the mask size instead is available behind a flag.
The joint loss mixes the two with a weight lambda that can be fixed or
auto-balanced so that lambda * L_mlm tracks (1 - lambda) * L_pp.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .alphabet import ALPHABET_SIZE, MASK_ID
from .exceptions import (
    EmptyMaskError,
    NonPositiveLossError,
    ShapeMismatchError,
)
from .labels import LabelSequence
from .seeding import derive_rng
from .validation import check_prob_vector

DEFAULT_MASK_RATE = 0.15
DEFAULT_ACTION_SPLIT = (0.8, 0.1, 0.1)  # mask token / random residue / keep


def kl_divergence(p, q) -> float:
    """KL(p || q) = sum_s p_s (log p_s - log q_s), with 0 log 0 = 0.

    p may contain zeros; q must be strictly positive (model outputs come
    through a normalized exponential). Both must sum to 1 within 1e-6.
    """
    p = check_prob_vector(p, ALPHABET_SIZE, 1e-6, "p")
    q = check_prob_vector(q, ALPHABET_SIZE, 1e-6, "q", require_positive=True)
    support = p > 0.0
    ps = p[support]
    return float(np.sum(ps * (np.log(ps) - np.log(q[support]))))


def profile_loss(predictions, labels) -> float:
    """Mean over residue positions of KL(label_i || prediction_i)."""
    target = labels.labels if isinstance(labels, LabelSequence) else np.asarray(
        labels, dtype=np.float64)
    pred = np.asarray(predictions, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatchError(
            f"predictions {pred.shape} vs labels {target.shape}")
    total = 0.0
    for i in range(target.shape[0]):
        total += kl_divergence(target[i], pred[i])
    return total / target.shape[0]


def batch_profile_loss(pairs) -> float:
    """Mean over sequences of per-sequence profile losses."""
    losses = [profile_loss(pred, lab) for pred, lab in pairs]
    if not losses:
        raise ShapeMismatchError("empty batch")
    return float(np.mean(losses))


@dataclass(frozen=True)
class MaskingPolicy:
    """Masking fractions for the masked-token objective.

    Of all positions, mask_rate are selected; selected positions are
    replaced by the mask token, replaced by a random residue, or kept, with
    the given action split. The split must sum to 1.
    """

    mask_rate: float = DEFAULT_MASK_RATE
    action_split: tuple[float, float, float] = DEFAULT_ACTION_SPLIT
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError(f"mask_rate {self.mask_rate} outside (0, 1)")
        if any(a < 0 for a in self.action_split):
            raise ValueError("action split has negative entries")
        if abs(sum(self.action_split) - 1.0) > 1e-9:
            raise ValueError(f"action split {self.action_split} does not sum to 1")


def apply_masking(tokens, policy: MaskingPolicy, rng):
    """Corrupt a token sequence for the masked-token objective.

    rng is either a Generator or an integer sequence index, which is
    combined with policy.seed so the result is a pure function of
    (seed, sequence index, tokens). A draw that selects no position forces
    one uniformly chosen position into the mask set.

    Returns (corrupted tokens, sorted array of masked positions).
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.ndim != 1 or tokens.size == 0:
        raise ShapeMismatchError("tokens must be a non-empty 1-d sequence")
    if isinstance(rng, (int, np.integer)):
        rng = derive_rng(policy.seed, "mask", int(rng))
    n = tokens.size
    selected = rng.random(n) < policy.mask_rate
    action_draws = rng.random(n)
    random_residues = rng.integers(0, ALPHABET_SIZE, size=n)
    if not selected.any():
        selected[int(rng.integers(0, n))] = True
    corrupted = tokens.copy()
    p_mask, p_random, _ = policy.action_split
    use_mask = selected & (action_draws < p_mask)
    use_random = selected & (action_draws >= p_mask) & (action_draws < p_mask + p_random)
    corrupted[use_mask] = MASK_ID
    corrupted[use_random] = random_residues[use_random]
    return corrupted, np.flatnonzero(selected)


def mlm_loss(logits, targets, sequence_length: int,
             normalize: str = "length") -> float:
    """Cross-entropy of true tokens at masked positions.

    logits has one row per masked position. normalize "length" divides by
    the sequence length n; "mask" divides by the number of masked
    positions.
    """
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeMismatchError(
            f"logits {logits.shape} vs targets {targets.shape}")
    if logits.shape[0] == 0:
        raise EmptyMaskError("no masked positions")
    if normalize not in ("length", "mask"):
        raise ValueError(f"unknown normalization {normalize!r}")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted[np.arange(len(targets)), targets] - log_z
    denom = sequence_length if normalize == "length" else len(targets)
    return float(-log_probs.sum() / denom)


@dataclass
class JointLossConfig:
    """Mixing-weight policy for the joint objective.

    Policy "fixed" uses fixed_lambda throughout. Policy "auto" keeps
    exponential running means of both losses (decay 0.99) and, once per
    window of steps, sets lambda = pp / (mlm + pp) so the two weighted
    terms balance; lambda is frozen between calibrations.
    """

    lambda_policy: str = "auto"
    fixed_lambda: float = 0.5
    window: int = 100
    decay: float = 0.99
    running_mlm: float | None = None
    running_pp: float | None = None
    lam: float = 0.5
    steps_observed: int = 0

    def __post_init__(self):
        if self.lambda_policy not in ("auto", "fixed"):
            raise ValueError(f"unknown lambda policy {self.lambda_policy!r}")
        if not 0.0 <= self.fixed_lambda <= 1.0:
            raise ValueError(f"fixed lambda {self.fixed_lambda} outside [0, 1]")
        if self.lambda_policy == "fixed":
            self.lam = self.fixed_lambda

    def observe(self, mlm: float, pp: float) -> None:
        """Record one step's losses; recalibrate at window boundaries."""
        if self.running_mlm is None:
            self.running_mlm = float(mlm)
            self.running_pp = float(pp)
        else:
            self.running_mlm = self.decay * self.running_mlm + (1 - self.decay) * float(mlm)
            self.running_pp = self.decay * self.running_pp + (1 - self.decay) * float(pp)
        self.steps_observed += 1
        if self.lambda_policy == "auto" and self.steps_observed % self.window == 0:
            self.lam = calibrate_lambda(self.running_mlm, self.running_pp)


def calibrate_lambda(running_mlm: float, running_pp: float) -> float:
    """Balance weight: lambda * mlm == (1 - lambda) * pp exactly."""
    if running_mlm <= 0 or running_pp <= 0:
        raise NonPositiveLossError(
            f"running means must be > 0, got mlm={running_mlm} pp={running_pp}")
    return running_pp / (running_mlm + running_pp)


def joint_loss(mlm: float, pp: float, config: JointLossConfig):
    """lambda * mlm + (1 - lambda) * pp with the currently active lambda.

    Returns (loss, lambda applied this step).
    """
    lam = config.lam
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda {lam} outside [0, 1]")
    return lam * mlm + (1.0 - lam) * pp, lam
