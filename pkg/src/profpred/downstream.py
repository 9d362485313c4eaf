"""Fine-tuning on downstream task shapes and the evaluation metrics.

Each task shape gets a minimal linear head on the encoder trunk: per-token
classifier, mean-pooled classifier or regressor, or a symmetrized pairwise
contact scorer. Fine-tuning updates the whole model, not just the head.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .alphabet import PAD_ID, encode_sequence
from .checkpoint import (
    PPCK_MAGIC,
    load_checkpoint,
    read_tensor_container,
    write_tensor_container,
)
from .exceptions import (
    ConfigMismatchError,
    DegenerateInputError,
    EmptySplitError,
    LengthMismatchError,
    NoCandidatePairsError,
    ShapeMismatchError,
)
from .model import (
    ModelConfig,
    ModelParams,
    _backward_trunk,
    _forward_trunk,
    init_params,
)
from .seeding import derive_rng
from .synthgen import CONTACT_MIN_SEPARATION, TaskDataset, TaskExample
from .training import adam_step_tensors, make_dynamic_batches

DEFAULT_FINETUNE_LR = 0.0001

METRIC_NAMES = {
    "token_class": "token_accuracy",
    "seq_class": "accuracy",
    "seq_regression": "spearman_rho",
    "contact": "precision_at_l5",
}


# --- metrics ---

def spearman(predictions, targets) -> float:
    """Rank correlation with average ranks for ties.

    Constant inputs make the statistic undefined and raise
    DegenerateInputError rather than returning 0.
    """
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(targets, dtype=np.float64)
    if p.shape != t.shape or p.ndim != 1:
        raise LengthMismatchError(f"predictions {p.shape} vs targets {t.shape}")
    if p.size < 2:
        raise LengthMismatchError("need at least 2 points")
    if np.all(p == p[0]) or np.all(t == t[0]):
        raise DegenerateInputError("constant vector has no rank correlation")
    rp = rankdata(p)
    rt = rankdata(t)
    rp -= rp.mean()
    rt -= rt.mean()
    return float((rp * rt).sum() / np.sqrt((rp * rp).sum() * (rt * rt).sum()))


def token_accuracy(predictions, targets, valid_mask) -> float:
    """Fraction of valid positions predicted correctly; padding excluded."""
    p = np.asarray(predictions)
    t = np.asarray(targets)
    mask = np.asarray(valid_mask, dtype=bool)
    if p.shape != t.shape or p.shape != mask.shape:
        raise ShapeMismatchError(
            f"shapes differ: predictions {p.shape}, targets {t.shape}, "
            f"mask {mask.shape}")
    total = int(mask.sum())
    if total == 0:
        raise ShapeMismatchError("no valid positions")
    return float(((p == t) & mask).sum() / total)


def contact_precision_at_l5(scores, true_contacts, length: int,
                            min_separation: int = CONTACT_MIN_SEPARATION) -> float:
    """Precision of the top ceil(L/5) scored pairs at |i-j| >= separation.

    Ties break by (i, j) lexicographic order so the ranking is
    deterministic. Pair indices are 0-based with i < j.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2 or scores.shape[0] != scores.shape[1]:
        raise ShapeMismatchError(f"scores must be square, got {scores.shape}")
    if scores.shape[0] < length:
        raise ShapeMismatchError(
            f"scores cover {scores.shape[0]} positions, length is {length}")
    candidates = [(i, j) for i in range(length)
                  for j in range(i + min_separation, length)]
    if not candidates:
        raise NoCandidatePairsError(
            f"no pairs satisfy separation >= {min_separation} at length {length}")
    candidates.sort(key=lambda ij: (-scores[ij[0], ij[1]], ij[0], ij[1]))
    top_k = min(math.ceil(length / 5), len(candidates))
    truth = {(min(i, j), max(i, j)) for i, j in true_contacts}
    hits = sum(1 for ij in candidates[:top_k] if ij in truth)
    return hits / top_k


# --- task heads ---

@dataclass
class TaskHead:
    """Linear head tensors for one task shape."""

    task: str
    tensors: dict[str, np.ndarray]  # "w" and "b"

    @property
    def w(self) -> np.ndarray:
        return self.tensors["w"]

    @property
    def b(self) -> np.ndarray:
        return self.tensors["b"]


def init_head(task: str, config: ModelConfig, num_classes: int,
              seed: int) -> TaskHead:
    rng = derive_rng(seed, "task-head", task)
    d = config.hidden_dim
    if task == "token_class":
        w_shape = (d, num_classes)
        b_shape = (num_classes,)
    elif task == "seq_class":
        w_shape = (d, num_classes)
        b_shape = (num_classes,)
    elif task == "seq_regression":
        w_shape = (d, 1)
        b_shape = (1,)
    elif task == "contact":
        w_shape = (2 * d, 1)
        b_shape = (1,)
    else:
        raise ValueError(f"unknown task {task!r}")
    return TaskHead(task=task, tensors={
        "w": (0.02 * rng.standard_normal(w_shape)).astype(np.float32),
        "b": np.zeros(b_shape, dtype=np.float32),
    })


@dataclass
class EvalReport:
    """One evaluation result; to_line() is the results-file row."""

    task: str
    metric: str
    value: float
    train_size: int
    test_size: int
    checkpoint_id: str
    seed: int

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.value <= 1.0 + 1e-9:
            raise ShapeMismatchError(
                f"metric {self.metric} value {self.value} outside [-1, 1]")

    def to_line(self) -> str:
        return (f"{self.task}\t{self.metric}\t{self.value:.6f}\t"
                f"{self.train_size}\t{self.test_size}\t"
                f"{self.checkpoint_id}\t{self.seed}")


# --- batching over task examples ---

def _example_batches(examples: list[TaskExample], max_tokens: int, rng=None):
    lengths = [len(ex.residues) for ex in examples]
    return make_dynamic_batches(lengths, max_tokens, rng)


def _pad_tokens(examples: list[TaskExample]):
    B = len(examples)
    T = max(len(ex.residues) for ex in examples)
    tokens = np.full((B, T), PAD_ID, dtype=np.int64)
    lengths = np.zeros(B, dtype=np.int64)
    for b, ex in enumerate(examples):
        ids = encode_sequence(ex.residues)
        tokens[b, :len(ids)] = ids
        lengths[b] = len(ids)
    return tokens, lengths


def _softmax(x):
    s = x - x.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _contact_pair_set(examples: list[TaskExample], seed: int,
                      negative_ratio: int = 3):
    """Training pairs per example: all true contacts plus a deterministic
    sample of non-contact candidates."""
    out = []
    for ex in examples:
        n = len(ex.residues)
        truth = set(ex.label)
        candidates = [(i, j) for i in range(n)
                      for j in range(i + CONTACT_MIN_SEPARATION, n)]
        negatives = [c for c in candidates if c not in truth]
        rng = derive_rng(seed, "negatives", ex.id)
        take = min(len(negatives), max(negative_ratio * max(len(truth), 1), 4))
        if negatives:
            idx = rng.choice(len(negatives), size=take, replace=False)
            sampled = [negatives[i] for i in sorted(int(v) for v in idx)]
        else:
            sampled = []
        pairs = sorted(truth) + sampled
        labels = [1.0] * len(truth) + [0.0] * len(sampled)
        out.append((pairs, np.asarray(labels, dtype=np.float64)))
    return out


def _head_loss_and_grads(head: TaskHead, hidden: np.ndarray, lengths,
                         examples: list[TaskExample], pair_info=None):
    """Loss, head gradients, and d(hidden) for one batch."""
    B, T, D = hidden.shape
    dtype = hidden.dtype
    w, b = head.w, head.b
    dW = np.zeros_like(w)
    db = np.zeros_like(b)
    dhidden = np.zeros_like(hidden)
    valid = np.arange(T)[None, :] < np.asarray(lengths)[:, None]

    if head.task == "token_class":
        logits = hidden @ w + b
        probs = _softmax(logits)
        loss = 0.0
        dlogits = np.zeros_like(logits)
        for bi, ex in enumerate(examples):
            n = int(lengths[bi])
            target = np.asarray(ex.label[:n], dtype=np.int64)
            p = probs[bi, :n]
            loss += -np.log(np.maximum(p[np.arange(n), target], 1e-30)).sum() / n
            onehot = np.zeros_like(p)
            onehot[np.arange(n), target] = 1.0
            dlogits[bi, :n] = (p - onehot) / (n * B)
        loss /= B
        flat_h = hidden.reshape(B * T, D)
        flat_d = dlogits.reshape(B * T, -1)
        dW += flat_h.T @ flat_d
        db += flat_d.sum(axis=0)
        dhidden += dlogits @ w.T
        return float(loss), dW, db, dhidden

    if head.task in ("seq_class", "seq_regression"):
        denom = np.asarray(lengths, dtype=dtype)[:, None]
        pooled = (hidden * valid[:, :, None]).sum(axis=1) / denom
        logits = pooled @ w + b
        if head.task == "seq_class":
            probs = _softmax(logits)
            targets = np.asarray([ex.label for ex in examples], dtype=np.int64)
            loss = float(np.mean(
                -np.log(np.maximum(probs[np.arange(B), targets], 1e-30))))
            onehot = np.zeros_like(probs)
            onehot[np.arange(B), targets] = 1.0
            dlogits = (probs - onehot) / B
        else:
            targets = np.asarray([ex.label for ex in examples],
                                 dtype=np.float64)[:, None]
            diff = logits - targets
            loss = float(np.mean(diff ** 2))
            dlogits = (2.0 * diff / B).astype(dtype)
        dW += pooled.T @ dlogits
        db += dlogits.sum(axis=0)
        dpooled = dlogits @ w.T
        dhidden += dpooled[:, None, :] * (valid[:, :, None] / denom[:, None, :])
        return float(loss), dW, db, dhidden

    if head.task == "contact":
        # symmetrized concat scorer: s(i,j) = 0.5 (w.[h_i;h_j] + w.[h_j;h_i]) + b
        ws = 0.5 * (w[:D, 0] + w[D:, 0])
        loss = 0.0
        counted = 0
        for bi, ex in enumerate(examples):
            pairs, y = pair_info[bi]
            if not pairs:
                continue
            counted += 1
            hi = hidden[bi]
            s = np.array([float(ws @ (hi[i] + hi[j])) for i, j in pairs]) + b[0]
            p = _sigmoid(s)
            loss += float(np.mean(
                -(y * np.log(np.maximum(p, 1e-30))
                  + (1 - y) * np.log(np.maximum(1 - p, 1e-30)))))
            dscore = (p - y) / len(pairs)
            for (i, j), ds in zip(pairs, dscore):
                h_sum = hi[i] + hi[j]
                dW[:D, 0] += 0.5 * ds * h_sum
                dW[D:, 0] += 0.5 * ds * h_sum
                db[0] += ds
                dhidden[bi, i] += ds * ws
                dhidden[bi, j] += ds * ws
        scale = 1.0 / max(counted, 1)
        return (float(loss * scale), (dW * scale).astype(w.dtype),
                (db * scale).astype(b.dtype), (dhidden * scale).astype(dtype))

    raise ValueError(f"unknown task {head.task!r}")


# --- prediction and evaluation ---

def _hidden_states(params: ModelParams, tokens: np.ndarray) -> np.ndarray:
    hidden, _ = _forward_trunk(params, tokens, train=False, rng=None)
    return hidden


def contact_score_matrix(params: ModelParams, head: TaskHead,
                         residues: str) -> np.ndarray:
    """Symmetric (n, n) score matrix for one sequence."""
    tokens = encode_sequence(residues)[None, :]
    hidden = _hidden_states(params, tokens)[0]
    D = hidden.shape[1]
    ws = 0.5 * (head.w[:D, 0] + head.w[D:, 0])
    proj = hidden @ ws
    return proj[:, None] + proj[None, :] + head.b[0]


def evaluate(params: ModelParams, head: TaskHead, dataset: TaskDataset,
             split: str = "test", max_tokens: int = 2048,
             checkpoint_id: str = "unsaved", seed: int = 0) -> EvalReport:
    """Compute the task's metric over one split."""
    examples = dataset.split(split)
    if not examples:
        raise EmptySplitError(f"split {split!r} is empty")
    train_size = len(dataset.split("train"))
    test_size = len(dataset.split("test"))

    if dataset.task == "token_class":
        correct_parts, target_parts, mask_parts = [], [], []
        for batch_idx in _example_batches(examples, max_tokens):
            batch = [examples[i] for i in batch_idx]
            tokens, lengths = _pad_tokens(batch)
            hidden = _hidden_states(params, tokens)
            logits = hidden @ head.w + head.b
            preds = logits.argmax(axis=-1)
            T = tokens.shape[1]
            targets = np.zeros_like(preds)
            mask = np.arange(T)[None, :] < lengths[:, None]
            for bi, ex in enumerate(batch):
                targets[bi, :lengths[bi]] = ex.label
            correct_parts.append(preds)
            target_parts.append(targets)
            mask_parts.append(mask)
        flat_p = np.concatenate([p.ravel() for p in correct_parts])
        flat_t = np.concatenate([t.ravel() for t in target_parts])
        flat_m = np.concatenate([m.ravel() for m in mask_parts])
        value = token_accuracy(flat_p, flat_t, flat_m)
    elif dataset.task == "seq_class":
        hits = 0
        for batch_idx in _example_batches(examples, max_tokens):
            batch = [examples[i] for i in batch_idx]
            tokens, lengths = _pad_tokens(batch)
            hidden = _hidden_states(params, tokens)
            valid = (np.arange(tokens.shape[1])[None, :] < lengths[:, None])
            pooled = (hidden * valid[:, :, None]).sum(axis=1) \
                / lengths[:, None].astype(hidden.dtype)
            preds = (pooled @ head.w + head.b).argmax(axis=-1)
            hits += sum(int(p == ex.label) for p, ex in zip(preds, batch))
        value = hits / len(examples)
    elif dataset.task == "seq_regression":
        preds, targets = [], []
        for batch_idx in _example_batches(examples, max_tokens):
            batch = [examples[i] for i in batch_idx]
            tokens, lengths = _pad_tokens(batch)
            hidden = _hidden_states(params, tokens)
            valid = (np.arange(tokens.shape[1])[None, :] < lengths[:, None])
            pooled = (hidden * valid[:, :, None]).sum(axis=1) \
                / lengths[:, None].astype(hidden.dtype)
            out = pooled @ head.w + head.b
            preds.extend(float(v) for v in out[:, 0])
            targets.extend(ex.label for ex in batch)
        value = spearman(preds, targets)
    elif dataset.task == "contact":
        precisions = []
        for ex in examples:
            if not ex.label:
                continue  # no true contacts: precision undefined for ranking
            scores = contact_score_matrix(params, head, ex.residues)
            precisions.append(contact_precision_at_l5(
                scores, ex.label, len(ex.residues)))
        if not precisions:
            raise NoCandidatePairsError("no test sequence has a true contact")
        value = float(np.mean(precisions))
    else:
        raise ValueError(f"unknown task {dataset.task!r}")

    return EvalReport(task=dataset.task, metric=METRIC_NAMES[dataset.task],
                      value=float(value), train_size=train_size,
                      test_size=test_size, checkpoint_id=checkpoint_id,
                      seed=seed)


# --- fine-tuning ---

@dataclass
class FineTuned:
    params: ModelParams
    head: TaskHead
    report: EvalReport


def finetune(checkpoint, dataset: TaskDataset, steps: int = 200,
             lr: float = DEFAULT_FINETUNE_LR, warmup_steps: int | None = None,
             seed: int = 0, max_tokens: int = 2048,
             checkpoint_id: str | None = None) -> FineTuned:
    """Fine-tune the whole model plus a fresh task head.

    checkpoint may be a ModelParams, a path to a PPCK file, or None for a
    randomly initialized model (config seeded by `seed`). The learning rate
    ramps linearly over warmup_steps (default steps // 10) and is constant
    afterwards. Evaluation runs on the test split.
    """
    if checkpoint is None:
        config = ModelConfig(seed=seed)
        params = init_params(config)
        ck_id = checkpoint_id or "random-init"
    elif isinstance(checkpoint, ModelParams):
        params = checkpoint.copy()
        ck_id = checkpoint_id or "in-memory"
    else:
        params, _ = load_checkpoint(checkpoint)
        ck_id = checkpoint_id or os.path.basename(str(checkpoint))
    config = params.config

    train_examples = dataset.split("train")
    if not train_examples:
        raise EmptySplitError("train split is empty")
    if not dataset.split("test"):
        raise EmptySplitError("test split is empty")
    num_classes = max(dataset.num_classes, 2)
    head = init_head(dataset.task, config, num_classes, seed)

    tensors = dict(params.tensors)
    tensors["task_head.w"] = head.tensors["w"]
    tensors["task_head.b"] = head.tensors["b"]
    m = {k: np.zeros_like(t) for k, t in tensors.items()}
    v = {k: np.zeros_like(t) for k, t in tensors.items()}
    if warmup_steps is None:
        warmup_steps = max(1, steps // 10)

    pair_info_all = _contact_pair_set(train_examples, seed) \
        if dataset.task == "contact" else None

    step = 0
    epoch = 0
    while step < steps:
        rng = derive_rng(seed, "ft-shuffle", epoch)
        plan = _example_batches(train_examples, max_tokens, rng)
        for batch_idx in plan:
            if step >= steps:
                break
            batch = [train_examples[i] for i in batch_idx]
            tokens, lengths = _pad_tokens(batch)
            hidden, cache = _forward_trunk(params, tokens, train=True,
                                           rng=derive_rng(seed, "ft-dropout", step))
            pair_info = [pair_info_all[i] for i in batch_idx] \
                if pair_info_all is not None else None
            loss, dW, db, dhidden = _head_loss_and_grads(
                head, hidden, lengths, batch, pair_info)
            grads = {name: np.zeros_like(t) for name, t in params.items()}
            _backward_trunk(params, cache, dhidden, grads)
            grads["task_head.w"] = dW
            grads["task_head.b"] = db
            step_lr = lr * min(1.0, (step + 1) / warmup_steps) if warmup_steps \
                else lr
            adam_step_tensors(tensors, grads, m, v, step + 1, step_lr)
            step += 1
        epoch += 1

    report = evaluate(params, head, dataset, split="test",
                      max_tokens=max_tokens, checkpoint_id=ck_id, seed=seed)
    return FineTuned(params=params, head=head, report=report)


# --- fine-tuned model serialization (PPCK container with head tensors) ---

def save_finetuned(path, model: FineTuned, dataset_task: str,
                   num_classes: int) -> None:
    meta = {
        "config": model.params.config.to_dict(),
        "task": dataset_task,
        "num_classes": num_classes,
    }
    tensors = {name: np.asarray(t, dtype=np.float32)
               for name, t in model.params.items()}
    tensors["task_head.w"] = np.asarray(model.head.w, dtype=np.float32)
    tensors["task_head.b"] = np.asarray(model.head.b, dtype=np.float32)
    with open(path, "wb") as fh:
        fh.write(write_tensor_container(PPCK_MAGIC, meta, tensors))


def load_finetuned(path) -> tuple[ModelParams, TaskHead, dict]:
    with open(path, "rb") as fh:
        meta, tensors = read_tensor_container(fh.read(), PPCK_MAGIC)
    if "task" not in meta:
        raise ConfigMismatchError("checkpoint has no task head")
    config = ModelConfig.from_dict(meta["config"])
    head = TaskHead(task=meta["task"], tensors={
        "w": tensors.pop("task_head.w"),
        "b": tensors.pop("task_head.b"),
    })
    params = ModelParams(config, tensors)
    return params, head, meta
