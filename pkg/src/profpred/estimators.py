"""scikit-learn style estimators wrapping the pipeline stages.

These are thin fit/transform/predict adapters over the functional modules
so profiles, pre-training, and fine-tuning compose with the wider
ecosystem (get_params/set_params, cloning, grid search). The underlying
functions remain directly importable.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .alphabet import encode_sequence
from .exceptions import ProfileMismatchError
from .labels import LabelSequence, build_all_labels
from .model import ModelConfig, _forward_trunk, forward
from .msa import Msa
from .profile import build_profile, classify_columns
from .synthgen import TaskDataset
from .training import TrainConfig, TrainingRecord, pretrain
from .validation import check_fitted


class ProfileHmmEstimator(BaseEstimator, TransformerMixin):
    """Fit a profile HMM on an alignment; transform rows into label sequences.

    fit(X) classifies the columns of the Msa X and estimates emissions;
    transform(X) labels every row of an equally wide alignment under the
    fitted profile (typically X itself).
    """

    def __init__(self, column_policy: str = "occupancy", symfrac: float = 0.5,
                 pseudocount: float = 0.1, weighting: str = "uniform"):
        self.column_policy = column_policy
        self.symfrac = symfrac
        self.pseudocount = pseudocount
        self.weighting = weighting

    def fit(self, X: Msa, y=None) -> "ProfileHmmEstimator":
        self.classes_ = classify_columns(X, policy=self.column_policy,
                                         symfrac=self.symfrac)
        self.profile_ = build_profile(X, self.classes_,
                                      pseudocount=self.pseudocount,
                                      weighting=self.weighting)
        self.num_columns_ = X.m
        return self

    def transform(self, X: Msa) -> list[LabelSequence]:
        check_fitted(self, ("profile_", "classes_"))
        if X.m != self.num_columns_:
            raise ProfileMismatchError(
                f"alignment has {X.m} columns, profile was fitted on "
                f"{self.num_columns_}")
        return build_all_labels(X, self.classes_, self.profile_)


class ProfilePretrainer(BaseEstimator):
    """Pre-train the encoder on labelled records under one objective.

    fit(X) takes a list of TrainingRecord and exposes the trained
    parameters as params_, the metrics log lines as metrics_, and held-out
    losses as heldout_.
    """

    def __init__(self, objective: str = "pp", peak_lr: float | None = None,
                 warmup_steps: int = 100, max_epochs: int = 10,
                 max_steps: int | None = None,
                 max_tokens_per_batch: int = 2048, seed: int = 0,
                 checkpoint_interval: int = 200, log_interval: int = 10,
                 holdout_fraction: float = 0.05, mask_rate: float = 0.15,
                 lambda_policy: str = "auto", fixed_lambda: float = 0.5,
                 lambda_window: int = 100, num_layers: int = 2,
                 num_heads: int = 4, hidden_dim: int = 64, ff_dim: int = 256,
                 max_positions: int = 256, dropout_rate: float = 0.1,
                 out_dir=None):
        self.objective = objective
        self.peak_lr = peak_lr
        self.warmup_steps = warmup_steps
        self.max_epochs = max_epochs
        self.max_steps = max_steps
        self.max_tokens_per_batch = max_tokens_per_batch
        self.seed = seed
        self.checkpoint_interval = checkpoint_interval
        self.log_interval = log_interval
        self.holdout_fraction = holdout_fraction
        self.mask_rate = mask_rate
        self.lambda_policy = lambda_policy
        self.fixed_lambda = fixed_lambda
        self.lambda_window = lambda_window
        self.num_layers = num_layers
        self.num_heads = num_heads
        self.hidden_dim = hidden_dim
        self.ff_dim = ff_dim
        self.max_positions = max_positions
        self.dropout_rate = dropout_rate
        self.out_dir = out_dir

    def _train_config(self) -> TrainConfig:
        model = ModelConfig(num_layers=self.num_layers,
                            num_heads=self.num_heads,
                            hidden_dim=self.hidden_dim, ff_dim=self.ff_dim,
                            max_positions=self.max_positions,
                            dropout_rate=self.dropout_rate, seed=self.seed)
        return TrainConfig(objective=self.objective, peak_lr=self.peak_lr,
                           warmup_steps=self.warmup_steps,
                           max_epochs=self.max_epochs,
                           max_steps=self.max_steps,
                           max_tokens_per_batch=self.max_tokens_per_batch,
                           seed=self.seed,
                           checkpoint_interval=self.checkpoint_interval,
                           log_interval=self.log_interval,
                           holdout_fraction=self.holdout_fraction,
                           mask_rate=self.mask_rate,
                           lambda_policy=self.lambda_policy,
                           fixed_lambda=self.fixed_lambda,
                           lambda_window=self.lambda_window, model=model)

    def fit(self, X: list[TrainingRecord], y=None) -> "ProfilePretrainer":
        result = pretrain(X, self._train_config(), out_dir=self.out_dir)
        self.state_ = result.state
        self.params_ = result.state.params
        self.metrics_ = result.metrics_lines
        self.heldout_ = result.heldout_lines
        self.checkpoints_ = result.checkpoints
        return self

    def encode(self, sequences: list[str]) -> list[np.ndarray]:
        """Hidden states for raw residue strings, one (n, D) array each."""
        check_fitted(self, ("params_",))
        out = []
        for residues in sequences:
            tokens = encode_sequence(residues)[None, :]
            hidden, _ = _forward_trunk(self.params_, tokens, train=False,
                                       rng=None)
            out.append(hidden[0])
        return out

    def predict_profile(self, residues: str) -> np.ndarray:
        """Per-residue 20-way distribution predicted by the profile head."""
        check_fitted(self, ("params_",))
        tokens = encode_sequence(residues)[None, :]
        return forward(self.params_, tokens).profile_probs[0]


class SequenceTaskModel(BaseEstimator):
    """Fine-tune a checkpoint on one downstream task and predict with it.

    X for fit() is a TaskDataset; checkpoint may be None (random init),
    a path, or ModelParams.
    """

    def __init__(self, task: str = "token_class", checkpoint=None,
                 steps: int = 200, lr: float = 0.0001,
                 warmup_steps: int | None = None, seed: int = 0,
                 max_tokens: int = 2048):
        self.task = task
        self.checkpoint = checkpoint
        self.steps = steps
        self.lr = lr
        self.warmup_steps = warmup_steps
        self.seed = seed
        self.max_tokens = max_tokens

    def fit(self, X: TaskDataset, y=None) -> "SequenceTaskModel":
        from .downstream import finetune

        if X.task != self.task:
            raise ProfileMismatchError(
                f"dataset task {X.task!r} != estimator task {self.task!r}")
        result = finetune(self.checkpoint, X, steps=self.steps, lr=self.lr,
                          warmup_steps=self.warmup_steps, seed=self.seed,
                          max_tokens=self.max_tokens)
        self.model_ = result.params
        self.head_ = result.head
        self.report_ = result.report
        return self

    def predict(self, X: list[str]):
        """Predict on raw residue strings; output shape depends on task."""
        from .downstream import contact_score_matrix

        check_fitted(self, ("model_", "head_"))
        preds = []
        for residues in X:
            tokens = encode_sequence(residues)[None, :]
            hidden, _ = _forward_trunk(self.model_, tokens, train=False,
                                       rng=None)
            h = hidden[0]
            if self.task == "token_class":
                preds.append((h @ self.head_.w + self.head_.b).argmax(axis=-1))
            elif self.task == "seq_class":
                pooled = h.mean(axis=0)
                preds.append(int((pooled @ self.head_.w + self.head_.b).argmax()))
            elif self.task == "seq_regression":
                pooled = h.mean(axis=0)
                preds.append(float((pooled @ self.head_.w + self.head_.b)[0]))
            else:
                preds.append(contact_score_matrix(self.model_, self.head_,
                                                  residues))
        return preds

    def score(self, X: TaskDataset | None = None, y=None) -> float:
        """Test-split metric; re-evaluates when a dataset is given."""
        from .downstream import evaluate

        check_fitted(self, ("model_", "head_", "report_"))
        if X is None:
            return self.report_.value
        return evaluate(self.model_, self.head_, X, split="test",
                        max_tokens=self.max_tokens, seed=self.seed).value
