"""Profile-prediction pre-training for protein sequence models, desk scale.

Pipeline: parse alignments (msa), classify columns and estimate emission
profiles (profile), derive per-residue target distributions (labels),
pre-train a small transformer encoder under profile / masked-token / joint
objectives (model, losses, training), and fine-tune on downstream task
shapes with synthetic ground-truth corpora (synthgen, downstream).
"""

from .alphabet import ALPHABET_SIZE, AMINO_ACIDS, VOCAB_SIZE
from .estimators import ProfileHmmEstimator, ProfilePretrainer, SequenceTaskModel
from .labels import LabelSequence, build_labels, read_labels, write_labels
from .losses import (
    JointLossConfig,
    MaskingPolicy,
    apply_masking,
    calibrate_lambda,
    joint_loss,
    kl_divergence,
    mlm_loss,
    profile_loss,
)
from .model import (
    Batch,
    ForwardOutput,
    ModelConfig,
    ModelParams,
    backward,
    forward,
    grad_check,
    init_params,
)
from .msa import (
    Msa,
    SequenceRecord,
    column_occupancy,
    parse_aligned_fasta,
    parse_stockholm,
    write_aligned_fasta,
)
from .profile import (
    ColumnClasses,
    ProfileHmm,
    build_profile,
    classify_columns,
    henikoff_weights,
    match_map_inverse,
    read_profile,
    write_profile,
)
from .synthgen import (
    GroundTruthFamily,
    generate_families,
    make_downstream_task,
    sample_family,
    sample_profile,
)
from .training import (
    TrainConfig,
    TrainingRecord,
    adam_update,
    load_corpus,
    lr_at_step,
    make_dynamic_batches,
    pretrain,
)
from .downstream import (
    EvalReport,
    contact_precision_at_l5,
    evaluate,
    finetune,
    spearman,
    token_accuracy,
)

__version__ = "0.1.0"

__all__ = [
    "ALPHABET_SIZE", "AMINO_ACIDS", "VOCAB_SIZE",
    "Msa", "SequenceRecord", "parse_stockholm", "parse_aligned_fasta",
    "write_aligned_fasta", "column_occupancy",
    "ColumnClasses", "ProfileHmm", "classify_columns", "build_profile",
    "match_map_inverse", "henikoff_weights", "read_profile", "write_profile",
    "LabelSequence", "build_labels", "read_labels", "write_labels",
    "MaskingPolicy", "JointLossConfig", "kl_divergence", "profile_loss",
    "apply_masking", "mlm_loss", "joint_loss", "calibrate_lambda",
    "ModelConfig", "ModelParams", "Batch", "ForwardOutput", "init_params",
    "forward", "backward", "grad_check",
    "TrainConfig", "TrainingRecord", "lr_at_step", "adam_update",
    "make_dynamic_batches", "pretrain", "load_corpus",
    "GroundTruthFamily", "sample_profile", "sample_family",
    "generate_families", "make_downstream_task",
    "EvalReport", "finetune", "evaluate", "spearman", "token_accuracy",
    "contact_precision_at_l5",
    "ProfileHmmEstimator", "ProfilePretrainer", "SequenceTaskModel",
]
