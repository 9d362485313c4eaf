"""Command-line interface: the full pipeline as subcommands.

Precedence for every setting is defaults < --config file < flags, and each
run prints its fully resolved configuration before doing anything. Exit
codes: 0 success, 2 usage, 3 data error, 4 numerical error. Timestamps
appear only on lines starting with '#'.
"""
from __future__ import annotations

import argparse
import concurrent.futures
import os
import sys
import time

import numpy as np

from .alphabet import ALPHABET_SIZE
from .exceptions import DataError, NumericalError, ProfpredError
from .labels import build_all_labels, write_labels
from .model import Batch, ModelConfig, grad_check, grad_check_all, init_params
from .msa import (
    Msa,
    column_occupancy,
    parse_aligned_fasta,
    parse_stockholm,
    write_aligned_fasta,
)
from .profile import (
    ProfileHmm,
    build_profile,
    classify_columns,
    format_profile_table,
    write_profile,
)
from .seeding import derive_rng
from .synthgen import (
    TASK_SHAPES,
    generate_families,
    make_downstream_task,
    read_task_manifest,
    write_task_manifest,
)
from .training import TrainConfig, load_corpus, load_state, pretrain

_PROFILE_OPTIONS = {
    "policy": (str, "occupancy", "column policy: occupancy | rf | lowercase"),
    "symfrac": (float, 0.5, "occupancy threshold for match columns"),
    "pseudocount": (float, 0.1, "additive emission pseudocount"),
    "weighting": (str, "uniform", "row weighting: uniform | henikoff"),
}


def _optional_int(text: str):
    return None if text.lower() == "none" else int(text)


def _optional_float(text: str):
    return None if text.lower() == "none" else float(text)


def _read_config_file(path: str) -> dict[str, str]:
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(args, options: dict):
    """Merge defaults, config file, and flags; return plain dict."""
    file_values = _read_config_file(args.config) if getattr(args, "config", None) \
        else {}
    resolved = {}
    for key, (conv, default, _help) in options.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_values:
            resolved[key] = conv(file_values[key])
        else:
            resolved[key] = default
    return resolved


def _echo_config(command: str, resolved: dict) -> None:
    print(f"# profpred {command} started {time.strftime('%Y-%m-%dT%H:%M:%S')}")
    for key in sorted(resolved):
        print(f"config {key}={resolved[key]}")


def _add_options(parser, options: dict):
    for key, (conv, _default, help_text) in options.items():
        parser.add_argument(f"--{key.replace('_', '-')}", dest=key,
                            type=conv, default=None, help=help_text)


def _worker_count() -> int:
    env = os.environ.get("PP_THREADS")
    if env:
        return max(1, int(env))
    return min(4, os.cpu_count() or 1)


def _load_alignment(path: str, fmt: str) -> Msa:
    with open(path, "rb") as fh:
        data = fh.read()
    if fmt == "stockholm":
        return parse_stockholm(data)
    if fmt == "fasta":
        return parse_aligned_fasta(data)
    head = data.lstrip()[:1]
    if head == b">":
        return parse_aligned_fasta(data)
    return parse_stockholm(data)


# --- subcommand implementations ---

def _cmd_parse(args) -> int:
    options = {"format": (str, "auto", "input format: auto | stockholm | fasta"),
               **_PROFILE_OPTIONS}
    resolved = _resolve(args, options)
    _echo_config("parse", resolved)
    for path in args.inputs:
        msa = _load_alignment(path, resolved["format"])
        residues = sum(len(msa.sequence_record(i + 1).residues)
                       for i in range(msa.k))
        classes = classify_columns(msa, policy=resolved["policy"],
                                   symfrac=resolved["symfrac"]) \
            if resolved["policy"] != "rf" or msa.ref_annotation else None
        match_cols = classes.match_count if classes else 0
        mean_occ = float(np.mean([column_occupancy(msa, j + 1)
                                  for j in range(msa.m)]))
        print(f"{path}\tk={msa.k}\tm={msa.m}\tresidues={residues}"
              f"\tmatch_columns={match_cols}\tmean_occupancy={mean_occ:.4f}")
    return 0


def _fit_profile(msa: Msa, resolved: dict):
    classes = classify_columns(msa, policy=resolved["policy"],
                               symfrac=resolved["symfrac"])
    profile = build_profile(msa, classes, pseudocount=resolved["pseudocount"],
                            weighting=resolved["weighting"])
    return classes, profile


def _cmd_profile(args) -> int:
    options = {"format": (str, "auto", "input format"), **_PROFILE_OPTIONS,
               "out": (str, ".", "output directory")}
    resolved = _resolve(args, options)
    _echo_config("profile", resolved)
    os.makedirs(resolved["out"], exist_ok=True)

    def process(path):
        msa = _load_alignment(path, resolved["format"])
        _, profile = _fit_profile(msa, resolved)
        stem = os.path.splitext(os.path.basename(path))[0]
        binary_path = os.path.join(resolved["out"], stem + ".pphm")
        with open(binary_path, "wb") as fh:
            fh.write(write_profile(profile))
        table_path = os.path.join(resolved["out"], stem + ".profile.txt")
        with open(table_path, "w") as fh:
            fh.write(format_profile_table(profile))
        return f"{path}\tnodes={profile.num_nodes}\twrote={binary_path}"

    with concurrent.futures.ThreadPoolExecutor(_worker_count()) as pool:
        for line in pool.map(process, args.inputs):
            print(line)
    return 0


def _cmd_labels(args) -> int:
    options = {"format": (str, "auto", "input format"), **_PROFILE_OPTIONS,
               "out": (str, ".", "output directory")}
    resolved = _resolve(args, options)
    _echo_config("labels", resolved)
    os.makedirs(resolved["out"], exist_ok=True)

    def process(path):
        msa = _load_alignment(path, resolved["format"])
        classes, profile = _fit_profile(msa, resolved)
        labels = build_all_labels(msa, classes, profile)
        stem = os.path.splitext(os.path.basename(path))[0]
        out_path = os.path.join(resolved["out"], stem + ".pplb")
        with open(out_path, "wb") as fh:
            fh.write(write_labels(labels))
        all_insert = sum(1 for lab in labels if lab.is_all_insert)
        return (f"{path}\tsequences={len(labels)}\tall_insert={all_insert}"
                f"\twrote={out_path}")

    with concurrent.futures.ThreadPoolExecutor(_worker_count()) as pool:
        for line in pool.map(process, args.inputs):
            print(line)
    return 0


_SYNTH_OPTIONS = {
    "families": (int, 5, "number of families"),
    "nodes": (int, 12, "match nodes per family"),
    "seqs": (int, 200, "sequences per family"),
    "concentration": (float, 0.3, "Dirichlet concentration of true emissions"),
    "insert_open": (float, 0.02, "insert-open probability"),
    "delete_open": (float, 0.02, "delete-open probability"),
    "pseudocount": (float, 0.1, "pseudocount for the estimated profiles"),
    "seed": (int, 0, "generator seed"),
    "out": (str, "synth_out", "output directory"),
}


def _cmd_synth(args) -> int:
    resolved = _resolve(args, _SYNTH_OPTIONS)
    _echo_config("synth", resolved)
    out = resolved["out"]
    os.makedirs(out, exist_ok=True)
    families = generate_families(
        resolved["families"], resolved["nodes"], resolved["seqs"],
        resolved["concentration"], resolved["insert_open"],
        resolved["delete_open"], resolved["seed"],
        pseudocount=resolved["pseudocount"])
    for family in families:
        stem = os.path.join(out, family.family_id)
        with open(stem + ".fasta", "w") as fh:
            fh.write(write_aligned_fasta(family.msa))
        with open(stem + ".pplb", "wb") as fh:
            fh.write(write_labels(list(family.labels)))
        truth = ProfileHmm(
            match_emissions=family.true_match_emissions,
            insert_emissions=np.full_like(family.true_match_emissions,
                                          1.0 / ALPHABET_SIZE),
            match_map=tuple(range(1, family.num_nodes + 1)),
            num_columns=family.num_nodes)
        with open(stem + ".truth.pphm", "wb") as fh:
            fh.write(write_profile(truth))
        print(f"{family.family_id}\tk={family.msa.k}\tm={family.msa.m}"
              f"\tnodes={family.num_nodes}")
    for task in TASK_SHAPES:
        dataset = make_downstream_task(families, task, resolved["seed"])
        path = os.path.join(out, f"manifest_{task}.tsv")
        with open(path, "w") as fh:
            fh.write(write_task_manifest(dataset))
        print(f"manifest\t{task}\texamples={len(dataset.examples)}\twrote={path}")
    return 0


_PRETRAIN_OPTIONS = {
    "objective": (str, "pp", "pp | mlm | joint"),
    "lr": (_optional_float, None, "peak learning rate (default by objective)"),
    "warmup": (int, 100, "warm-up steps"),
    "epochs": (int, 10, "maximum epochs"),
    "steps": (_optional_int, None, "hard step cap (overrides epochs early)"),
    "max_tokens": (int, 2048, "token budget per batch, padding included"),
    "seed": (int, 0, "training seed"),
    "checkpoint_interval": (int, 200, "steps between checkpoints"),
    "log_interval": (int, 10, "steps between metric lines"),
    "holdout": (float, 0.05, "held-out fraction by id hash"),
    "mask_rate": (float, 0.15, "masking rate for mlm/joint"),
    "lambda_policy": (str, "auto", "auto | fixed"),
    "fixed_lambda": (float, 0.5, "lambda when policy is fixed"),
    "lambda_window": (int, 100, "steps between lambda calibrations"),
    "layers": (int, 2, "encoder layers"),
    "heads": (int, 4, "attention heads"),
    "hidden": (int, 64, "hidden width"),
    "ff": (int, 256, "feed-forward width"),
    "max_positions": (int, 256, "position table size"),
    "dropout": (float, 0.1, "dropout rate"),
    "data": (str, None, "corpus directory (fasta + pplb pairs)"),
    "out": (str, "pretrain_out", "output directory"),
    "resume": (str, None, "state file (.ppts) to resume from"),
}


def _pretrain_config(resolved: dict) -> TrainConfig:
    model = ModelConfig(num_layers=resolved["layers"],
                        num_heads=resolved["heads"],
                        hidden_dim=resolved["hidden"], ff_dim=resolved["ff"],
                        max_positions=resolved["max_positions"],
                        dropout_rate=resolved["dropout"],
                        seed=resolved["seed"])
    return TrainConfig(objective=resolved["objective"],
                       peak_lr=resolved["lr"],
                       warmup_steps=resolved["warmup"],
                       max_epochs=resolved["epochs"],
                       max_steps=resolved["steps"],
                       max_tokens_per_batch=resolved["max_tokens"],
                       seed=resolved["seed"],
                       checkpoint_interval=resolved["checkpoint_interval"],
                       log_interval=resolved["log_interval"],
                       holdout_fraction=resolved["holdout"],
                       mask_rate=resolved["mask_rate"],
                       lambda_policy=resolved["lambda_policy"],
                       fixed_lambda=resolved["fixed_lambda"],
                       lambda_window=resolved["lambda_window"], model=model)


def _cmd_pretrain(args) -> int:
    resolved = _resolve(args, _PRETRAIN_OPTIONS)
    _echo_config("pretrain", resolved)
    if not resolved["data"]:
        raise DataError("--data is required")
    config = _pretrain_config(resolved)
    records = load_corpus(resolved["data"])
    os.makedirs(resolved["out"], exist_ok=True)
    resume_state = load_state(resolved["resume"]) if resolved["resume"] else None
    result = pretrain(records, config, out_dir=resolved["out"],
                      resume_state=resume_state)
    print(f"steps={result.state.step}\tbest_heldout="
          f"{result.state.best_heldout:.8g}")
    for tag, path in sorted(result.checkpoints.items()):
        print(f"checkpoint\t{tag}\t{path}")
    return 0


_FINETUNE_OPTIONS = {
    "task": (str, "token_class", " | ".join(TASK_SHAPES)),
    "steps": (int, 200, "fine-tuning steps"),
    "lr": (float, 0.0001, "learning rate"),
    "warmup": (_optional_int, None, "warm-up steps (default steps // 10)"),
    "seed": (int, 0, "fine-tuning seed"),
    "max_tokens": (int, 2048, "token budget per batch"),
    "data": (str, None, "synth output directory with manifests"),
    "checkpoint": (str, None, "pre-trained .ppck (omit for random init)"),
    "out": (str, "finetune_out", "output directory"),
}


def _load_task_data(data_dir: str, task: str):
    sequences: dict[str, str] = {}
    family_of: dict[str, int] = {}
    stems = sorted(name[:-6] for name in os.listdir(data_dir)
                   if name.endswith(".fasta"))
    for fam_idx, stem in enumerate(stems):
        with open(os.path.join(data_dir, stem + ".fasta"), "rb") as fh:
            msa = parse_aligned_fasta(fh.read())
        for i, rid in enumerate(msa.ids):
            sequences[rid] = msa.sequence_record(i + 1).residues
            family_of[rid] = fam_idx
    manifest_path = os.path.join(data_dir, f"manifest_{task}.tsv")
    if not os.path.exists(manifest_path):
        raise DataError(f"no manifest for task {task!r} in {data_dir}")
    with open(manifest_path, "r") as fh:
        return read_task_manifest(fh.read(), sequences, family_of)


def _cmd_finetune(args) -> int:
    from .downstream import finetune, save_finetuned

    resolved = _resolve(args, _FINETUNE_OPTIONS)
    _echo_config("finetune", resolved)
    if not resolved["data"]:
        raise DataError("--data is required")
    dataset = _load_task_data(resolved["data"], resolved["task"])
    result = finetune(resolved["checkpoint"], dataset,
                      steps=resolved["steps"], lr=resolved["lr"],
                      warmup_steps=resolved["warmup"], seed=resolved["seed"],
                      max_tokens=resolved["max_tokens"])
    os.makedirs(resolved["out"], exist_ok=True)
    model_path = os.path.join(resolved["out"],
                              f"finetuned_{resolved['task']}.ppck")
    save_finetuned(model_path, result, dataset.task,
                   max(dataset.num_classes, 2))
    line = result.report.to_line()
    with open(os.path.join(resolved["out"], "results.tsv"), "a") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


_EVAL_OPTIONS = {
    "task": (str, "token_class", " | ".join(TASK_SHAPES)),
    "split": (str, "test", "train | test"),
    "seed": (int, 0, "report seed field"),
    "max_tokens": (int, 2048, "token budget per batch"),
    "data": (str, None, "synth output directory with manifests"),
    "checkpoint": (str, None, "fine-tuned .ppck with task head"),
    "out": (str, "finetune_out", "output directory for results.tsv"),
}


def _cmd_eval(args) -> int:
    from .downstream import evaluate, load_finetuned

    resolved = _resolve(args, _EVAL_OPTIONS)
    _echo_config("eval", resolved)
    if not resolved["data"] or not resolved["checkpoint"]:
        raise DataError("--data and --checkpoint are required")
    dataset = _load_task_data(resolved["data"], resolved["task"])
    params, head, meta = load_finetuned(resolved["checkpoint"])
    if meta["task"] != resolved["task"]:
        raise DataError(
            f"checkpoint was fine-tuned for {meta['task']!r}, not "
            f"{resolved['task']!r}")
    report = evaluate(params, head, dataset, split=resolved["split"],
                      max_tokens=resolved["max_tokens"],
                      checkpoint_id=os.path.basename(resolved["checkpoint"]),
                      seed=resolved["seed"])
    line = report.to_line()
    os.makedirs(resolved["out"], exist_ok=True)
    with open(os.path.join(resolved["out"], "results.tsv"), "a") as fh:
        fh.write(line + "\n")
    print(line)
    return 0


_GRADCHECK_OPTIONS = {
    "objective": (str, "all", "pp | mlm | joint | all"),
    "seed": (int, 0, "seed for the probe batch"),
    "tolerance": (float, 1e-3, "max relative error"),
    "layers": (int, 1, "encoder layers for the probe model"),
    "heads": (int, 2, "attention heads"),
    "hidden": (int, 8, "hidden width"),
    "ff": (int, 16, "feed-forward width"),
}


def _gradcheck_batch(seed: int, batch_size: int = 2, length: int = 6) -> Batch:
    rng = derive_rng(seed, "gradcheck")
    tokens = rng.integers(0, ALPHABET_SIZE, size=(batch_size, length)).astype(np.int64)
    labels = rng.dirichlet(np.ones(ALPHABET_SIZE),
                           size=(batch_size, length)).astype(np.float64)
    label_mask = np.ones((batch_size, length), dtype=bool)
    mlm_mask = np.zeros((batch_size, length), dtype=bool)
    mlm_mask[:, :: max(1, length // 3)] = True
    return Batch(tokens=tokens,
                 lengths=np.full(batch_size, length, dtype=np.int64),
                 labels=labels, label_mask=label_mask,
                 mlm_targets=tokens.copy(), mlm_mask=mlm_mask)


def _cmd_gradcheck(args) -> int:
    resolved = _resolve(args, _GRADCHECK_OPTIONS)
    _echo_config("gradcheck", resolved)
    config = ModelConfig(num_layers=resolved["layers"],
                         num_heads=resolved["heads"],
                         hidden_dim=resolved["hidden"], ff_dim=resolved["ff"],
                         max_positions=8, dropout_rate=0.0,
                         seed=resolved["seed"])
    params = init_params(config)
    batch = _gradcheck_batch(resolved["seed"])
    if resolved["objective"] == "all":
        reports = list(grad_check_all(params, batch, lam=0.3,
                                      tolerance=resolved["tolerance"]).values())
    else:
        reports = [grad_check(params, batch, resolved["objective"], lam=0.3,
                              tolerance=resolved["tolerance"])]
    all_passed = True
    for report in reports:
        print(report.format())
        all_passed = all_passed and report.passed
    return 0 if all_passed else 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="profpred",
        description="Profile-prediction pre-training pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, options, needs_inputs, func in (
            ("parse", {"format": (str, "auto", "input format"),
                       **_PROFILE_OPTIONS}, True, _cmd_parse),
            ("profile", {"format": (str, "auto", "input format"),
                         **_PROFILE_OPTIONS,
                         "out": (str, ".", "output directory")}, True,
             _cmd_profile),
            ("labels", {"format": (str, "auto", "input format"),
                        **_PROFILE_OPTIONS,
                        "out": (str, ".", "output directory")}, True,
             _cmd_labels),
            ("synth", _SYNTH_OPTIONS, False, _cmd_synth),
            ("pretrain", _PRETRAIN_OPTIONS, False, _cmd_pretrain),
            ("finetune", _FINETUNE_OPTIONS, False, _cmd_finetune),
            ("eval", _EVAL_OPTIONS, False, _cmd_eval),
            ("gradcheck", _GRADCHECK_OPTIONS, False, _cmd_gradcheck)):
        p = sub.add_parser(name)
        p.add_argument("--config", type=str, default=None,
                       help="key=value config file (flags win)")
        _add_options(p, options)
        if needs_inputs:
            p.add_argument("inputs", nargs="+", help="alignment files")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"error[numerical]: {exc}", file=sys.stderr)
        return 4
    except (DataError, ProfpredError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error[usage]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
