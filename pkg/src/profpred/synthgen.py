"""Synthetic protein families with known generating profiles.

Families are sampled from Dirichlet-drawn match emissions with geometric
insert runs and per-node deletions, then pushed through the real
classification / profile / label pipeline. Because the generating truth is
known, estimator consistency and model learning become checkable claims
instead of hopes. Optional coupled node pairs give a ground truth for the
contact-style task.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .alphabet import ALPHABET_SIZE, AMINO_ACIDS
from .exceptions import (
    DegenerateFamilyError,
    InsufficientFamiliesError,
    InvalidConcentrationError,
    ShapeMismatchError,
)
from .labels import LabelSequence, build_all_labels, residue_column_map
from .losses import kl_divergence
from .msa import Msa
from .profile import (
    ColumnClasses,
    DEFAULT_PSEUDOCOUNT,
    INSERT,
    MATCH,
    ProfileHmm,
    build_profile,
)
from .seeding import derive_rng, stable_id_hash

UNIFORM_ROW = np.full(ALPHABET_SIZE, 1.0 / ALPHABET_SIZE)

TASK_SHAPES = ("token_class", "seq_class", "seq_regression", "contact")

CONSERVED_THRESHOLD = 0.7
CONTACT_MIN_SEPARATION = 6


def sample_profile(num_nodes: int, concentration: float, seed: int) -> np.ndarray:
    """Draw match emissions: one symmetric Dirichlet row per node.

    Low concentration gives peaked (conserved) columns, high concentration
    near-uniform (variable) ones.
    """
    if num_nodes < 1:
        raise ShapeMismatchError("need at least one node")
    if not concentration > 0:
        raise InvalidConcentrationError(f"concentration {concentration} <= 0")
    rng = derive_rng(seed, "profile")
    rows = np.empty((num_nodes, ALPHABET_SIZE), dtype=np.float64)
    for j in range(num_nodes):
        row = rng.dirichlet(np.full(ALPHABET_SIZE, concentration))
        while not np.isfinite(row).all() or row.sum() <= 0:  # underflow guard
            row = rng.dirichlet(np.full(ALPHABET_SIZE, concentration))
        rows[j] = row / row.sum()
    return rows


@dataclass(frozen=True)
class CoupledPair:
    """Two nodes whose emissions were generated jointly.

    With probability strength, node_b emits partner[residue_a] instead of
    drawing from its own distribution. Node indices are 1-based.
    """

    node_a: int
    node_b: int
    partner: tuple[int, ...]  # permutation of the 20 residue indices
    strength: float = 0.9


@dataclass(frozen=True)
class GroundTruthFamily:
    """One sampled family plus everything needed to verify claims about it."""

    family_id: str
    true_match_emissions: np.ndarray   # (l, 20)
    insert_open: float
    delete_open: float
    msa: Msa
    classes: ColumnClasses             # true column roles, by construction
    profile: ProfileHmm                # estimated from the sampled alignment
    labels: tuple[LabelSequence, ...]  # real-pipeline labels per row
    coupled_pairs: tuple[CoupledPair, ...] = field(default_factory=tuple)

    @property
    def num_nodes(self) -> int:
        return self.true_match_emissions.shape[0]

    def residue_nodes(self, row_index: int):
        """Per-residue (is_match, node) for one row, from the true classes.

        Insert residues report the flanking node, matching the label
        convention.
        """
        row = self.msa.rows[row_index - 1]
        g = residue_column_map(row)
        match_cols = self.classes.match_columns
        out = []
        for col in g:
            preceding = sum(1 for c in match_cols if c < col)
            if self.classes.is_match(col):
                out.append((True, preceding + 1))
            else:
                out.append((False, max(1, preceding)))
        return out

    def true_residue_targets(self, row_index: int) -> np.ndarray:
        """True generating distribution per residue: the node's match
        emissions, or the uniform insert distribution."""
        assignments = self.residue_nodes(row_index)
        targets = np.empty((len(assignments), ALPHABET_SIZE), dtype=np.float64)
        for i, (is_match, node) in enumerate(assignments):
            targets[i] = self.true_match_emissions[node - 1] if is_match \
                else UNIFORM_ROW
        return targets

    def row_index_of(self, sequence_id: str) -> int:
        return self.msa.ids.index(sequence_id) + 1


def _sample_row(rng, emissions: np.ndarray, insert_open: float,
                delete_open: float, coupled: dict[int, CoupledPair]):
    """One row: per-node residue or deletion, plus insert runs per junction.

    Returns (node_residues list of int|None, inserts list of lists, one per
    junction 0..l).
    """
    l = emissions.shape[0]

    def insert_run():
        run = []
        while rng.random() < insert_open:
            run.append(int(rng.integers(0, ALPHABET_SIZE)))
        return run

    node_residues: list[int | None] = []
    inserts = [insert_run()]
    for j in range(1, l + 1):
        if rng.random() < delete_open:
            node_residues.append(None)
        else:
            pair = coupled.get(j)
            source = node_residues[pair.node_a - 1] if pair else None
            if pair is not None and source is not None \
                    and rng.random() < pair.strength:
                node_residues.append(pair.partner[source])
            else:
                node_residues.append(
                    int(rng.choice(ALPHABET_SIZE, p=emissions[j - 1])))
        inserts.append(insert_run())
    return node_residues, inserts


def sample_family(true_emissions: np.ndarray, k: int, insert_open: float,
                  delete_open: float, seed: int, family_id: str = "fam",
                  coupled_pairs: tuple[CoupledPair, ...] = (),
                  pseudocount: float = DEFAULT_PSEUDOCOUNT) -> GroundTruthFamily:
    """Sample k rows from a generating profile and assemble the alignment.

    Insert runs are geometric with the insert-open probability and share
    columns across rows (left-justified, '.'-padded). Rows that come out
    residue-free are resampled, at most 100 times each.
    """
    true_emissions = np.asarray(true_emissions, dtype=np.float64)
    if k < 2:
        raise ShapeMismatchError("a family needs k >= 2 sequences")
    if not 0.0 <= insert_open < 1.0 or not 0.0 <= delete_open < 1.0:
        raise ShapeMismatchError("indel rates must lie in [0, 1)")
    l = true_emissions.shape[0]
    coupled = {p.node_b: p for p in coupled_pairs}
    for p in coupled_pairs:
        if not (1 <= p.node_a < p.node_b <= l):
            raise ShapeMismatchError(f"coupled pair ({p.node_a}, {p.node_b}) "
                                     f"outside 1 <= a < b <= {l}")
    rng = derive_rng(seed, "family", family_id)
    rows_data = []
    for _ in range(k):
        for attempt in range(100):
            node_residues, inserts = _sample_row(
                rng, true_emissions, insert_open, delete_open, coupled)
            if any(r is not None for r in node_residues) or any(inserts):
                rows_data.append((node_residues, inserts))
                break
        else:
            raise DegenerateFamilyError(
                "sampled 100 residue-free rows in a row; indel rates too extreme")

    insert_widths = [max(len(inserts[j]) for _, inserts in rows_data)
                     for j in range(l + 1)]

    tags = []
    for j in range(l + 1):
        tags.extend([INSERT] * insert_widths[j])
        if j < l:
            tags.append(MATCH)
    classes = ColumnClasses(tags="".join(tags), policy="generator")

    rows = []
    for node_residues, inserts in rows_data:
        cells = []
        for j in range(l + 1):
            run = inserts[j]
            cells.extend(AMINO_ACIDS[r] for r in run)
            cells.extend("." * (insert_widths[j] - len(run)))
            if j < l:
                r = node_residues[j]
                cells.append("-" if r is None else AMINO_ACIDS[r])
        rows.append("".join(cells))

    ids = tuple(f"{family_id}_s{i:04d}" for i in range(k))
    msa = Msa(rows=tuple(rows), ids=ids)
    profile = build_profile(msa, classes, pseudocount=pseudocount)
    labels = tuple(build_all_labels(msa, classes, profile))
    return GroundTruthFamily(
        family_id=family_id,
        true_match_emissions=true_emissions,
        insert_open=insert_open,
        delete_open=delete_open,
        msa=msa,
        classes=classes,
        profile=profile,
        labels=labels,
        coupled_pairs=tuple(coupled_pairs),
    )


def default_coupled_pairs(num_nodes: int, seed: int, count: int = 2,
                          min_node_separation: int = 8) -> tuple[CoupledPair, ...]:
    """Pick disjoint node pairs far enough apart to survive the contact
    separation filter, each with a random residue pairing."""
    rng = derive_rng(seed, "couplings")
    pairs = []
    used: set[int] = set()
    candidates = [(a, a + min_node_separation)
                  for a in range(1, num_nodes - min_node_separation + 1)]
    rng.shuffle(candidates)
    for a, b in candidates:
        if len(pairs) == count:
            break
        if a in used or b in used:
            continue
        partner = tuple(int(x) for x in rng.permutation(ALPHABET_SIZE))
        pairs.append(CoupledPair(node_a=a, node_b=b, partner=partner))
        used.update((a, b))
    return tuple(pairs)


def generate_families(num_families: int, num_nodes: int, k: int,
                      concentration: float, insert_open: float,
                      delete_open: float, seed: int,
                      couple: bool = True,
                      pseudocount: float = DEFAULT_PSEUDOCOUNT
                      ) -> list[GroundTruthFamily]:
    """Sample a corpus of families with ids fam0000, fam0001, ..."""
    families = []
    for idx in range(num_families):
        fam_seed = int(derive_rng(seed, "family-seed", idx).integers(0, 2**63))
        emissions = sample_profile(num_nodes, concentration, fam_seed)
        pairs = default_coupled_pairs(num_nodes, fam_seed) if couple else ()
        families.append(sample_family(
            emissions, k, insert_open, delete_open, fam_seed,
            family_id=f"fam{idx:04d}", coupled_pairs=pairs,
            pseudocount=pseudocount))
    return families


def mean_node_kl(true_emissions: np.ndarray, profile: ProfileHmm) -> float:
    """Mean KL(true || estimated) over match nodes; the estimation-quality
    yardstick for generated families."""
    if true_emissions.shape[0] != profile.num_nodes:
        raise ShapeMismatchError("node counts differ")
    vals = [kl_divergence(true_emissions[j], profile.match_emissions[j])
            for j in range(profile.num_nodes)]
    return float(np.mean(vals))


# --- downstream task construction ---

@dataclass(frozen=True)
class TaskExample:
    """One downstream example; label type depends on the task shape."""

    id: str
    family_index: int
    residues: str
    split: str            # "train" | "test"
    label: object


@dataclass(frozen=True)
class TaskDataset:
    task: str
    examples: tuple[TaskExample, ...]
    num_classes: int = 0  # seq_class only

    def split(self, name: str) -> list[TaskExample]:
        return [ex for ex in self.examples if ex.split == name]


def _split_tag(sequence_id: str, test_fraction: float) -> str:
    return "test" if stable_id_hash(sequence_id) % 10**6 < test_fraction * 10**6 \
        else "train"


def _sequence_score(family: GroundTruthFamily, row_index: int) -> float:
    """Mean log-probability of a row's residues under its true profile."""
    record = family.msa.sequence_record(row_index)
    targets = family.true_residue_targets(row_index)
    total = 0.0
    for i, ch in enumerate(record.residues):
        p = targets[i, AMINO_ACIDS.index(ch)]
        total += float(np.log(max(p, 1e-300)))
    return total / len(record.residues)


def _contact_pairs(family: GroundTruthFamily, row_index: int,
                   min_separation: int = CONTACT_MIN_SEPARATION):
    """0-based residue-position pairs realizing the coupled nodes."""
    node_to_residue: dict[int, int] = {}
    for i, (is_match, node) in enumerate(family.residue_nodes(row_index)):
        if is_match:
            node_to_residue[node] = i
    pairs = []
    for cp in family.coupled_pairs:
        if cp.node_a in node_to_residue and cp.node_b in node_to_residue:
            i, j = node_to_residue[cp.node_a], node_to_residue[cp.node_b]
            if abs(i - j) >= min_separation:
                pairs.append((min(i, j), max(i, j)))
    return tuple(sorted(pairs))


def make_downstream_task(families: list[GroundTruthFamily], task_shape: str,
                         seed: int, test_fraction: float = 0.25) -> TaskDataset:
    """Build a labelled dataset of the requested shape with a stable
    id-hash train/test split. Both splits contain every family."""
    if task_shape not in TASK_SHAPES:
        raise ValueError(f"unknown task shape {task_shape!r}")
    if task_shape == "seq_class" and len(families) < 2:
        raise InsufficientFamiliesError(
            "family classification needs at least 2 families")
    if not families:
        raise InsufficientFamiliesError("no families supplied")

    examples: list[TaskExample] = []
    for fam_idx, family in enumerate(families):
        fam_examples = []
        for row in range(1, family.msa.k + 1):
            record = family.msa.sequence_record(row)
            if task_shape == "token_class":
                targets = family.true_residue_targets(row)
                label = tuple(int(targets[i].max() > CONSERVED_THRESHOLD)
                              for i in range(len(record.residues)))
            elif task_shape == "seq_class":
                label = fam_idx
            elif task_shape == "seq_regression":
                label = _sequence_score(family, row)
            else:
                label = _contact_pairs(family, row)
            fam_examples.append(TaskExample(
                id=record.id, family_index=fam_idx, residues=record.residues,
                split=_split_tag(record.id, test_fraction), label=label))
        # keep every family present on both sides of the split
        for side in ("train", "test"):
            if not any(ex.split == side for ex in fam_examples):
                mover = min(fam_examples, key=lambda ex: stable_id_hash(ex.id))
                fam_examples[fam_examples.index(mover)] = TaskExample(
                    id=mover.id, family_index=mover.family_index,
                    residues=mover.residues, split=side, label=mover.label)
        examples.extend(fam_examples)
    return TaskDataset(task=task_shape, examples=tuple(examples),
                       num_classes=len(families) if task_shape == "seq_class" else 2
                       if task_shape == "token_class" else 0)


def format_task_label(task_shape: str, label) -> str:
    if task_shape == "token_class":
        return "".join(str(v) for v in label)
    if task_shape == "seq_class":
        return str(label)
    if task_shape == "seq_regression":
        return f"{label:.10g}"
    return ",".join(f"{i}-{j}" for i, j in label)


def parse_task_label(task_shape: str, text: str):
    if task_shape == "token_class":
        return tuple(int(c) for c in text)
    if task_shape == "seq_class":
        return int(text)
    if task_shape == "seq_regression":
        return float(text)
    if not text:
        return ()
    return tuple(tuple(int(v) for v in part.split("-")) for part in text.split(","))


def write_task_manifest(dataset: TaskDataset) -> str:
    """Tab-separated manifest: id, split, label (contact pairs 0-based)."""
    lines = [f"# task={dataset.task}\tnum_classes={dataset.num_classes}"]
    for ex in dataset.examples:
        lines.append(f"{ex.id}\t{ex.split}\t"
                     f"{format_task_label(dataset.task, ex.label)}")
    return "\n".join(lines) + "\n"


def read_task_manifest(text: str, sequences: dict[str, str],
                       family_of: dict[str, int] | None = None) -> TaskDataset:
    """Rebuild a TaskDataset from a manifest plus an id -> residues map."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ShapeMismatchError("manifest missing its header line")
    header = dict(part.split("=", 1) for part in lines[0][1:].strip().split("\t"))
    task = header["task"]
    examples = []
    for ln in lines[1:]:
        parts = ln.split("\t")
        if len(parts) == 2:  # empty label field (e.g. contact with no pairs)
            parts.append("")
        sid, split, label_text = parts
        fam = family_of.get(sid, 0) if family_of else 0
        examples.append(TaskExample(
            id=sid, family_index=fam, residues=sequences[sid], split=split,
            label=parse_task_label(task, label_text)))
    return TaskDataset(task=task, examples=tuple(examples),
                       num_classes=int(header.get("num_classes", 0)))
