"""Column classification and profile-HMM emission estimation.

Columns are split into match and insert states either by an occupancy
threshold (symfrac) or by the alignment's own reference annotation.
Emissions are estimated with additive pseudocounts and optional
position-based (Henikoff) sequence weighting; transition probabilities are
not modeled because the labels downstream use emissions only.

Weights are normalized to mean 1 (sum k), so uniform weighting reproduces
raw residue counts: a column {A, A, A} with pseudocount 1 gives
p(A) = (3 + 1) / (3 + 20).
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ._binio import (
    check_magic,
    read_f32_array,
    read_u32,
    write_f32_array,
    write_u32,
)
from .alphabet import AA_INDEX, ALPHABET_SIZE, AMINO_ACIDS, is_gap
from .exceptions import (
    MalformedRecordError,
    MissingAnnotationError,
    NegativePseudocountError,
    NoMatchColumnsError,
    ShapeMismatchError,
)
from .msa import Msa, column_occupancy
from .validation import check_index, check_row_stochastic

PPHM_MAGIC = b"PPHM"
PPHM_VERSION = 1

MATCH = "M"
INSERT = "I"

DEFAULT_SYMFRAC = 0.5
DEFAULT_PSEUDOCOUNT = 0.1


@dataclass(frozen=True)
class ColumnClasses:
    """Per-column match/insert tags for one alignment.

    tags is a string of 'M'/'I' characters, one per column; policy records
    which classification rule produced it.
    """

    tags: str
    policy: str = "occupancy"

    def __post_init__(self):
        if not self.tags:
            raise ShapeMismatchError("column classes are empty")
        bad = set(self.tags) - {MATCH, INSERT}
        if bad:
            raise ShapeMismatchError(f"unknown column tags {sorted(bad)}")

    @property
    def m(self) -> int:
        return len(self.tags)

    @property
    def match_count(self) -> int:
        return self.tags.count(MATCH)

    @property
    def match_columns(self) -> tuple[int, ...]:
        """1-based columns tagged match, in increasing order (the map f)."""
        return tuple(j + 1 for j, tag in enumerate(self.tags) if tag == MATCH)

    def is_match(self, column: int) -> bool:
        check_index(column, self.m, "column index")
        return self.tags[column - 1] == MATCH


def classify_columns(msa: Msa, policy: str = "occupancy",
                     symfrac: float = DEFAULT_SYMFRAC) -> ColumnClasses:
    """Tag each column match or insert.

    policy "occupancy": match iff non-gap fraction >= symfrac.
    policy "rf": match where the reference annotation is not a gap symbol.
    policy "lowercase": insert where any input cell was lowercase (the
    aligned-FASTA convention recorded at parse time).
    """
    if policy == "occupancy":
        tags = "".join(
            MATCH if column_occupancy(msa, j + 1) >= symfrac else INSERT
            for j in range(msa.m)
        )
    elif policy == "rf":
        if msa.ref_annotation is None:
            raise MissingAnnotationError(
                "alignment has no reference annotation; use the occupancy policy"
            )
        tags = "".join(
            INSERT if is_gap(ch) else MATCH for ch in msa.ref_annotation
        )
    elif policy == "lowercase":
        insert_cols = set()
        for flags in msa.lowercase:
            insert_cols.update(flags)
        tags = "".join(
            INSERT if j in insert_cols else MATCH for j in range(msa.m)
        )
    else:
        raise ValueError(f"unknown column policy {policy!r}")
    classes = ColumnClasses(tags=tags, policy=policy)
    if classes.match_count == 0:
        raise NoMatchColumnsError("no column qualifies as a match column")
    return classes


def uniform_weights(msa: Msa) -> np.ndarray:
    """Equal weight 1 per row (weights are kept at mean 1)."""
    return np.ones(msa.k, dtype=np.float64)


def henikoff_weights(msa: Msa) -> np.ndarray:
    """Position-based sequence weights, normalized to sum k.

    Each column contributes 1/(r*s) to a row, where r is the number of
    distinct standard residues in the column and s the multiplicity of the
    row's residue there. Gap and 'X' cells contribute nothing.
    """
    raw = np.zeros(msa.k, dtype=np.float64)
    for j in range(msa.m):
        counts: dict[str, int] = {}
        for row in msa.rows:
            ch = row[j]
            if ch in AA_INDEX:
                counts[ch] = counts.get(ch, 0) + 1
        r = len(counts)
        if r == 0:
            continue
        for i, row in enumerate(msa.rows):
            ch = row[j]
            if ch in AA_INDEX:
                raw[i] += 1.0 / (r * counts[ch])
    total = raw.sum()
    if total <= 0.0:
        return uniform_weights(msa)
    return raw * (msa.k / total)


def _row_weights(msa: Msa, weighting: str) -> np.ndarray:
    if weighting == "uniform":
        return uniform_weights(msa)
    if weighting == "henikoff":
        return henikoff_weights(msa)
    raise ValueError(f"unknown weighting {weighting!r}")


@dataclass(frozen=True)
class ProfileHmm:
    """Emission-only profile: match/insert distributions per node.

    match_map is the strictly increasing map f from node index (1-based)
    to alignment column (1-based); num_columns is the alignment width m.
    """

    match_emissions: np.ndarray  # (l, 20) float64, rows sum to 1
    insert_emissions: np.ndarray  # (l, 20) float64, rows sum to 1
    match_map: tuple[int, ...]
    num_columns: int
    alphabet: str = AMINO_ACIDS

    def __post_init__(self):
        object.__setattr__(
            self, "match_emissions",
            np.ascontiguousarray(self.match_emissions, dtype=np.float64))
        object.__setattr__(
            self, "insert_emissions",
            np.ascontiguousarray(self.insert_emissions, dtype=np.float64))
        object.__setattr__(self, "match_map", tuple(int(c) for c in self.match_map))
        # 1e-6 admits float32 round-tripped emissions; freshly estimated
        # profiles are float64 and sum to 1 within 1e-9 (tested).
        check_row_stochastic(self.match_emissions, ALPHABET_SIZE, 1e-6,
                             "match emissions")
        check_row_stochastic(self.insert_emissions, ALPHABET_SIZE, 1e-6,
                             "insert emissions")
        l = self.match_emissions.shape[0]
        if self.insert_emissions.shape[0] != l:
            raise ShapeMismatchError("match/insert node counts differ")
        if len(self.match_map) != l:
            raise ShapeMismatchError("match_map length differs from node count")
        if any(b <= a for a, b in zip(self.match_map, self.match_map[1:])):
            raise ShapeMismatchError("match_map must be strictly increasing")
        if l and not (1 <= self.match_map[0] and self.match_map[-1] <= self.num_columns):
            raise ShapeMismatchError("match_map columns outside [1, m]")
        self.match_emissions.flags.writeable = False
        self.insert_emissions.flags.writeable = False

    @property
    def num_nodes(self) -> int:
        return self.match_emissions.shape[0]


def _estimate_distribution(weighted_counts: np.ndarray, total_weight: float,
                           pseudocount: float) -> np.ndarray:
    if total_weight <= 0.0:
        return np.full(ALPHABET_SIZE, 1.0 / ALPHABET_SIZE)
    return (weighted_counts + pseudocount) / (
        total_weight + ALPHABET_SIZE * pseudocount
    )


def _column_counts(msa: Msa, columns, weights: np.ndarray):
    counts = np.zeros(ALPHABET_SIZE, dtype=np.float64)
    total = 0.0
    for j in columns:
        for i, row in enumerate(msa.rows):
            ch = row[j - 1]
            idx = AA_INDEX.get(ch)
            if idx is None:  # gap or unknown residue: no count
                continue
            counts[idx] += weights[i]
            total += weights[i]
    return counts, total


def insert_regions(classes: ColumnClasses) -> list[tuple[int, ...]]:
    """Insert columns owned by each node, 1-based, leading inserts to node 1."""
    f = classes.match_columns
    l = len(f)
    regions: list[list[int]] = [[] for _ in range(l)]
    for j, tag in enumerate(classes.tags, start=1):
        if tag != INSERT:
            continue
        # number of match columns strictly before column j
        preceding = sum(1 for col in f if col < j)
        node = max(1, preceding)
        regions[node - 1].append(j)
    return [tuple(r) for r in regions]


def build_profile(msa: Msa, classes: ColumnClasses,
                  pseudocount: float = DEFAULT_PSEUDOCOUNT,
                  weighting: str = "uniform") -> ProfileHmm:
    """Estimate match and insert emissions from a classified alignment.

    Match node j is estimated from its column f(j); insert node j from all
    residues in insert columns between f(j) and f(j+1) (leading insert
    columns attach to node 1, trailing ones to the last node). An insert
    region with no residues falls back to the uniform distribution.
    """
    if pseudocount < 0:
        raise NegativePseudocountError(f"pseudocount {pseudocount} < 0")
    if classes.m != msa.m:
        raise ShapeMismatchError(
            f"classes cover {classes.m} columns but alignment has {msa.m}"
        )
    if classes.match_count == 0:
        raise NoMatchColumnsError("cannot build a profile without match columns")
    weights = _row_weights(msa, weighting)

    f = classes.match_columns
    match_rows = []
    for col in f:
        counts, total = _column_counts(msa, (col,), weights)
        match_rows.append(_estimate_distribution(counts, total, pseudocount))

    insert_rows = []
    for region in insert_regions(classes):
        counts, total = _column_counts(msa, region, weights)
        insert_rows.append(_estimate_distribution(counts, total, pseudocount))

    return ProfileHmm(
        match_emissions=np.array(match_rows, dtype=np.float64),
        insert_emissions=np.array(insert_rows, dtype=np.float64),
        match_map=f,
        num_columns=msa.m,
    )


def match_map_inverse(profile: ProfileHmm, column: int) -> int | None:
    """Node j with f(j) == column, or None for insert columns."""
    check_index(column, profile.num_columns, "column index")
    # match_map is strictly increasing; binary search
    lo, hi = 0, len(profile.match_map) - 1
    while lo <= hi:
        mid = (lo + hi) // 2
        val = profile.match_map[mid]
        if val == column:
            return mid + 1
        if val < column:
            lo = mid + 1
        else:
            hi = mid - 1
    return None


def insert_node_for_column(profile: ProfileHmm, column: int) -> int:
    """Flanking node owning an insert column: node j for f(j) < column < f(j+1),
    node 1 for columns before f(1)."""
    check_index(column, profile.num_columns, "column index")
    preceding = 0
    for col in profile.match_map:
        if col < column:
            preceding += 1
        else:
            break
    return max(1, preceding)


def write_profile(profile: ProfileHmm) -> bytes:
    """Serialize to the flat binary profile record (magic PPHM)."""
    fh = io.BytesIO()
    fh.write(PPHM_MAGIC)
    write_u32(fh, PPHM_VERSION)
    write_u32(fh, profile.num_nodes)
    write_u32(fh, profile.num_columns)
    for col in profile.match_map:
        write_u32(fh, col)
    write_f32_array(fh, profile.match_emissions)
    write_f32_array(fh, profile.insert_emissions)
    return fh.getvalue()


def read_profile(data) -> ProfileHmm:
    """Parse bytes produced by write_profile."""
    fh = io.BytesIO(data) if isinstance(data, (bytes, bytearray)) else data
    check_magic(fh, PPHM_MAGIC)
    version = read_u32(fh)
    if version != PPHM_VERSION:
        raise MalformedRecordError(f"unsupported profile version {version}")
    l = read_u32(fh)
    m = read_u32(fh)
    match_map = tuple(read_u32(fh) for _ in range(l))
    match = read_f32_array(fh, (l, ALPHABET_SIZE)).astype(np.float64)
    insert = read_f32_array(fh, (l, ALPHABET_SIZE)).astype(np.float64)
    return ProfileHmm(
        match_emissions=match,
        insert_emissions=insert,
        match_map=match_map,
        num_columns=m,
    )


def format_profile_table(profile: ProfileHmm) -> str:
    """Human-readable dump: one row per node, 20 columns, 6 decimals."""
    header = "node\tcolumn\t" + "\t".join(AMINO_ACIDS)
    lines = ["# match emissions", header]
    for j in range(profile.num_nodes):
        vals = "\t".join(f"{v:.6f}" for v in profile.match_emissions[j])
        lines.append(f"{j + 1}\t{profile.match_map[j]}\t{vals}")
    lines.append("# insert emissions")
    lines.append(header)
    for j in range(profile.num_nodes):
        vals = "\t".join(f"{v:.6f}" for v in profile.insert_emissions[j])
        lines.append(f"{j + 1}\t{profile.match_map[j]}\t{vals}")
    return "\n".join(lines) + "\n"
