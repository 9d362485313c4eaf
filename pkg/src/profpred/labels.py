"""Per-residue target distributions for alignment rows.

Each residue of a row gets the emission distribution of the profile node
its column maps to: match emissions for residues sitting in match columns,
insert emissions of the flanking node for inserted residues. Match columns
where the row has a gap (deletions) contribute no label row, so a label
sequence always has exactly one row per residue.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from ._binio import (
    check_magic,
    read_f32_array,
    read_str,
    read_u8,
    read_u32,
    write_f32_array,
    write_str,
    write_u8,
    write_u32,
)
from .alphabet import ALPHABET_SIZE, is_gap
from .exceptions import (
    EmptyRowError,
    IndexOutOfRangeError,
    MalformedRecordError,
    ProfileMismatchError,
    ShapeMismatchError,
)
from .msa import Msa
from .profile import ColumnClasses, ProfileHmm, insert_node_for_column, match_map_inverse
from .validation import check_index, check_row_stochastic

PPLB_MAGIC = b"PPLB"
PPLB_VERSION = 1

MATCH_STATE = 0
INSERT_STATE = 1


@dataclass(frozen=True)
class LabelSequence:
    """Target distributions l_1..l_n for one ungapped sequence.

    states holds 0 (match) or 1 (insert) per residue; source_node the
    1-based profile node each label row was taken from.
    """

    id: str
    labels: np.ndarray  # (n, 20)
    states: tuple[int, ...]
    source_node: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(
            self, "labels", np.ascontiguousarray(self.labels, dtype=np.float64))
        object.__setattr__(self, "states", tuple(int(s) for s in self.states))
        object.__setattr__(
            self, "source_node", tuple(int(j) for j in self.source_node))
        if self.labels.ndim != 2 or self.labels.shape[0] == 0:
            raise ShapeMismatchError("labels must be a non-empty (n, 20) matrix")
        # float32 round-tripped labels sum to 1 within ~1e-7; fresh ones
        # are exact profile rows (float64).
        check_row_stochastic(self.labels, ALPHABET_SIZE, 1e-6, "labels")
        if len(self.states) != self.n or len(self.source_node) != self.n:
            raise ShapeMismatchError("states/source_node length differs from n")
        if any(s not in (MATCH_STATE, INSERT_STATE) for s in self.states):
            raise ShapeMismatchError("states must be 0 (match) or 1 (insert)")
        self.labels.flags.writeable = False

    @property
    def n(self) -> int:
        return self.labels.shape[0]

    @property
    def is_all_insert(self) -> bool:
        """True when every residue sits in an insert column."""
        return all(s == INSERT_STATE for s in self.states)


def residue_column_map(row: str) -> tuple[int, ...]:
    """Map g: residue index -> 1-based alignment column of that residue."""
    g = tuple(j + 1 for j, ch in enumerate(row) if not is_gap(ch))
    if not g:
        raise EmptyRowError("row has no residues")
    return g


def residue_state(classes: ColumnClasses, g: tuple[int, ...], i: int) -> int:
    """State of residue i (1-based): match iff its column is a match column."""
    if not 1 <= i <= len(g):
        raise IndexOutOfRangeError(f"residue index {i} outside [1, {len(g)}]")
    return MATCH_STATE if classes.is_match(g[i - 1]) else INSERT_STATE


def build_labels(msa: Msa, row_index: int, classes: ColumnClasses,
                 profile: ProfileHmm) -> LabelSequence:
    """Label one alignment row (1-based index) against its profile.

    Label rows are taken verbatim from the profile's emission matrices;
    deleted match columns produce nothing.
    """
    check_index(row_index, msa.k, "row index")
    if classes.m != msa.m:
        raise ProfileMismatchError(
            f"classes cover {classes.m} columns, alignment has {msa.m}")
    if profile.num_columns != msa.m:
        raise ProfileMismatchError(
            f"profile built for {profile.num_columns} columns, alignment has {msa.m}")
    if profile.match_map != classes.match_columns:
        raise ProfileMismatchError("profile match map disagrees with column classes")

    row = msa.rows[row_index - 1]
    g = residue_column_map(row)
    rows = np.empty((len(g), ALPHABET_SIZE), dtype=np.float64)
    states = []
    nodes = []
    for i, col in enumerate(g):
        if classes.is_match(col):
            node = match_map_inverse(profile, col)
            rows[i] = profile.match_emissions[node - 1]
            states.append(MATCH_STATE)
        else:
            node = insert_node_for_column(profile, col)
            rows[i] = profile.insert_emissions[node - 1]
            states.append(INSERT_STATE)
        nodes.append(node)
    return LabelSequence(
        id=msa.ids[row_index - 1],
        labels=rows,
        states=tuple(states),
        source_node=tuple(nodes),
    )


def build_all_labels(msa: Msa, classes: ColumnClasses,
                     profile: ProfileHmm) -> list[LabelSequence]:
    """Labels for every row of the alignment, in row order."""
    return [build_labels(msa, i + 1, classes, profile) for i in range(msa.k)]


def write_labels(records: list[LabelSequence]) -> bytes:
    """Serialize label sequences to the binary label file (magic PPLB)."""
    fh = io.BytesIO()
    fh.write(PPLB_MAGIC)
    write_u32(fh, PPLB_VERSION)
    write_u32(fh, len(records))
    for rec in records:
        write_str(fh, rec.id)
        write_u32(fh, rec.n)
        write_f32_array(fh, rec.labels)
        for s in rec.states:
            write_u8(fh, s)
    return fh.getvalue()


def read_labels(data) -> list[LabelSequence]:
    """Parse bytes produced by write_labels.

    source_node is not stored on disk; deserialized records carry node 0
    for every residue (the training loop never uses it).
    """
    fh = io.BytesIO(data) if isinstance(data, (bytes, bytearray)) else data
    check_magic(fh, PPLB_MAGIC)
    version = read_u32(fh)
    if version != PPLB_VERSION:
        raise MalformedRecordError(f"unsupported label file version {version}")
    count = read_u32(fh)
    records = []
    for _ in range(count):
        rid = read_str(fh)
        n = read_u32(fh)
        labels = read_f32_array(fh, (n, ALPHABET_SIZE)).astype(np.float64)
        states = tuple(read_u8(fh) for _ in range(n))
        records.append(LabelSequence(
            id=rid,
            labels=labels,
            states=states,
            source_node=(0,) * n,
        ))
    return records
