"""Alignment parsing and the in-memory alignment matrix.

Supports single-record Stockholm 1.0 and aligned FASTA. Both gap symbols
'-' and '.' are accepted and treated identically for occupancy; '.' is the
usual padding inside insert regions. Lowercase residues (the aligned-FASTA
insert convention) are uppercased on load and the per-cell flag is kept so
column classification can honor the file's own match/insert marking.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .alphabet import AA_INDEX, GAP_CHARS, UNKNOWN_RESIDUE, is_gap
from .exceptions import (
    EmptyAlignmentError,
    EmptyRowError,
    IllegalCharacterError,
    MalformedRecordError,
)
from .validation import check_index

_LEGAL_UPPER = set(AA_INDEX) | {UNKNOWN_RESIDUE} | set(GAP_CHARS)


@dataclass(frozen=True)
class SequenceRecord:
    """One ungapped protein sequence."""

    id: str
    residues: str

    def __post_init__(self):
        if not self.residues:
            raise EmptyRowError(f"sequence {self.id!r} has no residues")
        for i, ch in enumerate(self.residues):
            if ch not in AA_INDEX and ch != UNKNOWN_RESIDUE:
                raise IllegalCharacterError(ch, self.id, i + 1)

    def __len__(self) -> int:
        return len(self.residues)


@dataclass(frozen=True)
class Msa:
    """Validated gapped alignment matrix.

    rows are uppercase with original gap characters preserved; lowercase
    holds, per row, the frozen set of 0-based column indices whose input
    cell was lowercase.
    """

    rows: tuple[str, ...]
    ids: tuple[str, ...]
    ref_annotation: str | None = None
    lowercase: tuple[frozenset[int], ...] = field(default=())

    def __post_init__(self):
        if not self.rows:
            raise EmptyAlignmentError("alignment has no rows")
        if len(self.ids) != len(self.rows):
            raise MalformedRecordError(
                f"{len(self.ids)} ids for {len(self.rows)} rows"
            )
        m = len(self.rows[0])
        if m == 0:
            raise EmptyAlignmentError("alignment has no columns")
        for rid, row in zip(self.ids, self.rows):
            if len(row) != m:
                raise MalformedRecordError(
                    f"row {rid!r} has length {len(row)}, expected {m}"
                )
            for j, ch in enumerate(row):
                if ch not in _LEGAL_UPPER:
                    raise IllegalCharacterError(ch, rid, j + 1)
        if len(set(self.ids)) != len(self.ids):
            raise MalformedRecordError("duplicate row ids")
        if self.ref_annotation is not None and len(self.ref_annotation) != m:
            raise MalformedRecordError(
                f"reference annotation length {len(self.ref_annotation)} != {m}"
            )
        if not self.lowercase:
            object.__setattr__(
                self, "lowercase", tuple(frozenset() for _ in self.rows)
            )
        elif len(self.lowercase) != len(self.rows):
            raise MalformedRecordError("lowercase flags do not match row count")

    @property
    def k(self) -> int:
        """Row (sequence) count."""
        return len(self.rows)

    @property
    def m(self) -> int:
        """Column count."""
        return len(self.rows[0])

    def sequence_record(self, row_index: int) -> SequenceRecord:
        """Degap one row (1-based index) into a SequenceRecord."""
        check_index(row_index, self.k, "row index")
        row = self.rows[row_index - 1]
        residues = "".join(ch for ch in row if not is_gap(ch))
        return SequenceRecord(id=self.ids[row_index - 1], residues=residues)


def column_occupancy(msa: Msa, j: int) -> float:
    """Fraction of non-gap cells in 1-based column j. 'X' counts as non-gap."""
    check_index(j, msa.m, "column index")
    non_gap = sum(1 for row in msa.rows if not is_gap(row[j - 1]))
    return non_gap / msa.k


def _as_text(data) -> str:
    if isinstance(data, (bytes, bytearray)):
        try:
            return data.decode("ascii")
        except UnicodeDecodeError as exc:
            raise MalformedRecordError(f"input is not 7-bit text: {exc}") from None
    return data


def _finalize(ids, raw_rows, ref_annotation):
    if not ids:
        raise EmptyAlignmentError("no sequences in record")
    rows = []
    lowercase = []
    for raw in raw_rows:
        if not raw:
            raise EmptyAlignmentError("record contains an empty sequence")
        rows.append(raw.upper())
        lowercase.append(frozenset(i for i, ch in enumerate(raw) if ch.islower()))
    return Msa(
        rows=tuple(rows),
        ids=tuple(ids),
        ref_annotation=ref_annotation,
        lowercase=tuple(lowercase),
    )


def parse_stockholm(data) -> Msa:
    """Parse one Stockholm 1.0 record (bytes or str) into an Msa.

    Sequence lines may wrap across blocks; repeated ids are concatenated in
    file order. A "#=GC RF" line is kept as the reference annotation; all
    other markup is skipped. The record must end with "//".
    """
    text = _as_text(data)
    ids: list[str] = []
    chunks: dict[str, list[str]] = {}
    rf_chunks: list[str] = []
    terminated = False
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        if terminated:
            raise MalformedRecordError(
                f"content after record terminator at line {lineno}"
            )
        if line.startswith("//"):
            terminated = True
            continue
        if line.startswith("#"):
            parts = line.split(None, 2)
            if len(parts) == 3 and parts[0] == "#=GC" and parts[1] == "RF":
                rf_chunks.append(parts[2].strip())
            continue
        parts = line.split()
        if len(parts) != 2:
            raise MalformedRecordError(
                f"cannot parse sequence line {lineno}: {line!r}"
            )
        name, seq = parts
        if name not in chunks:
            ids.append(name)
            chunks[name] = []
        chunks[name].append(seq)
    if not terminated:
        raise MalformedRecordError('missing record terminator "//"')
    raw_rows = ["".join(chunks[name]) for name in ids]
    ref = "".join(rf_chunks) if rf_chunks else None
    return _finalize(ids, raw_rows, ref)


def parse_aligned_fasta(data) -> Msa:
    """Parse aligned FASTA (bytes or str) into an Msa.

    The id is the first whitespace-delimited token of each header; all
    gapped sequences must have equal length.
    """
    text = _as_text(data)
    ids: list[str] = []
    raw_rows: list[str] = []
    current: list[str] | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.rstrip("\r")
        if not line.strip():
            continue
        if line.startswith(">"):
            header = line[1:].strip()
            if not header:
                raise MalformedRecordError(f"empty header at line {lineno}")
            name = header.split()[0]
            if name in ids:
                raise MalformedRecordError(f"duplicate id {name!r} at line {lineno}")
            ids.append(name)
            current = []
            raw_rows.append("")
        elif current is None:
            raise MalformedRecordError(
                f"sequence data before first header at line {lineno}"
            )
        else:
            raw_rows[-1] += line.strip()
    return _finalize(ids, raw_rows, None)


def write_aligned_fasta(msa: Msa) -> str:
    """Serialize an Msa to aligned FASTA, restoring lowercase insert cells.

    Round-trips through parse_aligned_fasta to an equal Msa (the reference
    annotation has no FASTA representation and is dropped).
    """
    out = []
    for row, rid, low in zip(msa.rows, msa.ids, msa.lowercase):
        cells = [ch.lower() if i in low else ch for i, ch in enumerate(row)]
        out.append(f">{rid}\n{''.join(cells)}\n")
    return "".join(out)
