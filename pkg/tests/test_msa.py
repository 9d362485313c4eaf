"""Alignment parsing, occupancy, and round-trip behaviour."""
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from profpred.exceptions import (
    EmptyAlignmentError,
    IllegalCharacterError,
    IndexOutOfRangeError,
    MalformedRecordError,
)
from profpred.msa import (
    Msa,
    column_occupancy,
    parse_aligned_fasta,
    parse_stockholm,
    write_aligned_fasta,
)


class TestParseStockholm:
    def test_minimal_two_rows(self):
        text = "# STOCKHOLM 1.0\nseq1 AC-D\nseq2 ACED\n//\n"
        msa = parse_stockholm(text)
        assert msa.k == 2 and msa.m == 4
        assert msa.ids == ("seq1", "seq2")
        assert msa.rows == ("AC-D", "ACED")

    def test_wrapped_blocks_concatenate(self):
        text = ("seq1 AC\nseq2 AC\n\nseq1 -D\nseq2 ED\n//\n")
        msa = parse_stockholm(text)
        assert msa.rows == ("AC-D", "ACED")

    def test_ragged_after_concatenation(self):
        text = "seq1 AC-D\nseq2 ACE\n//\n"
        with pytest.raises(MalformedRecordError):
            parse_stockholm(text)

    def test_rf_annotation_stored(self):
        text = "#=GC RF xx.x\nseq1 AC-D\nseq2 ACED\n//\n"
        msa = parse_stockholm(text)
        assert msa.ref_annotation == "xx.x"

    def test_rf_annotation_wrapped(self):
        text = "seq1 AC\n#=GC RF xx\n\nseq1 -D\n#=GC RF .x\n//\n"
        msa = parse_stockholm(text)
        assert msa.ref_annotation == "xx.x"

    def test_other_markup_skipped(self):
        text = ("#=GF ID FAKE\n#=GS seq1 AC X\nseq1 AC-D\n"
                "#=GR seq1 SS ....\n//\n")
        msa = parse_stockholm(text)
        assert msa.k == 1 and msa.ref_annotation is None

    def test_missing_terminator(self):
        with pytest.raises(MalformedRecordError):
            parse_stockholm("seq1 ACD\n")

    def test_content_after_terminator(self):
        with pytest.raises(MalformedRecordError):
            parse_stockholm("seq1 ACD\n//\nseq2 ACD\n//\n")

    def test_empty_record(self):
        with pytest.raises(EmptyAlignmentError):
            parse_stockholm("# STOCKHOLM 1.0\n//\n")

    def test_illegal_character_reports_position(self):
        with pytest.raises(IllegalCharacterError) as err:
            parse_stockholm("seq1 AC9D\n//\n")
        assert err.value.column == 3
        assert err.value.row_id == "seq1"

    def test_accepts_bytes_and_crlf(self):
        msa = parse_stockholm(b"seq1 AC-D\r\nseq2 ACED\r\n//\r\n")
        assert msa.k == 2

    def test_non_ascii_bytes_rejected(self):
        with pytest.raises(MalformedRecordError):
            parse_stockholm("seq1 ACÉD\n//\n".encode("utf-8"))


class TestParseAlignedFasta:
    def test_two_records(self):
        msa = parse_aligned_fasta(">a\nA-C\n>b\nAAC\n")
        assert msa.k == 2 and msa.m == 3
        assert msa.ids == ("a", "b")

    def test_single_record_is_valid(self):
        msa = parse_aligned_fasta(">only\nACDEF\n")
        assert msa.k == 1

    def test_unequal_lengths(self):
        with pytest.raises(MalformedRecordError):
            parse_aligned_fasta(">a\nACD\n>b\nACDE\n")

    def test_id_is_first_token(self):
        msa = parse_aligned_fasta(">a description here\nACD\n")
        assert msa.ids == ("a",)

    def test_wrapped_sequence_lines(self):
        msa = parse_aligned_fasta(">a\nAC\nD-\n>b\nACDE\n")
        assert msa.rows == ("ACD-", "ACDE")

    def test_lowercase_recorded_and_uppercased(self):
        msa = parse_aligned_fasta(">a\nAcD\n>b\nAaD\n")
        assert msa.rows == ("ACD", "AAD")
        assert msa.lowercase == (frozenset({1}), frozenset({1}))

    def test_duplicate_ids_rejected(self):
        with pytest.raises(MalformedRecordError):
            parse_aligned_fasta(">a\nAC\n>a\nAC\n")

    def test_empty_input(self):
        with pytest.raises(EmptyAlignmentError):
            parse_aligned_fasta("")

    def test_data_before_header(self):
        with pytest.raises(MalformedRecordError):
            parse_aligned_fasta("ACD\n>a\nACD\n")


class TestMsaInvariants:
    def test_duplicate_row_ids_rejected(self):
        with pytest.raises(MalformedRecordError):
            Msa(rows=("AC", "AC"), ids=("x", "x"))

    def test_ragged_rows_rejected(self):
        with pytest.raises(MalformedRecordError):
            Msa(rows=("AC", "ACD"), ids=("x", "y"))

    def test_annotation_length_checked(self):
        with pytest.raises(MalformedRecordError):
            Msa(rows=("AC",), ids=("x",), ref_annotation="xxx")

    def test_degap_row(self):
        msa = Msa(rows=("A-C.D",), ids=("x",))
        rec = msa.sequence_record(1)
        assert rec.residues == "ACD"
        assert rec.id == "x"

    def test_degap_length_identity(self):
        msa = Msa(rows=("A-C.D", "AAAAA"), ids=("x", "y"))
        for i, row in enumerate(msa.rows):
            gaps = sum(1 for ch in row if ch in "-.")
            assert len(msa.sequence_record(i + 1).residues) == msa.m - gaps


class TestColumnOccupancy:
    def test_two_of_three(self):
        msa = Msa(rows=("A", "-", "A"), ids=("a", "b", "c"))
        assert column_occupancy(msa, 1) == pytest.approx(2 / 3)

    def test_all_gap_column(self):
        msa = Msa(rows=("A-", "A-"), ids=("a", "b"))
        assert column_occupancy(msa, 2) == 0.0

    def test_gap_free_column(self):
        msa = Msa(rows=("A", "C"), ids=("a", "b"))
        assert column_occupancy(msa, 1) == 1.0

    def test_x_counts_as_non_gap(self):
        msa = Msa(rows=("X", "-"), ids=("a", "b"))
        assert column_occupancy(msa, 1) == 0.5

    def test_out_of_range(self):
        msa = Msa(rows=("A",), ids=("a",))
        for j in (0, 2):
            with pytest.raises(IndexOutOfRangeError):
                column_occupancy(msa, j)


_row_strategy = st.text(alphabet="ACDEFGHIKLMNPQRSTVWY-.X", min_size=1,
                        max_size=12)


@st.composite
def msa_strategy(draw):
    m = draw(st.integers(min_value=1, max_value=10))
    k = draw(st.integers(min_value=1, max_value=6))
    rows = tuple(
        "".join(draw(st.sampled_from("ACDEFGHIKLMNPQRSTVWY-.X"))
                for _ in range(m))
        for _ in range(k))
    lowercase = tuple(
        frozenset(j for j in range(m)
                  if rows[i][j] not in "-." and draw(st.booleans()))
        for i in range(k))
    ids = tuple(f"s{i}" for i in range(k))
    return Msa(rows=rows, ids=ids, lowercase=lowercase)


@given(msa=msa_strategy())
@settings(max_examples=60, deadline=None)
def test_fasta_round_trip(msa):
    assert parse_aligned_fasta(write_aligned_fasta(msa)) == msa


@given(msa=msa_strategy())
@settings(max_examples=60, deadline=None)
def test_occupancy_bounds_and_count_identity(msa):
    occ = [column_occupancy(msa, j + 1) for j in range(msa.m)]
    assert all(0.0 <= v <= 1.0 for v in occ)
    non_gap_total = round(sum(v * msa.k for v in occ))
    residue_total = sum(
        sum(1 for ch in row if ch not in "-.") for row in msa.rows)
    assert non_gap_total == residue_total
