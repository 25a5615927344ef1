from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from textkg.extraction import (
    Provenance,
    Triplet,
    parse_chat_triples,
    parse_seq2seq_output,
    serialize_seq2seq_output,
)


class TestSeq2seqParser:
    def test_single_triplet(self):
        triplets, report = parse_seq2seq_output("<triplet> Samsung <subj> industry <obj> electronics")
        assert triplets == [Triplet("Samsung", "industry", "electronics")]
        assert report.triplets_emitted == 1
        assert report.segments_skipped == 0

    def test_multiple_triplets(self):
        text = (
            "<triplet> Samsung <subj> industry <obj> electronics "
            "<triplet> Samsung <subj> founded <obj> 1938"
        )
        triplets, _ = parse_seq2seq_output(text)
        assert [t.object for t in triplets] == ["electronics", "1938"]

    def test_noise_tokens_stripped(self):
        text = "<s><triplet> Samsung <subj> industry<pad> <obj> electronics</s>"
        triplets, report = parse_seq2seq_output(text)
        assert triplets == [Triplet("Samsung", "industry", "electronics")]
        assert report.segments_skipped == 0

    def test_missing_subj_marker_skipped(self):
        triplets, report = parse_seq2seq_output("<triplet> A <obj> B")
        assert triplets == []
        assert report.segments_skipped == 1
        assert "missing <subj>" in report.skip_reasons[0][1]

    def test_obj_before_subj_skipped(self):
        triplets, report = parse_seq2seq_output("<triplet> A <obj> B <subj> C")
        assert triplets == []
        assert report.segments_skipped == 1

    def test_empty_field_skipped(self):
        triplets, report = parse_seq2seq_output("<triplet> A <subj> <obj> C")
        assert triplets == []
        assert report.segments_skipped == 1

    def test_duplicate_marker_skipped(self):
        triplets, report = parse_seq2seq_output("<triplet> A <subj> B <subj> C <obj> D")
        assert triplets == []
        assert report.segments_skipped == 1

    def test_text_before_first_marker_counts_once(self):
        triplets, report = parse_seq2seq_output("noise here <triplet> A <subj> b <obj> C")
        assert len(triplets) == 1
        assert report.segments_skipped == 1
        assert "before the first" in report.skip_reasons[0][1]

    def test_whitespace_before_first_marker_not_counted(self):
        _, report = parse_seq2seq_output("   <triplet> A <subj> b <obj> C")
        assert report.segments_skipped == 0

    def test_no_markers_at_all(self):
        triplets, report = parse_seq2seq_output("just some prose")
        assert triplets == []
        assert report.segments_skipped == 1

    def test_empty_string(self):
        triplets, report = parse_seq2seq_output("")
        assert triplets == []
        assert report.triplets_emitted == 0
        assert report.segments_skipped == 0

    def test_provenance_attached(self):
        prov = Provenance("a1", 2, "b1")
        triplets, _ = parse_seq2seq_output("<triplet> A <subj> b <obj> C", prov)
        assert triplets[0].provenance == prov

    def test_internal_whitespace_collapsed(self):
        triplets, _ = parse_seq2seq_output("<triplet>  New   York <subj> located  in <obj> the   USA ")
        assert triplets == [Triplet("New York", "located in", "the USA")]

    def test_accounting_identity(self):
        text = (
            "junk <triplet> A <subj> b <obj> C <triplet> broken <triplet> D <subj> e <obj> F"
        )
        triplets, report = parse_seq2seq_output(text)
        # 4 segments: head junk, one good, one broken, one good
        assert report.triplets_emitted == len(triplets) == 2
        assert report.segments_skipped == 2
        assert report.triplets_emitted + report.segments_skipped == 4


class TestSeq2seqRoundTrip:
    def test_serialize_format(self):
        triplets = [Triplet("A", "b", "C"), Triplet("D", "e", "F")]
        text = serialize_seq2seq_output(triplets)
        assert text == "<triplet> A <subj> b <obj> C <triplet> D <subj> e <obj> F"

    # field alphabet avoids whitespace runs and marker-like substrings; the
    # round trip is only promised for fields the markers can delimit
    fields = st.text(alphabet="abcdefgh XYZ'", min_size=1, max_size=20).map(
        lambda s: " ".join(s.split())
    ).filter(bool)

    @given(st.lists(st.tuples(fields, fields, fields), min_size=0, max_size=8))
    @settings(max_examples=300, deadline=None)
    def test_round_trip(self, rows):
        triplets = [Triplet(s, p, o) for s, p, o in rows]
        parsed, report = parse_seq2seq_output(serialize_seq2seq_output(triplets))
        assert parsed == triplets
        assert report.segments_skipped == 0
        assert report.triplets_emitted == len(triplets)

    @given(st.text(alphabet="abc <subj> <obj> <triplet> <s> </s> <pad>|\n", max_size=400))
    @settings(max_examples=500, deadline=None)
    def test_fuzz_never_crashes_and_accounts(self, text: str):
        triplets, report = parse_seq2seq_output(text)
        assert report.triplets_emitted == len(triplets)
        assert report.segments_skipped == len(report.skip_reasons)
        for triplet in triplets:
            assert triplet.subject and triplet.predicate and triplet.object


class TestChatTriplesParser:
    def test_basic_lines(self):
        text = "Soluna | utilizes | Excess Energy\nSoluna | operates in | Kentucky"
        triplets, report = parse_chat_triples(text)
        assert len(triplets) == 2
        assert triplets[1] == Triplet("Soluna", "operates in", "Kentucky")
        assert report.segments_skipped == 0

    def test_bullets_and_numbering_stripped(self):
        text = "- A | b | C\n* D | e | F\n1. G | h | I\n2) J | k | L\n(3) M | n | O"
        triplets, report = parse_chat_triples(text)
        assert [t.subject for t in triplets] == ["A", "D", "G", "J", "M"]
        assert report.segments_skipped == 0

    def test_preamble_line_ignored_not_skipped(self):
        text = "Here are the extracted relations:\nA | b | C"
        triplets, report = parse_chat_triples(text)
        assert len(triplets) == 1
        assert report.segments_skipped == 0

    def test_prose_without_colon_is_skipped(self):
        triplets, report = parse_chat_triples("this line is junk\nA | b | C")
        assert len(triplets) == 1
        assert report.segments_skipped == 1

    def test_fences_ignored(self):
        text = "```\nA | b | C\n```"
        triplets, report = parse_chat_triples(text)
        assert len(triplets) == 1
        assert report.segments_skipped == 0

    def test_wrong_field_count_skipped(self):
        for bad in ("A | b", "A | b | C | d", "A |  | C"):
            triplets, report = parse_chat_triples(bad)
            assert triplets == []
            assert report.segments_skipped == 1

    def test_blank_lines_ignored(self):
        triplets, report = parse_chat_triples("\n\nA | b | C\n\n")
        assert len(triplets) == 1
        assert report.segments_skipped == 0

    def test_provenance_attached(self):
        prov = Provenance("a9", None, "chat")
        triplets, _ = parse_chat_triples("A | b | C", prov)
        assert triplets[0].provenance == prov

    @given(st.text(alphabet="abc |:\n`-*1.)(", max_size=300))
    @settings(max_examples=500, deadline=None)
    def test_fuzz_accounting(self, text: str):
        triplets, report = parse_chat_triples(text)
        assert report.triplets_emitted == len(triplets)
        assert report.segments_skipped == len(report.skip_reasons)
        for triplet in triplets:
            assert "|" not in triplet.subject
            assert triplet.subject == triplet.subject.strip()


class TestTripletValidation:
    def test_empty_fields_rejected(self):
        for bad in (("", "b", "c"), ("a", " ", "c"), ("a", "b", "")):
            with pytest.raises(ValueError):
                Triplet(*bad)
