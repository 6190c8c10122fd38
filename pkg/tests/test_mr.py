import pytest
from hypothesis import given
from hypothesis import strategies as st

from mrgen.errors import ParseError, SchemaError, ValidationError
from mrgen.mr import (E2E_SCHEMA, WEBNLG_SCHEMA, MeaningRepresentation,
                      canonical_order, parse_mr, render_mr, serialize_condition)

TABLE_MR = "name[Giraffe], eatType[pub], food[Fast food], area[riverside], familyFriendly[yes]"


def test_parse_five_pairs():
    mr = parse_mr(TABLE_MR)
    assert len(mr.pairs) == 5
    assert mr.pairs[-1] == ("familyFriendly", "yes")
    assert mr.value("food") == "Fast food"


def test_parse_single_pair_keeps_value_spaces():
    mr = parse_mr("name[The Rice Boat]")
    assert mr.pairs == (("name", "The Rice Boat"),)


def test_parse_duplicate_slot_rejected():
    with pytest.raises(ValidationError):
        parse_mr("name[X], name[Y]")


def test_parse_unknown_slot_named_in_error():
    with pytest.raises(SchemaError, match="wheelchair"):
        parse_mr("wheelchair[yes]")


def test_parse_unbalanced_brackets():
    with pytest.raises(ParseError):
        parse_mr("name[Giraffe")


def test_parse_empty_string():
    with pytest.raises(ParseError):
        parse_mr("")


def test_parse_resorts_to_canonical_order():
    mr = parse_mr("area[riverside], name[Giraffe]")
    assert mr.slots() == ["name", "area"]


def test_canonical_order_idempotent():
    mr = parse_mr(TABLE_MR)
    assert canonical_order(mr) == mr


def test_round_trip_is_fixed_point():
    mr = parse_mr(TABLE_MR)
    assert parse_mr(render_mr(mr)) == mr


def test_round_trip_fixed_point_over_corpus(small_corpus):
    for sample in small_corpus.samples:
        mr = parse_mr(sample.mr_text)
        assert parse_mr(render_mr(mr)) == mr


def test_webnlg_repeats_allowed_and_grouped_order_kept():
    pairs = (
        ("category", "Airport"),
        ("subject", "Aarhus"), ("property", "leaderName"), ("object", "Jacob_Bundsgaard"),
        ("subject", "Aarhus_Airport"), ("property", "cityServed"), ("object", "Aarhus"),
    )
    mr = MeaningRepresentation(pairs, WEBNLG_SCHEMA)
    assert canonical_order(mr).pairs == pairs


def test_webnlg_category_moved_first():
    pairs = (
        ("subject", "A"), ("property", "p"), ("object", "B"),
        ("category", "Airport"),
    )
    ordered = canonical_order(MeaningRepresentation(pairs, WEBNLG_SCHEMA))
    assert ordered.pairs[0] == ("category", "Airport")
    assert ordered.pairs[1:] == pairs[:3]


@given(st.permutations(["name", "eatType", "food", "priceRange",
                        "customer rating", "area", "familyFriendly", "near"]))
def test_canonical_order_invariant_under_permutation(perm):
    mr = MeaningRepresentation(tuple((s, "v") for s in perm), E2E_SCHEMA)
    ordered = canonical_order(mr)
    assert [s for s, _ in ordered.pairs] == list(E2E_SCHEMA.slots)


def test_empty_mr_rejected():
    with pytest.raises(ValidationError):
        MeaningRepresentation((), E2E_SCHEMA)


class TestSerializeCondition:
    def test_table_mr_layout(self, small_vocab):
        mr = parse_mr(TABLE_MR)
        ids = serialize_condition(mr, small_vocab)
        assert ids[-1] == small_vocab.start_id
        assert ids.count(small_vocab.start_id) == 1
        specials = [i for i in ids if small_vocab.is_special(i)]
        # one slot token per pair plus START
        assert len(specials) == len(mr.pairs) + 1
        assert ids[0] == small_vocab.special_id("<name>")

    def test_value_spans_decode_exactly(self, small_vocab):
        mr = parse_mr(TABLE_MR)
        ids = serialize_condition(mr, small_vocab)
        spans: list[list[int]] = []
        for token_id in ids:
            if small_vocab.is_special(token_id):
                spans.append([])
            else:
                spans[-1].append(token_id)
        decoded = [small_vocab.decode(span) for span in spans[:-1]]
        assert decoded == [v for _s, v in mr.pairs]

    def test_single_pair_price_range(self, small_vocab):
        mr = parse_mr("priceRange[more than £30]")
        ids = serialize_condition(mr, small_vocab)
        assert ids[0] == small_vocab.special_id("<priceRange>")
        assert small_vocab.decode(ids[1:-1]) == "more than £30"

    def test_non_canonical_mr_rejected(self, small_vocab):
        mr = MeaningRepresentation((("area", "riverside"), ("name", "X")), E2E_SCHEMA)
        with pytest.raises(ValidationError):
            serialize_condition(mr, small_vocab)
