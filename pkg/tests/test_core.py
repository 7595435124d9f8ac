import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rcmu.core import (
    UNANSWERABLE,
    AnnotatedImage,
    BoundingBox,
    DescriptionRecord,
    Entity,
    HumanRating,
    JudgeVerdict,
    MCQItem,
    ObjectContext,
    RCVQAItem,
    RecordError,
    canonical_answer,
    read_jsonl,
    validate_image,
    validate_mcq,
    validate_rcvqa_item,
    write_jsonl,
)


def obj(key, box=(10, 10, 50, 50), info="A retired chef from Lyon.", oid=None, cat="person"):
    return ObjectContext(oid or f"o{key}", cat, BoundingBox(*box), info, key)


def test_inverted_box_is_reported():
    img = AnnotatedImage("a.jpg", 100, 100, (obj(1, (10, 10, 5, 20)),))
    assert validate_image(img) == ["bbox: x1 < x2 violated"]


def test_contiguous_keys_are_valid():
    img = AnnotatedImage("a.jpg", 100, 100, tuple(obj(k, oid=f"o{k}") for k in (1, 2, 3)))
    assert validate_image(img) == []


def test_gap_in_keys():
    img = AnnotatedImage("a.jpg", 100, 100, (obj(1), obj(3)))
    assert validate_image(img) == ["citation_key: gap at 2"]


def test_other_violations():
    img = AnnotatedImage("a.jpg", 40, 100, (obj(1, info=" "), obj(1, oid="o1")))
    problems = validate_image(img)
    assert "info_text: empty" in problems
    assert "bbox: x2 <= width violated" in problems
    assert "object_id: duplicate 'o1'" in problems
    assert "citation_key: duplicate 1" in problems


def test_normalized_box_warning():
    img = AnnotatedImage("a.jpg", 640, 480, (ObjectContext("o1", "dog", BoundingBox(0, 0, 1, 1), "x", 1),))
    assert any("normalized" in p for p in validate_image(img))


def test_validation_is_order_insensitive():
    a = AnnotatedImage("a.jpg", 100, 100, (obj(1, (5, 5, 1, 1)), obj(2, info="")))
    b = AnnotatedImage("a.jpg", 100, 100, tuple(reversed(a.objects)))
    assert sorted(validate_image(a)) == sorted(validate_image(b))


def test_unanswerable_aliases():
    assert canonical_answer("Not enough information.") == UNANSWERABLE
    assert canonical_answer("a red bike") == "a red bike"


def test_rcvqa_item_validation():
    img = AnnotatedImage("a.jpg", 100, 100, (obj(1),))
    assert validate_rcvqa_item(RCVQAItem("q", img, "Q?", "yes", "V2C", frozenset({1}))) == []
    assert validate_rcvqa_item(RCVQAItem("q", img, "Q?", "yes", "UA_V2C"))
    assert validate_rcvqa_item(RCVQAItem("q", img, "Q?", "x", "XYZ"))
    assert validate_rcvqa_item(RCVQAItem("q", img, "Q?", "x", "C2V", frozenset({4})))


def test_mcq_validation():
    e = (Entity("e1", "p"),)
    good = MCQItem("m", "q.jpg", e, "e1", "Q?", ("a", "b", "none"), 0, 2, "V2C")
    assert validate_mcq(good) == []
    bad = MCQItem("m", "q.jpg", e, "e9", "Q?", ("a", "b"), 2, 2, "X")
    assert len(validate_mcq(bad)) == 5


def test_round_trip_three_items(tmp_path):
    img = AnnotatedImage("a.jpg", 100, 100, (obj(1), obj(2, oid="o2")))
    items = [RCVQAItem(f"q{i}", img, f"Question {i}?", "ans", "C2V", frozenset({1})) for i in range(3)]
    path = tmp_path / "items.jsonl"
    assert write_jsonl(path, items) == 3
    assert read_jsonl(path, RCVQAItem) == items


def test_empty_file(tmp_path):
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert read_jsonl(p, RCVQAItem) == []


def test_truncated_line_names_line_1(tmp_path):
    p = tmp_path / "bad.jsonl"
    p.write_text('{"schema_version": 1, "item_id": "q1", "ima\n')
    with pytest.raises(RecordError) as err:
        read_jsonl(p, RCVQAItem)
    assert err.value.line_no == 1
    assert err.value.prefix.startswith('{"schema_version"')
    assert "line 1" in str(err.value)


def test_schema_version_required(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text(json.dumps({"item_id": "a", "level": 3}) + "\n")
    with pytest.raises(RecordError, match="schema_version"):
        read_jsonl(p, HumanRating)


def test_missing_field_reports_line(tmp_path):
    p = tmp_path / "x.jsonl"
    p.write_text('{"schema_version": 1, "item_id": "a", "level": 3}\n{"schema_version": 1, "item_id": "b"}\n')
    with pytest.raises(RecordError) as err:
        read_jsonl(p, HumanRating)
    assert err.value.line_no == 2


def test_rubric_names():
    assert HumanRating.from_dict({"item_id": "a", "level": "Very Poor"}).level == 1
    assert HumanRating.from_dict({"item_id": "a", "level": "excellent"}).level == 5


def test_bbox_format():
    assert str(BoundingBox(10, 20, 110, 220)) == "[10, 20, 110, 220]"


# ----------------------------------------------------------- property tests

texts = st.text(min_size=1, max_size=30)


@st.composite
def images(draw):
    n = draw(st.integers(0, 4))
    objs = []
    for i in range(n):
        x1 = draw(st.integers(0, 100))
        y1 = draw(st.integers(0, 100))
        objs.append(ObjectContext(f"o{i}", draw(st.sampled_from(["dog", "person"])),
                                  BoundingBox(x1, y1, x1 + draw(st.integers(1, 50)), y1 + draw(st.integers(1, 50))),
                                  draw(texts), i + 1))
    return AnnotatedImage(draw(st.text(min_size=1, max_size=10)), 640, 480, tuple(objs))


@settings(max_examples=60, deadline=None)
@given(img=images(), q=texts, cat=st.sampled_from(["V2C", "C2V", "UA_V2C", "UA_C2V"]),
       keys=st.frozensets(st.integers(1, 4)))
def test_rcvqa_round_trip(tmp_path_factory, img, q, cat, keys):
    item = RCVQAItem("id-1", img, q, UNANSWERABLE if cat.startswith("UA") else "answer", cat, keys)
    p = tmp_path_factory.mktemp("rt") / "x.jsonl"
    write_jsonl(p, [item])
    assert read_jsonl(p, RCVQAItem) == [item]


@settings(max_examples=40, deadline=None)
@given(img=images(), text=texts, model=st.text(max_size=8))
def test_description_round_trip(tmp_path_factory, img, text, model):
    rec = DescriptionRecord("d", img, text, model)
    p = tmp_path_factory.mktemp("rt") / "x.jsonl"
    write_jsonl(p, [rec])
    assert read_jsonl(p, DescriptionRecord) == [rec]


@settings(max_examples=40, deadline=None)
@given(opts=st.lists(texts, min_size=2, max_size=5), refs=st.lists(texts, max_size=2))
def test_mcq_and_verdict_round_trip(tmp_path_factory, opts, refs):
    item = MCQItem("m1", "q.jpg", (Entity("e1", "profile", tuple(refs)),), "e1", "Q?", tuple(opts), 0, 1, "C2V", "who")
    v = JudgeVerdict("binary", True, "Yes.", "rcid.mention", "abc")
    d = tmp_path_factory.mktemp("rt")
    write_jsonl(d / "m.jsonl", [item])
    write_jsonl(d / "v.jsonl", [v])
    assert read_jsonl(d / "m.jsonl", MCQItem) == [item]
    assert read_jsonl(d / "v.jsonl", JudgeVerdict) == [v]


def test_mixed_entity_categories_is_a_soft_warning():
    ents = (Entity("a", "x", category="dog"), Entity("b", "y", category="cat"))
    item = MCQItem("m", "q.jpg", ents, "a", "Q?", ("a", "b", "none"), 0, 2, "V2C")
    assert validate_mcq(item) == ["entities: mixed categories ['cat', 'dog'] (warning)"]
    assert Entity.from_dict(ents[0].to_dict()) == ents[0]
