import json

import pytest
from hypothesis import given, settings, strategies as st

from formpoint.docmodel import (
    BBox, Corpus, KeyIntent, LayoutCategory, PairRelation, Role, SchemaError,
    Segment, iou, load_corpus, pair_relation, parse_label, save_corpus,
    document_to_record,
)
from formpoint.synthform import NoiseProfile, TemplateSpec, generate_document


finite_coord = st.floats(-1e4, 1e4, allow_nan=False, allow_infinity=False)
positive_extent = st.floats(0.1, 1e3, allow_nan=False, allow_infinity=False)
boxes = st.builds(BBox, finite_coord, finite_coord, positive_extent,
                  positive_extent)


class TestBBox:
    def test_rejects_negative_extent(self):
        with pytest.raises(ValueError):
            BBox(0, 0, -1, 5)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            BBox(float("nan"), 0, 1, 1)

    def test_derived_coordinates(self):
        b = BBox(10, 20, 30, 40)
        assert (b.x2, b.y2, b.cx, b.cy, b.area) == (40, 60, 25, 40, 1200)


class TestIoU:
    def test_identical_box(self):
        assert iou(BBox(0, 0, 10, 10), BBox(0, 0, 10, 10)) == 1.0

    def test_disjoint(self):
        assert iou(BBox(0, 0, 5, 5), BBox(10, 10, 5, 5)) == 0.0

    def test_half_overlap_hand_case(self):
        # intersection 10x5 = 50, union 100 + 50 - 50 = 100
        assert iou(BBox(0, 0, 10, 10), BBox(0, 0, 10, 5)) == pytest.approx(0.5)

    def test_both_zero_area(self):
        assert iou(BBox(3, 3, 0, 0), BBox(3, 3, 0, 0)) == 0.0

    @given(boxes, boxes, finite_coord, finite_coord)
    @settings(max_examples=200)
    def test_symmetric_and_translation_invariant(self, a, b, dx, dy):
        assert iou(a, b) == pytest.approx(iou(b, a))
        assert iou(a.translated(dx, dy), b.translated(dx, dy)) == \
            pytest.approx(iou(a, b), abs=1e-9)

    @given(boxes)
    def test_self_iou_is_one(self, a):
        assert iou(a, a) == pytest.approx(1.0)


class TestPairRelation:
    def test_same_row_horizontal(self):
        assert pair_relation(BBox(0, 0, 50, 10),
                             BBox(60, 0, 50, 10)) is PairRelation.HORIZONTAL

    def test_stacked_vertical(self):
        assert pair_relation(BBox(0, 0, 50, 10),
                             BBox(0, 20, 50, 10)) is PairRelation.VERTICAL

    def test_small_overlap_hand_case(self):
        # y-intervals [0,10] and [8,18]: overlap 2 of min height 10 = 0.2
        assert pair_relation(BBox(0, 0, 50, 10),
                             BBox(60, 8, 50, 10)) is PairRelation.VERTICAL

    @given(boxes, boxes, st.floats(0.01, 100))
    @settings(max_examples=200)
    def test_scale_invariant(self, key, value, factor):
        assert pair_relation(key, value) is \
            pair_relation(key.scaled(factor), value.scaled(factor))


class TestLabels:
    def test_compound_round_trip(self):
        for intent in KeyIntent:
            for role in (Role.KEY, Role.VALUE):
                cat, parsed_intent, parsed_role = parse_label(
                    f"{intent.value}_{role.value}")
                assert parsed_intent is intent
                assert parsed_role is role
                assert cat in {LayoutCategory.FORM_KEY, LayoutCategory.FORM_VALUE,
                               LayoutCategory.TABLE_KEY, LayoutCategory.TABLE_VALUE}

    def test_unknown_label_rejected(self):
        with pytest.raises(ValueError):
            parse_label("mystery_key")


MINIMAL_FILE = {
    "documents": [{
        "page_w": 100.0, "page_h": 100.0, "nature": "digital",
        "segments": [{"id": 0, "bbox": [10, 10, 50, 12],
                      "text": "Form 604", "label": "title"}],
        "tokens": [], "links": [],
    }]
}


class TestCorpusIO:
    def test_minimal_round_trip(self, tmp_path):
        path = tmp_path / "one.json"
        path.write_text(json.dumps(MINIMAL_FILE))
        docs = load_corpus(path)
        assert len(docs) == 1
        page = docs[0].page
        assert len(page.segments) == 1
        assert page.segments[0].category is LayoutCategory.TITLE
        assert docs[0].links == ()

    def test_form_value_without_intent_is_schema_error(self, tmp_path):
        bad = json.loads(json.dumps(MINIMAL_FILE))
        bad["documents"][0]["segments"][0]["label"] = "form_value"
        path = tmp_path / "bad.json"
        path.write_text(json.dumps(bad))
        with pytest.raises(SchemaError, match="segment 0"):
            load_corpus(path)

    def test_duplicate_segment_id_is_schema_error(self, tmp_path):
        bad = json.loads(json.dumps(MINIMAL_FILE))
        bad["documents"][0]["segments"].append(
            {"id": 0, "bbox": [10, 40, 50, 12], "text": "again",
             "label": "others"})
        path = tmp_path / "dup.json"
        path.write_text(json.dumps(bad))
        with pytest.raises(SchemaError, match="duplicate segment id"):
            load_corpus(path)

    def test_empty_corpus_file(self, tmp_path):
        path = tmp_path / "empty.json"
        save_corpus([], path)
        assert load_corpus(path) == []
        assert json.loads(path.read_text()) == {"documents": []}

    def test_save_is_byte_stable(self, tmp_path, zero_noise_doc):
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        save_corpus([zero_noise_doc], p1)
        save_corpus([zero_noise_doc], p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_generator_round_trip_ten_pages(self, tmp_path):
        docs = [generate_document(seed, TemplateSpec(), NoiseProfile.printed())
                for seed in range(10)]
        path = tmp_path / "ten.json"
        save_corpus(docs, path)
        loaded = load_corpus(path)
        assert loaded == docs

    @pytest.mark.parametrize("seed", [0, 7, 123])
    def test_round_trip_property_over_seeds(self, tmp_path, seed):
        doc = generate_document(seed, TemplateSpec(),
                                NoiseProfile.handwritten())
        path = tmp_path / f"s{seed}.json"
        save_corpus([doc], path)
        assert load_corpus(path) == [doc]

    def test_corpus_split_round_trip(self, tmp_path, small_zero_noise_corpus):
        small_zero_noise_corpus.save(tmp_path / "corpus")
        again = Corpus.load(tmp_path / "corpus")
        assert again.splits == small_zero_noise_corpus.splits


class TestInvariants:
    def test_segment_role_must_match_category(self):
        with pytest.raises(ValueError):
            Segment(id=0, bbox=BBox(0, 0, 1, 1), text="k",
                    category=LayoutCategory.FORM_KEY,
                    intent=KeyIntent.COM_NM, role=Role.VALUE)

    def test_record_shape(self, zero_noise_doc):
        record = document_to_record(zero_noise_doc)
        assert set(record) == {"page_w", "page_h", "nature", "segments",
                               "tokens", "links"}
        assert all(set(seg) == {"id", "bbox", "text", "label"}
                   for seg in record["segments"])
