import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from formpoint.docmodel import BBox
from formpoint.geoenc import (
    XYPosConfig, apply_xy_pos, linear_pe, normalized_coords, xpos, xy_offsets,
    ypos,
)

coords = st.floats(0, 900, allow_nan=False, allow_infinity=False)
extents = st.floats(0.5, 500, allow_nan=False, allow_infinity=False)
box_strategy = st.builds(BBox, coords, coords, extents, extents)


class TestXpos:
    def test_full_width_box(self):
        cfg = XYPosConfig(m=4, n=2)
        vec = xpos(BBox(0, 0, 1000, 10), 1000, cfg)
        assert vec == pytest.approx([0.25, 0.5, 0.75, 1.0] * 2)

    def test_zero_width_box_is_constant(self):
        cfg = XYPosConfig(m=5, n=3)
        vec = xpos(BBox(300, 0, 0, 10), 1000, cfg)
        assert vec == pytest.approx([0.3] * 15)

    def test_hand_computed_block(self):
        # (100 + 200*l/4) / 1000 for l = 1..4
        cfg = XYPosConfig(m=4, n=1)
        vec = xpos(BBox(100, 0, 200, 10), 1000, cfg)
        assert vec == pytest.approx([0.15, 0.2, 0.25, 0.3])

    def test_tiling_is_contiguous_copies(self):
        cfg = XYPosConfig(m=3, n=4)
        vec = xpos(BBox(50, 0, 30, 10), 500, cfg)
        block = vec[:3]
        assert vec == pytest.approx(list(block) * 4)

    def test_default_dimensionality_768(self):
        assert XYPosConfig().d_model == 768
        assert xpos(BBox(1, 2, 3, 4), 100).shape == (768,)


class TestYpos:
    def test_full_height_box(self):
        cfg = XYPosConfig(m=4, n=2)
        vec = ypos(BBox(0, 0, 10, 800), 800, cfg)
        assert vec == pytest.approx([0.25, 0.5, 0.75, 1.0] * 2)

    def test_axis_symmetry_with_xpos(self):
        cfg = XYPosConfig(m=8, n=3)
        b = BBox(120, 45, 210, 66)
        transposed = BBox(45, 120, 66, 210)
        assert ypos(transposed, 1000, cfg) == pytest.approx(
            xpos(b, 1000, cfg))

    def test_hand_computed_block(self):
        # (50 + 100*l/4) / 1000 for l = 1..4
        cfg = XYPosConfig(m=4, n=1)
        vec = ypos(BBox(0, 50, 10, 100), 1000, cfg)
        assert vec == pytest.approx([0.075, 0.1, 0.125, 0.15])


class TestApply:
    def test_zero_reps_gives_pure_offsets(self):
        cfg = XYPosConfig(m=4, n=2)
        boxes = [BBox(10, 20, 30, 40), BBox(100, 200, 50, 60)]
        out = apply_xy_pos(np.zeros((2, 8)), boxes, 1000, 1000, cfg)
        expected = xy_offsets(boxes, 1000, 1000, cfg)
        assert out == pytest.approx(expected)

    def test_offset_independent_of_reps(self, rng):
        cfg = XYPosConfig(m=4, n=2)
        boxes = [BBox(10, 20, 30, 40)]
        r1 = rng.normal(size=(1, 8))
        r2 = rng.normal(size=(1, 8))
        d1 = apply_xy_pos(r1, boxes, 1000, 1000, cfg) - r1
        d2 = apply_xy_pos(r2, boxes, 1000, 1000, cfg) - r2
        assert d1 == pytest.approx(d2)

    def test_batch_matches_per_element(self, rng):
        cfg = XYPosConfig(m=4, n=4)
        boxes = [BBox(10, 20, 30, 40), BBox(5, 5, 100, 10),
                 BBox(400, 300, 80, 25)]
        reps = rng.normal(size=(3, 16))
        batch = apply_xy_pos(reps, boxes, 1000, 800, cfg)
        for i, box in enumerate(boxes):
            single = apply_xy_pos(reps[i:i + 1], [box], 1000, 800, cfg)
            assert batch[i] == pytest.approx(single[0])

    def test_width_mismatch_rejected(self):
        cfg = XYPosConfig(m=4, n=2)
        with pytest.raises(ValueError):
            apply_xy_pos(np.zeros((1, 9)), [BBox(0, 0, 1, 1)], 10, 10, cfg)


class TestLinearPE:
    def test_zero_weight(self):
        out = linear_pe([BBox(10, 20, 30, 40)], np.zeros((4, 8)), 100, 100)
        assert not out.any()

    def test_identity_weight_reproduces_coords(self):
        out = linear_pe([BBox(10, 20, 30, 40)], np.eye(4), 100, 200)
        assert out[0] == pytest.approx([0.1, 0.1, 0.3, 0.2])

    def test_golden_from_reference_formula(self):
        rng = np.random.default_rng(99)
        weight = rng.normal(size=(4, 6))
        box = BBox(120, 40, 60, 20)
        out = linear_pe([box], weight, 1000, 500)
        coords = [120 / 1000, 40 / 500, 60 / 1000, 20 / 500]
        expected = [sum(coords[i] * weight[i, j] for i in range(4))
                    for j in range(6)]
        assert out[0] == pytest.approx(expected)

    def test_bad_weight_shape_rejected(self):
        with pytest.raises(ValueError):
            linear_pe([BBox(0, 0, 1, 1)], np.zeros((5, 8)), 10, 10)


class TestProperties:
    @given(box_strategy, st.floats(1, 200))
    @settings(max_examples=100)
    def test_horizontal_translation_equivariance(self, b, dx):
        cfg = XYPosConfig(m=6, n=2)
        W = 2000.0
        moved = BBox(b.x + dx, b.y, b.w, b.h)
        shift = xpos(moved, W, cfg) - xpos(b, W, cfg)
        assert shift == pytest.approx(np.full(12, dx / W), abs=1e-9)
        assert ypos(moved, W, cfg) == pytest.approx(ypos(b, W, cfg))

    @given(box_strategy, st.floats(0.1, 50))
    @settings(max_examples=100)
    def test_scale_invariance(self, b, factor):
        cfg = XYPosConfig(m=5, n=2)
        assert xpos(b.scaled(factor), 1000 * factor, cfg) == \
            pytest.approx(xpos(b, 1000, cfg))

    @given(box_strategy, box_strategy)
    @settings(max_examples=200)
    def test_injective_on_distinct_x_extent(self, a, b):
        cfg = XYPosConfig(m=4, n=1)
        if abs(a.x - b.x) > 1e-6 or abs(a.w - b.w) > 1e-6:
            assert not np.allclose(xpos(a, 1000, cfg), xpos(b, 1000, cfg),
                                   atol=1e-12)
