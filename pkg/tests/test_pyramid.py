"""Pyramid gating: degeneracies, locality, contraction, divisibility."""

import numpy as np
import pytest

from attnpyr.attention import channel_attention, spatial_attention
from attnpyr.errors import DivisibilityError, GeometryError
from attnpyr.pyramid import (
    PyramidConfig,
    apply_level,
    build_levels,
    level_attention,
    num_parts,
    pyramid_forward,
)
from attnpyr.tensor import Tensor


class TestNumParts:
    def test_paper_values(self):
        assert num_parts(1, 2) == 2
        assert num_parts(3, 2) == 8

    def test_radix_one_never_splits(self):
        for lvl in range(1, 6):
            assert num_parts(lvl, 1) == 1

    def test_invalid_args(self):
        with pytest.raises(GeometryError):
            num_parts(0, 2)
        with pytest.raises(GeometryError):
            num_parts(1, 0)


def _zero_weights(levels):
    for lvl in levels:
        for blk in lvl.blocks:
            for _, t in blk.named_tensors():
                t.data[:] = 0


class TestLevelAttention:
    def test_single_part_equals_base_attention(self):
        rng = np.random.default_rng(0)
        cfg = PyramidConfig(radix=1, levels=1, kind="channel")
        levels = build_levels(8, 3, 3, cfg, rng)
        x = Tensor(rng.normal(size=(8, 3, 3)))
        gate = level_attention(x, levels[0], cfg)
        base = channel_attention(x, levels[0].blocks[0])
        assert np.array_equal(gate.data, base.data)

    def test_zero_weights_give_half_everywhere(self):
        rng = np.random.default_rng(1)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(4, 3, 3, cfg, rng)
        _zero_weights(levels)
        gate = level_attention(Tensor(rng.normal(size=(4, 3, 3))), levels[0], cfg)
        np.testing.assert_array_equal(gate.data, np.full(4, 0.5))

    def test_part_locality_by_construction(self):
        rng = np.random.default_rng(2)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(4, 3, 3, cfg, rng)
        x = rng.normal(size=(4, 3, 3))
        gate = level_attention(Tensor(x), levels[0], cfg)
        lo = channel_attention(Tensor(x[:2]), levels[0].blocks[0])
        hi = channel_attention(Tensor(x[2:]), levels[0].blocks[1])
        np.testing.assert_allclose(gate.data[:2], lo.data, atol=1e-15)
        np.testing.assert_allclose(gate.data[2:], hi.data, atol=1e-15)

    def test_spatial_kind_splits_height(self):
        rng = np.random.default_rng(3)
        cfg = PyramidConfig(radix=2, levels=1, kind="spatial")
        levels = build_levels(3, 4, 2, cfg, rng)
        x = rng.normal(size=(3, 4, 2))
        gate = level_attention(Tensor(x), levels[0], cfg)
        assert gate.shape == (4, 2)
        top = spatial_attention(Tensor(x[:, :2, :]), levels[0].blocks[0])
        np.testing.assert_allclose(gate.data[:2], top.data, atol=1e-15)

    def test_zeroing_other_part_leaves_gate_slice(self):
        rng = np.random.default_rng(4)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(8, 2, 2, cfg, rng)
        for blk in levels[0].blocks:  # positive weights keep relu active
            blk.w1.data[:] = 0.3
            blk.w2.data[:] = 0.4
        x = np.abs(rng.normal(size=(8, 2, 2))) + 0.1
        x_zeroed = x.copy()
        x_zeroed[4:] = 0
        g1 = level_attention(Tensor(x), levels[0], cfg).data
        g2 = level_attention(Tensor(x_zeroed), levels[0], cfg).data
        np.testing.assert_array_equal(g1[:4], g2[:4])
        assert not np.array_equal(g1[4:], g2[4:])


class TestApplyLevel:
    def test_zero_weights_halve_input(self):
        rng = np.random.default_rng(5)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(4, 3, 3, cfg, rng)
        _zero_weights(levels)
        x = rng.normal(size=(4, 3, 3))
        out = apply_level(Tensor(x), levels[0], cfg)
        np.testing.assert_array_equal(out.data, x / 2)

    def test_zero_input_stays_zero(self):
        rng = np.random.default_rng(6)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(4, 3, 3, cfg, rng)
        out = apply_level(Tensor(np.zeros((4, 3, 3))), levels[0], cfg)
        np.testing.assert_array_equal(out.data, np.zeros((4, 3, 3)))

    def test_strict_elementwise_contraction(self):
        rng = np.random.default_rng(7)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(8, 3, 3, cfg, rng)
        x = rng.normal(size=(8, 3, 3))
        out = apply_level(Tensor(x), levels[0], cfg).data
        nz = x != 0
        assert np.all(np.abs(out[nz]) < np.abs(x[nz]))

    def test_shape_preserved(self):
        rng = np.random.default_rng(8)
        for kind, shape in (("channel", (8, 3, 3)), ("spatial", (3, 4, 3))):
            cfg = PyramidConfig(radix=2, levels=1, kind=kind)
            levels = build_levels(*shape, cfg, rng)
            x = Tensor(rng.normal(size=shape))
            assert apply_level(x, levels[0], cfg).shape == x.shape


class TestPyramidForward:
    def test_zero_levels_is_identity(self):
        rng = np.random.default_rng(9)
        cfg = PyramidConfig(radix=2, levels=0, kind="channel")
        x = Tensor(rng.normal(size=(4, 3, 3)))
        out = pyramid_forward(x, [], cfg)
        assert out is x

    def test_radix_one_equals_sequential_whole_tensor_attention(self):
        rng = np.random.default_rng(10)
        cfg = PyramidConfig(radix=1, levels=2, kind="channel")
        levels = build_levels(8, 3, 3, cfg, rng)
        x = rng.normal(size=(8, 3, 3))
        out = pyramid_forward(Tensor(x), levels, cfg).data

        cur = Tensor(x)
        for lvl in levels:
            gate = channel_attention(cur, lvl.blocks[0])
            cur = Tensor(cur.data * gate.data.reshape(-1, 1, 1))
        assert np.array_equal(out, cur.data)

    def test_two_zero_levels_quarter_input(self):
        rng = np.random.default_rng(11)
        cfg = PyramidConfig(radix=2, levels=2, kind="channel")
        levels = build_levels(16, 3, 3, cfg, rng)
        _zero_weights(levels)
        x = rng.normal(size=(16, 3, 3))
        out = pyramid_forward(Tensor(x), levels, cfg)
        np.testing.assert_allclose(out.data, x / 4, atol=1e-16)

    def test_contraction_through_levels(self):
        rng = np.random.default_rng(12)
        cfg = PyramidConfig(radix=2, levels=2, kind="channel")
        levels = build_levels(8, 2, 2, cfg, rng)
        x = rng.normal(size=(8, 2, 2))
        prev = x
        for lvl in levels:
            nxt = apply_level(Tensor(prev), lvl, cfg).data
            nz = prev != 0
            assert np.all(np.abs(nxt[nz]) < np.abs(prev[nz]))
            prev = nxt

    def test_divisibility_abort_names_level(self):
        rng = np.random.default_rng(13)
        cfg = PyramidConfig(radix=2, levels=1, kind="channel")
        levels = build_levels(4, 3, 3, cfg, rng)
        bad = Tensor(rng.normal(size=(7, 3, 3)))
        with pytest.raises(DivisibilityError) as exc:
            pyramid_forward(bad, levels, cfg)
        assert exc.value.level == 1

    def test_out_of_order_levels_rejected(self):
        rng = np.random.default_rng(14)
        cfg = PyramidConfig(radix=2, levels=2, kind="channel")
        levels = build_levels(16, 3, 3, cfg, rng)
        with pytest.raises(GeometryError, match="coarse to fine"):
            pyramid_forward(Tensor(np.ones((16, 3, 3))), levels[::-1], cfg)

    def test_build_fails_fast_on_indivisible_geometry(self):
        rng = np.random.default_rng(15)
        cfg = PyramidConfig(radix=4, levels=1, kind="channel")
        with pytest.raises(DivisibilityError):
            build_levels(6, 3, 3, cfg, rng)
        cfg = PyramidConfig(radix=2, levels=2, kind="spatial")
        with pytest.raises(DivisibilityError):
            build_levels(8, 6, 3, cfg, rng)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(16)
        cfg = PyramidConfig(radix=2, levels=2, kind="channel")
        levels = build_levels(8, 2, 2, cfg, rng)
        xb = rng.normal(size=(3, 8, 2, 2))
        out = pyramid_forward(Tensor(xb), levels, cfg).data
        for b in range(3):
            single = pyramid_forward(Tensor(xb[b]), levels, cfg).data
            np.testing.assert_allclose(out[b], single, atol=1e-14)

    def test_gate_sink_collects_levels(self):
        rng = np.random.default_rng(17)
        cfg = PyramidConfig(radix=2, levels=2, kind="channel")
        levels = build_levels(8, 2, 2, cfg, rng)
        sink = []
        pyramid_forward(Tensor(rng.normal(size=(8, 2, 2))), levels, cfg, gate_sink=sink)
        assert [i for i, _ in sink] == [1, 2]
        assert all(g.shape == (8,) for _, g in sink)
