import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sketchattn.errors import InvalidConfigError, LengthMismatchError, ShapeMismatchError
from sketchattn.geometry import validate_and_normalize
from sketchattn.ingest import random_sketch
from sketchattn.raster import (
    RasterConfig,
    binary_rasterize,
    oracle_rasterize,
    order_encode_rasterize,
    order_ramp,
    rasterize_backward,
    rasterize_forward,
    segment_table,
    write_grid_json,
    write_pgm,
    write_provenance_json,
)

CFG64 = RasterConfig(width=64, height=64, epsilon=1.0)


def make(points):
    return validate_and_normalize(points)


class TestForward:
    def test_horizontal_segment_uniform_attention(self):
        sk = make([(10, 10, 0), (20, 10, 1)])
        cfg = RasterConfig(32, 32, 1.0)
        amap = rasterize_forward(sk, [1.0, 1.0], cfg)
        oracle = oracle_rasterize(sk, [1.0, 1.0], cfg)
        assert np.array_equal(amap.owner, oracle.owner)
        owned = amap.owner >= 0
        assert owned.any()
        assert np.all(amap.intensities[owned] == 1.0)
        assert np.all(amap.intensities[~owned] == 0.0)

    def test_zero_attention_zero_image_provenance_kept(self):
        rng = np.random.default_rng(1)
        sk = random_sketch(rng, 12, 64, 64)
        amap = rasterize_forward(sk, np.zeros(sk.n), CFG64)
        ref = rasterize_forward(sk, np.ones(sk.n), CFG64)
        assert np.all(amap.intensities == 0.0)
        assert np.array_equal(amap.owner, ref.owner)
        assert np.array_equal(amap.alpha, ref.alpha)

    def test_alpha_zero_pixel_gets_start_attention(self):
        # segment start at a pixel center: that pixel projects onto p_i
        sk = make([(8.5, 8.5, 0), (20.5, 8.5, 1)])
        amap = rasterize_forward(sk, [0.7, 0.2], RasterConfig(32, 32, 1.0))
        assert amap.alpha[8, 8] == 0.0
        assert amap.intensities[8, 8] == 0.7

    def test_default_config_is_224_eps_1(self):
        cfg = RasterConfig()
        assert (cfg.width, cfg.height, cfg.epsilon) == (224, 224, 1.0)

    def test_half_width_low_res_profile_constructible(self):
        # the 56x56 feature-map-injection resolution with half stroke width
        cfg = RasterConfig(width=56, height=56, epsilon=0.5)
        rng = np.random.default_rng(0)
        sk = random_sketch(rng, 10, 56, 56)
        amap = rasterize_forward(sk, np.ones(sk.n), cfg)
        assert amap.intensities.shape == (56, 56)
        assert amap.owned_pixel_count > 0

    def test_length_mismatch(self):
        sk = make([(0, 0, 0), (1, 0, 1)])
        with pytest.raises(LengthMismatchError):
            rasterize_forward(sk, [1.0], CFG64)

    def test_invalid_config(self):
        with pytest.raises(InvalidConfigError):
            RasterConfig(width=0, height=10, epsilon=1.0)
        with pytest.raises(InvalidConfigError):
            RasterConfig(width=10, height=10, epsilon=0.0)

    def test_point_stroke_renders_disc(self):
        sk = make([(16.5, 16.5, 1)])
        amap = rasterize_forward(sk, [0.8], RasterConfig(32, 32, 1.5))
        owned = amap.owner >= 0
        assert owned.any()
        assert np.all(amap.intensities[owned] == 0.8)
        # disc pixels carry alpha 0 on a degenerate segment
        table = amap.table
        assert len(table) == 1 and table.start[0] == table.end[0] == 0

    def test_point_discs_disabled(self):
        sk = make([(16.5, 16.5, 1)])
        cfg = RasterConfig(32, 32, 1.5, render_point_discs=False)
        amap = rasterize_forward(sk, [0.8], cfg)
        assert not (amap.owner >= 0).any()
        assert np.all(amap.intensities == 0.0)

    def test_attention_outside_unit_interval_accepted(self):
        sk = make([(5, 5, 0), (20, 5, 1)])
        amap = rasterize_forward(sk, [-1.0, 3.0], CFG64)
        owned = amap.owner >= 0
        assert owned.any()
        assert np.isfinite(amap.intensities[owned]).all()

    def test_painters_order_latest_segment_owns(self):
        # two crossing strokes: the second drawn owns the crossing pixel
        sk = make([(2.5, 16.5, 0), (30.5, 16.5, 1), (16.5, 2.5, 0), (16.5, 30.5, 1)])
        amap = rasterize_forward(sk, np.ones(4), RasterConfig(32, 32, 1.0))
        assert amap.owner[16, 16] == 1  # second entity (the vertical stroke)

    def test_boundary_at_exact_epsilon_excluded(self):
        # strict inequality: pixel centers exactly epsilon away stay off
        sk = make([(10.0, 10.5, 0), (20.0, 10.5, 1)])
        amap = rasterize_forward(sk, [1.0, 1.0], RasterConfig(32, 32, 1.0))
        assert amap.owner[10, 15] == 0  # distance 0
        assert amap.owner[9, 15] == -1  # distance exactly 1.0
        assert amap.owner[11, 15] == -1

    def test_provenance_at(self):
        sk = make([(5.5, 5.5, 0), (12.5, 5.5, 1)])
        amap = rasterize_forward(sk, [1.0, 0.0], RasterConfig(32, 32, 1.0))
        p = amap.provenance_at(5, 8)
        assert p.owner_segment == 0
        assert 0.0 <= p.alpha <= 1.0
        q = amap.provenance_at(31, 31)
        assert q.owner_segment is None and q.alpha is None


class TestOracleEquivalence:
    def test_bitwise_on_100_random_sketches(self):
        rng = np.random.default_rng(42)
        for _ in range(100):
            sk = random_sketch(rng, int(rng.integers(2, 25)), 32, 32)
            a = rng.uniform(-0.5, 1.5, sk.n)
            cfg = RasterConfig(32, 32, float(rng.uniform(0.5, 2.0)))
            fast = rasterize_forward(sk, a, cfg)
            ref = oracle_rasterize(sk, a, cfg)
            assert np.array_equal(fast.owner, ref.owner)
            assert np.array_equal(fast.alpha, ref.alpha)
            assert np.array_equal(fast.intensities, ref.intensities)

    def test_all_end_states_no_discs_zero_image(self):
        sk = make([(4, 4, 1), (20, 20, 1)])
        cfg = RasterConfig(32, 32, 1.0, render_point_discs=False)
        ref = oracle_rasterize(sk, [1.0, 1.0], cfg)
        assert np.all(ref.intensities == 0.0)
        assert not (ref.owner >= 0).any()

    def test_single_pixel_canvas(self):
        sk = make([(0.2, 0.5, 0), (0.9, 0.5, 1)])
        ref = oracle_rasterize(sk, [1.0, 1.0], RasterConfig(1, 1, 1.0))
        assert ref.owner[0, 0] == 0
        assert ref.intensities[0, 0] == 1.0


class TestBackward:
    def test_zero_delta_zero_gradient(self):
        rng = np.random.default_rng(2)
        sk = random_sketch(rng, 15, 64, 64)
        amap = rasterize_forward(sk, rng.uniform(0, 1, sk.n), CFG64)
        g = rasterize_backward(amap, np.zeros((64, 64)), sk.n)
        assert np.all(g == 0.0)

    def test_unit_delta_single_segment_sums_to_pixel_count(self):
        sk = make([(10, 10, 0), (50, 40, 1)])
        amap = rasterize_forward(sk, [0.3, 0.9], CFG64)
        g = rasterize_backward(amap, np.ones((64, 64)), sk.n)
        assert g.sum() == pytest.approx(amap.owned_pixel_count, abs=1e-9)

    def test_matches_central_finite_differences(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            sk = random_sketch(rng, int(rng.integers(5, 30)), 64, 64)
            a = rng.uniform(0, 1, sk.n)
            delta = rng.normal(size=(64, 64))
            amap = rasterize_forward(sk, a, CFG64)
            g = rasterize_backward(amap, delta, sk.n)
            h = 1e-4
            for i in range(sk.n):
                ap, am = a.copy(), a.copy()
                ap[i] += h
                am[i] -= h
                num = (
                    (delta * rasterize_forward(sk, ap, CFG64).intensities).sum()
                    - (delta * rasterize_forward(sk, am, CFG64).intensities).sum()
                ) / (2 * h)
                assert abs(num - g[i]) <= 1e-6 * max(abs(num), abs(g[i]), 1.0)

    def test_gradient_conservation_random(self):
        rng = np.random.default_rng(4)
        for _ in range(25):
            sk = random_sketch(rng, int(rng.integers(2, 40)), 64, 64)
            amap = rasterize_forward(sk, rng.uniform(0, 1, sk.n), CFG64)
            g = rasterize_backward(amap, np.ones((64, 64)), sk.n)
            assert abs(g.sum() - amap.owned_pixel_count) <= 1e-9

    def test_point_stroke_gradient_flows_to_single_point(self):
        sk = make([(16.5, 16.5, 1)])
        amap = rasterize_forward(sk, [0.5], RasterConfig(32, 32, 1.5))
        g = rasterize_backward(amap, np.ones((32, 32)), 1)
        assert g[0] == pytest.approx(amap.owned_pixel_count, abs=1e-12)

    def test_shape_mismatch(self):
        sk = make([(0, 0, 0), (5, 5, 1)])
        amap = rasterize_forward(sk, [1, 1], CFG64)
        with pytest.raises(ShapeMismatchError):
            rasterize_backward(amap, np.zeros((32, 32)), 2)
        with pytest.raises(ShapeMismatchError):
            rasterize_backward(amap, np.zeros((64, 64)), 1)

    def test_zero_gradient_for_points_with_no_owned_pixels(self):
        # second stroke fully overdrawn by a later identical stroke
        sk = make([(5, 5, 0), (25, 5, 1), (5, 5, 0), (25, 5, 1)])
        amap = rasterize_forward(sk, np.ones(4), RasterConfig(32, 32, 1.0))
        g = rasterize_backward(amap, np.ones((32, 32)), 4)
        assert g[0] == 0.0 and g[1] == 0.0
        assert g[2] > 0 and g[3] > 0


class TestLinearity:
    def test_linearity_in_attention(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            sk = random_sketch(rng, int(rng.integers(3, 30)), 64, 64)
            u = rng.normal(size=sk.n)
            v = rng.normal(size=sk.n)
            lam, mu = rng.normal(), rng.normal()
            lhs = rasterize_forward(sk, lam * u + mu * v, CFG64).intensities
            rhs = lam * rasterize_forward(sk, u, CFG64).intensities + mu * rasterize_forward(
                sk, v, CFG64
            ).intensities
            assert np.abs(lhs - rhs).max() <= 1e-12

    @given(st.integers(0, 10_000))
    @settings(max_examples=25)
    def test_ownership_independent_of_attention(self, seed):
        rng = np.random.default_rng(seed)
        sk = random_sketch(rng, int(rng.integers(2, 20)), 32, 32)
        cfg = RasterConfig(32, 32, 1.0)
        m1 = rasterize_forward(sk, rng.normal(size=sk.n), cfg)
        m2 = rasterize_forward(sk, rng.normal(size=sk.n), cfg)
        assert np.array_equal(m1.owner, m2.owner)
        assert np.array_equal(m1.alpha, m2.alpha)


class TestEncodings:
    def test_order_ramp_endpoints(self):
        r = order_ramp(5)
        assert r[0] == 1.0 and r[-1] == 0.0
        assert order_ramp(1).tolist() == [1.0]

    def test_order_ramp_middle_point(self):
        assert order_ramp(3)[1] == 0.5

    def test_order_encode_matches_explicit_ramp(self):
        rng = np.random.default_rng(6)
        sk = random_sketch(rng, 14, 64, 64)
        enc = order_encode_rasterize(sk, CFG64)
        ramp = 1.0 - np.arange(sk.n) / (sk.n - 1)
        ref = rasterize_forward(sk, ramp, CFG64).intensities
        assert np.array_equal(enc, ref)

    def test_order_encode_two_point_sketch(self):
        sk = make([(8.5, 16.5, 0), (56.5, 16.5, 1)])
        enc = order_encode_rasterize(sk, CFG64)
        assert enc[16, 8] == 1.0
        assert enc[16, 56] == 0.0
        assert enc[16, 32] == pytest.approx(0.5, abs=0.03)

    def test_binary_values_exactly_zero_or_one(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            sk = random_sketch(rng, int(rng.integers(2, 30)), 64, 64)
            img = binary_rasterize(sk, CFG64)
            assert set(np.unique(img)) <= {0.0, 1.0}

    def test_binary_matches_forward_with_ones(self):
        rng = np.random.default_rng(8)
        sk = random_sketch(rng, 17, 64, 64)
        assert np.array_equal(
            binary_rasterize(sk, CFG64), rasterize_forward(sk, np.ones(sk.n), CFG64).intensities
        )

    def test_binary_pixel_count_matches_oracle(self):
        rng = np.random.default_rng(9)
        sk = random_sketch(rng, 13, 32, 32)
        cfg = RasterConfig(32, 32, 1.0)
        img = binary_rasterize(sk, cfg)
        ref = oracle_rasterize(sk, np.ones(sk.n), cfg)
        assert int(img.sum()) == int((ref.owner >= 0).sum())


class TestDeterminismAndExports:
    def test_forward_deterministic(self):
        rng = np.random.default_rng(10)
        sk = random_sketch(rng, 20, 64, 64)
        a = rng.uniform(0, 1, sk.n)
        m1 = rasterize_forward(sk, a, CFG64)
        m2 = rasterize_forward(sk, a, CFG64)
        assert np.array_equal(m1.intensities, m2.intensities)
        assert np.array_equal(m1.owner, m2.owner)

    def test_pgm_export_round_half_up(self, tmp_path):
        grid = np.array([[0.0, 0.5, 1.0], [0.001, 0.999, 0.25]])
        path = tmp_path / "map.pgm"
        write_pgm(grid, path)
        raw = path.read_bytes()
        header, _, rest = raw.partition(b"255\n")
        assert raw.startswith(b"P5\n")
        assert b"3 2" in header
        # 0.5*255 = 127.5 rounds half-up to 128
        assert list(rest) == [0, 128, 255, 0, 255, 64]

    def test_grid_json_exact(self, tmp_path):
        rng = np.random.default_rng(11)
        sk = random_sketch(rng, 8, 32, 32)
        amap = rasterize_forward(sk, rng.uniform(0, 1, sk.n), RasterConfig(32, 32, 1.0))
        path = tmp_path / "grid.json"
        write_grid_json(amap.intensities, path)
        payload = json.loads(path.read_text())
        assert payload["format"] == "sketchattn-grid"
        assert np.array_equal(np.array(payload["values"]), amap.intensities)

    def test_provenance_json(self, tmp_path):
        sk = make([(4, 4, 0), (20, 4, 1)])
        amap = rasterize_forward(sk, [1.0, 0.0], RasterConfig(32, 32, 1.0))
        path = tmp_path / "prov.json"
        write_provenance_json(amap, path)
        payload = json.loads(path.read_text())
        assert payload["segments"]["start"] == [0]
        assert payload["segments"]["end"] == [1]
        assert np.array_equal(np.array(payload["owner"]), amap.owner)


class TestProvenanceInvariant:
    def test_intensities_reconstruct_from_provenance(self):
        # owned pixels satisfy I = (1-alpha)*a_start + alpha*a_end exactly;
        # unowned pixels are zero
        rng = np.random.default_rng(30)
        for _ in range(20):
            sk = random_sketch(rng, int(rng.integers(2, 25)), 64, 64)
            a = rng.uniform(0, 1, sk.n)
            amap = rasterize_forward(sk, a, CFG64)
            owned = amap.owner >= 0
            ow = amap.owner[owned]
            al = amap.alpha[owned]
            expect = (1.0 - al) * a[amap.table.start[ow]] + al * a[amap.table.end[ow]]
            assert np.array_equal(amap.intensities[owned], expect)
            assert np.all(amap.intensities[~owned] == 0.0)
            assert np.all((al >= 0.0) & (al <= 1.0))


class TestSegmentTable:
    def test_interleaved_discs_and_segments(self):
        sk = make([(0, 0, 0), (5, 0, 1), (9, 9, 1), (12, 0, 0), (20, 0, 1)])
        t = segment_table(sk)
        assert t.start.tolist() == [0, 2, 3]
        assert t.end.tolist() == [1, 2, 4]

    def test_without_discs(self):
        sk = make([(0, 0, 0), (5, 0, 1), (9, 9, 1)])
        t = segment_table(sk, include_point_discs=False)
        assert t.start.tolist() == [0]
        assert t.end.tolist() == [1]
