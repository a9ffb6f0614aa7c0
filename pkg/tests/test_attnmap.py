import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mapunetr.attnmap import (
    RAMP_STOPS,
    SaliencyMap,
    colorize,
    head_mean_map,
    overlay,
    rollout,
    rollout_matrix,
    saliency,
    to_heatmap,
    upsample_scores,
)
from mapunetr.errors import ConfigError, ShapeError
from mapunetr.model import AttentionRecord


def random_record(rng, h=2, N=9, layer=0):
    w = rng.random((h, N, N))
    return AttentionRecord(layer, w / w.sum(-1, keepdims=True))


def peaked_record(N, peak, h=2):
    w = np.full((h, N, N), 0.1 / (N - 1))
    w[:, :, peak] = 0.9
    return AttentionRecord(0, w)


class TestScores:
    def test_head_mean_column_means(self):
        w = np.array([[[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0], [1.0, 0.0]]])
        rec = AttentionRecord(0, w)
        assert np.allclose(head_mean_map(rec), [0.75, 0.25])
        assert np.allclose(head_mean_map(rec, received=False), [0.5, 0.5])

    def test_rollout_identity_attention(self):
        rec = AttentionRecord(0, np.eye(4)[None])
        assert np.allclose(rollout_matrix([rec, rec]), np.eye(4))

    def test_rollout_uniform(self):
        rec = AttentionRecord(0, np.full((1, 2, 2), 0.5))
        assert np.allclose(rollout_matrix([rec]), [[0.75, 0.25], [0.25, 0.75]])
        assert np.allclose(rollout([rec]), [0.5, 0.5])

    def test_rollout_rows_stochastic(self, rng):
        records = [random_record(rng, layer=i) for i in range(4)]
        M = rollout_matrix(records)
        assert np.allclose(M.sum(1), 1, atol=1e-12) and np.all(M >= 0)

    def test_rollout_layer_order(self):
        A = AttentionRecord(0, np.array([[[1.0, 0.0], [1.0, 0.0]]]))
        B = AttentionRecord(1, np.array([[[0.0, 1.0], [0.0, 1.0]]]))
        a = (A.weights[0] + np.eye(2)) / 2
        b = (B.weights[0] + np.eye(2)) / 2
        a, b = a / a.sum(1, keepdims=True), b / b.sum(1, keepdims=True)
        assert np.allclose(rollout_matrix([A, B]), b @ a)

    def test_rollout_mismatched_tokens(self, rng):
        with pytest.raises(ShapeError):
            rollout_matrix([random_record(rng, N=4), random_record(rng, N=9)])

    def test_empty_rollout(self):
        with pytest.raises(ShapeError):
            rollout([])


class TestHeatmap:
    @pytest.mark.parametrize("peak", [0, 4, 7, 8])
    def test_peak_lands_in_patch(self, peak):
        P, rows = 5, 3
        smap = saliency([peaked_record(rows * rows, peak)], (rows * P, rows * P), P)
        r, c = np.unravel_index(np.argmax(smap.values), smap.values.shape)
        assert (r // P, c // P) == divmod(peak, rows)

    def test_extent_and_range(self, rng):
        smap = to_heatmap(rng.random(16), (32, 32), 8)
        assert smap.values.shape == (32, 32)
        assert smap.values.min() == 0.0 and smap.values.max() == 1.0

    def test_constant_scores(self):
        assert np.array_equal(to_heatmap(np.ones(4), (4, 4), 2).values, np.zeros((4, 4)))

    def test_upsample_is_monotone_in_scores(self, rng):
        low = rng.random(9)
        high = low.copy()
        high[4] += 1.0
        a, b = upsample_scores(low, (9, 9), 3), upsample_scores(high, (9, 9), 3)
        assert np.all(b >= a - 1e-15)
        assert b[4, 4] > a[4, 4]

    def test_bad_grid(self):
        with pytest.raises(ShapeError):
            upsample_scores(np.zeros(5), (8, 8), 4)

    @settings(max_examples=30)
    @given(st.integers(0, 2**31 - 1), st.sampled_from([(2, 4), (4, 2), (8, 1)]), st.integers(1, 3))
    def test_random_records_in_range(self, seed, grid_p, depth):
        rows, P = grid_p
        rng = np.random.default_rng(seed)
        records = [random_record(rng, N=rows * rows, layer=i) for i in range(depth)]
        for method in ("single", "rollout"):
            values = saliency(records, (rows * P, rows * P), P, method=method).values
            assert values.shape == (rows * P, rows * P)
            assert values.min() >= 0 and values.max() <= 1

    def test_layer_selection(self, rng):
        records = [random_record(rng, layer=i) for i in range(3)]
        assert saliency(records, (9, 9), 3, layer=1).source == "single_layer:1"
        with pytest.raises(ConfigError):
            saliency(records, (9, 9), 3, layer=3)
        with pytest.raises(ConfigError):
            saliency(records, (9, 9), 3, method="gradcam")

    def test_model_records(self, tiny_model, rng):
        _, records = tiny_model.forward(rng.normal(size=(32, 32, 3)))
        smap = saliency(records, (32, 32), 8, method="rollout")
        assert smap.values.shape == (32, 32) and smap.source == "rollout"


class TestColor:
    def test_ramp_stops(self):
        out = colorize(np.array([[0.0, 0.5, 1.0]]))
        assert np.allclose(out[0], [[0, 0, 0], [0.9, 0.3, 0], [1.0, 1.0, 0.8]])

    def test_monotone_channels(self):
        out = colorize(np.linspace(0, 1, 101)[None])
        assert np.all(np.diff(out[0], axis=0) >= 0)
        assert RAMP_STOPS[0] == 0 and RAMP_STOPS[-1] == 1

    def test_overlay_alpha_zero(self, rng):
        for image in (rng.random((4, 4, 3)), rng.random((4, 4))):
            out = overlay(SaliencyMap(rng.random((4, 4)), "x"), image, 0.0)
            assert np.array_equal(out, image)

    def test_overlay_alpha_one(self, rng):
        values = rng.random((4, 4))
        out = overlay(SaliencyMap(values, "x"), rng.random((4, 4, 3)), 1.0)
        assert np.allclose(out, colorize(values))

    def test_overlay_grayscale_and_range(self, rng):
        out = overlay(SaliencyMap(rng.random((4, 4)), "x"), rng.random((4, 4)), 0.4)
        assert out.shape == (4, 4, 3) and out.min() >= 0 and out.max() <= 1

    def test_overlay_validation(self, rng):
        with pytest.raises(ConfigError):
            overlay(SaliencyMap(np.zeros((4, 4)), "x"), np.zeros((4, 4, 3)), 1.5)
        with pytest.raises(ShapeError):
            overlay(SaliencyMap(np.zeros((4, 4)), "x"), np.zeros((5, 4, 3)), 0.5)
