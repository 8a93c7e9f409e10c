import numpy as np
import pytest

from src.core.imaging import ConcentrationMap, RgbImage, od_array_to_rgb
from src.services.reconstruction import (
    ReconstructionConfig,
    deconvolve_he,
    reconstruct_hes,
    rerender_he,
    suppress_eosin,
    suppression_mask,
)


def _single(value):
    return ConcentrationMap(np.full((1, 1), value))


@pytest.fixture(scope="module")
def phantom():
    from src.services.phantom import PhantomSpec, generate_phantom

    return generate_phantom(PhantomSpec(width=256, height=256, seed=0))


@pytest.fixture(scope="module")
def config(phantom):
    return ReconstructionConfig.from_matrices(phantom.he_matrix, phantom.w_true)


class TestSuppressEosin:
    def test_saffron_dominates(self):
        assert suppress_eosin(_single(0.5), _single(0.7)).values()[0, 0] == 0.0

    def test_within_margin_is_kept(self):
        assert suppress_eosin(_single(0.5), _single(0.55)).values()[0, 0] == 0.5

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        eosin = ConcentrationMap(rng.uniform(0, 1, size=(16, 16)))
        saffron = ConcentrationMap(rng.uniform(0, 1, size=(16, 16)))
        once = suppress_eosin(eosin, saffron)
        twice = suppress_eosin(once, saffron)
        assert np.array_equal(once.data, twice.data)

    def test_strict_margin(self):
        assert not suppression_mask(np.array([0.5]), np.array([0.6]), 0.1)[0]


class TestReconstruct:
    def test_no_saffron_reproduces_the_rerendered_tile(self, phantom, config):
        zero = ConcentrationMap(np.zeros(phantom.i_he.shape))
        rebuilt = reconstruct_hes(phantom.i_he, zero, config)
        assert np.array_equal(rebuilt.data, rerender_he(phantom.i_he, config.w_he).data)

    def test_rerendering_is_close_to_the_input(self, phantom, config):
        rerendered = rerender_he(phantom.i_he, config.w_he).data.astype(int)
        assert np.max(np.abs(rerendered - phantom.i_he.data)) <= 2

    def test_white_tile_takes_the_saffron_colour(self, config):
        white = RgbImage(np.full((4, 4, 3), 255, dtype=np.uint8))
        saffron = ConcentrationMap(np.ones((4, 4)), [0.8])
        rebuilt = reconstruct_hes(white, saffron, config)
        expected = od_array_to_rgb(saffron.scale[0] * config.w_s.matrix[:, 0])
        assert np.all(rebuilt.data == expected)

    def test_matches_hes_phantom_with_true_saffron(self, phantom, config):
        scale = 0.5
        saffron = ConcentrationMap(phantom.h_true.data[:, :, 2] / scale, [scale])
        rebuilt = reconstruct_hes(phantom.i_he, saffron, config).data.astype(np.float64)
        error = np.abs(rebuilt - phantom.i_hes.data)
        assert error.mean() <= 2.0
        assert np.all(error.mean(axis=(0, 1)) <= 3.0)

    def test_more_saffron_never_lightens(self, config):
        rng = np.random.default_rng(7)
        he = RgbImage(rng.integers(80, 251, size=(1, 10_000, 3), dtype=np.uint8))
        low = rng.uniform(0, 2, size=(1, 10_000))
        high = low + rng.uniform(0, 1, size=low.shape)
        no_suppression = ReconstructionConfig(config.w_he, config.w_s, epsilon=float("inf"))
        a = reconstruct_hes(he, ConcentrationMap(low), no_suppression).data
        b = reconstruct_hes(he, ConcentrationMap(high), no_suppression).data
        assert np.all(b <= a)

    def test_more_saffron_never_lightens_within_a_suppression_state(self, config):
        rng = np.random.default_rng(8)
        he = RgbImage(rng.integers(80, 251, size=(1, 10_000, 3), dtype=np.uint8))
        low = rng.uniform(0, 2, size=(1, 10_000))
        high = low + rng.uniform(0, 1, size=low.shape)
        eosin = deconvolve_he(he, config.w_he).data[:, :, 1]
        same_state = suppression_mask(eosin, low, config.epsilon) == suppression_mask(
            eosin, high, config.epsilon
        )
        a = reconstruct_hes(he, ConcentrationMap(low), config).data
        b = reconstruct_hes(he, ConcentrationMap(high), config).data
        assert same_state.any()
        assert np.all(b[same_state] <= a[same_state])

    def test_unchanged_where_no_saffron_is_predicted(self, phantom, config):
        saffron = np.zeros(phantom.i_he.shape)
        saffron[100:140, 60:200] = 1.5
        rebuilt = reconstruct_hes(phantom.i_he, ConcentrationMap(saffron), config).data
        rerendered = rerender_he(phantom.i_he, config.w_he).data
        untouched = saffron == 0
        assert np.array_equal(rebuilt[untouched], rerendered[untouched])

    def test_raw_comparison_uses_unscaled_eosin(self, config):
        eosin_only = od_array_to_rgb(0.5 * config.w_he.matrix[:, 1])
        he = RgbImage(eosin_only.reshape(1, 1, 3))
        saffron = ConcentrationMap(np.full((1, 1), 0.4), [2.0])
        normalized = reconstruct_hes(he, saffron, config).data
        raw = ReconstructionConfig(config.w_he, config.w_s, compare_normalized=False)
        # only the normalized comparison (0.4 > 0.25 + 0.1) drops the Eosin
        assert reconstruct_hes(he, saffron, raw).data[0, 0, 1] < normalized[0, 0, 1]

    def test_explicit_scale_overrides_the_map_scale(self, config):
        white = RgbImage(np.full((2, 2, 3), 255, dtype=np.uint8))
        saffron = ConcentrationMap(np.ones((2, 2)), [0.8])
        scaled = ReconstructionConfig(config.w_he, config.w_s, saffron_scale=0.4)
        expected = od_array_to_rgb(0.4 * config.w_s.matrix[:, 0])
        assert np.all(reconstruct_hes(white, saffron, scaled).data == expected)


def test_config_validation(phantom):
    with pytest.raises(ValueError):
        ReconstructionConfig(phantom.w_true, phantom.w_true.select("Saffron"))
    with pytest.raises(ValueError):
        ReconstructionConfig(phantom.he_matrix, phantom.he_matrix)
    with pytest.raises(ValueError):
        ReconstructionConfig(phantom.he_matrix, phantom.w_true.select("Saffron"), epsilon=-0.1)
