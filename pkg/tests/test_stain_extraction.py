import logging

import numpy as np
import pytest

from src.core.errors import (
    DataError,
    EmptyRegionError,
    NoSaffronColumnError,
    NoTissueError,
    SingularStainMatrixError,
)
from src.core.imaging import (
    BinaryMask,
    ConcentrationMap,
    OdImage,
    RgbImage,
    StainMatrix,
    rgb_to_od,
    tissue_mask,
)
from src.engines.snmf_estimator import SnmfStainEstimator, reference_matrix
from src.engines.solvers import NnlsSolver, PinvSolver, create_solver
from src.interfaces.stain_estimation import PixelSample, SnmfConfig
from src.services.phantom import PhantomSpec, generate_phantom
from src.services.stain_extraction import (
    estimate_stain_matrix,
    extract_saffron,
    normalize_p99,
    percentile_scale,
    sample_tissue_pixels,
    slide_p99_scale,
    solve_concentrations,
)

HES = ("Hematoxylin", "Eosin", "Saffron")


def _column_cosines(estimated: StainMatrix, truth: StainMatrix) -> np.ndarray:
    return np.sum(estimated.matrix * truth.matrix, axis=0)


class TestSampling:
    def test_uniform_tissue_tile(self, tissue_tile):
        sample = sample_tissue_pixels([tissue_tile], n_target=20)
        assert sample.n == 20
        expected = rgb_to_od(tissue_tile).data[0, 0]
        assert np.allclose(sample.od_vectors, expected)

    def test_sample_is_capped_by_available_pixels(self, tissue_tile):
        assert sample_tissue_pixels([tissue_tile], n_target=1000).n == 64

    def test_background_only_raises(self, white_tile):
        with pytest.raises(NoTissueError, match="no tissue"):
            sample_tissue_pixels([white_tile, white_tile])

    def test_same_seed_same_sample(self, small_phantom):
        a = sample_tissue_pixels([small_phantom.i_hes], n_target=100, seed=4)
        b = sample_tissue_pixels([small_phantom.i_hes], n_target=100, seed=4)
        assert np.array_equal(a.od_vectors, b.od_vectors)

    def test_sources_point_at_tiles(self, white_tile, tissue_tile):
        sample = sample_tissue_pixels([white_tile, tissue_tile], n_target=10, tile_ids=["a", "b"])
        assert set(sample.source.tolist()) == {1}
        assert sample.tile_ids == ("a", "b")


class TestSnmf:
    def test_recovers_rank_one_direction(self):
        direction = np.array([0.3, 0.5, 0.8])
        direction /= np.linalg.norm(direction)
        amounts = np.random.default_rng(0).uniform(0.1, 1.0, size=500)
        sample = PixelSample(np.outer(amounts, direction), np.zeros(500))
        estimate = estimate_stain_matrix(sample, SnmfConfig(stain_count=1, labels=("Hematoxylin",)))
        assert float(estimate.matrix.matrix[:, 0] @ direction) >= 0.999

    def test_duplicated_rows_do_not_fail(self):
        v = np.array([0.4, 0.6, 0.3])
        sample = PixelSample(np.tile(v, (300, 1)), np.zeros(300))
        estimate = estimate_stain_matrix(
            sample, SnmfConfig(stain_count=2, labels=("Hematoxylin", "Eosin"))
        )
        assert estimate.matrix.stain_count == 2
        cosines = estimate.matrix.matrix.T @ (v / np.linalg.norm(v))
        assert cosines.max() >= 0.95

    def test_objective_trace_is_non_increasing(self, small_phantom):
        sample = sample_tissue_pixels([small_phantom.i_hes], n_target=2000)
        estimate = estimate_stain_matrix(sample, SnmfConfig(sparsity_lambda=0.01, labels=HES))
        trace = np.array(estimate.objective_trace)
        assert len(trace) == estimate.iterations + 1
        assert np.all(np.diff(trace) <= 1e-12 * trace[:-1])

    def test_columns_are_unit_and_non_negative(self, small_phantom):
        sample = sample_tissue_pixels([small_phantom.i_hes], n_target=2000)
        matrix = estimate_stain_matrix(sample, SnmfConfig(labels=HES)).matrix
        assert np.all(matrix.matrix >= 0)
        np.testing.assert_allclose(np.linalg.norm(matrix.matrix, axis=0), 1.0, atol=1e-9)
        assert matrix.labels == HES

    def test_random_init_is_seeded(self, small_phantom):
        sample = sample_tissue_pixels([small_phantom.i_hes], n_target=1000)
        config = SnmfConfig(init="random", seed=5, max_iters=30, labels=HES)
        a = estimate_stain_matrix(sample, config).matrix.matrix
        b = estimate_stain_matrix(sample, config).matrix.matrix
        assert np.array_equal(a, b)

    def test_iteration_cap_is_reported(self, small_phantom, caplog):
        sample = sample_tissue_pixels([small_phantom.i_hes], n_target=1000)
        config = SnmfConfig(max_iters=1, tol=1e-12, init="random", seed=3, labels=HES)
        with caplog.at_level(logging.WARNING):
            estimate = estimate_stain_matrix(sample, config)
        assert estimate.converged is False
        assert estimate.iterations == 1
        assert len(estimate.objective_trace) == 2
        assert "did not converge after 1 iterations" in caplog.text
        assert estimate.matrix.stain_count == 3

    def test_canonical_order_follows_reference_hues(self):
        references = reference_matrix(HES)
        shuffled = references[:, [2, 0, 1]]
        ordered = SnmfStainEstimator._canonical_order(shuffled, HES)
        assert np.array_equal(ordered, references)

    def test_too_few_pixels(self):
        sample = PixelSample(np.ones((2, 3)), np.zeros(2))
        with pytest.raises(DataError):
            estimate_stain_matrix(sample, SnmfConfig(stain_count=3))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SnmfConfig(sparsity_lambda=-1.0)
        with pytest.raises(ValueError):
            SnmfConfig(stain_count=4)
        with pytest.raises(ValueError):
            SnmfConfig(init="svd")

    def test_phantom_matrix_is_recovered(self, oracle_phantoms):
        tiles = [p.i_hes for p in oracle_phantoms]
        sample = sample_tissue_pixels(tiles, n_target=20_000)
        estimate = estimate_stain_matrix(sample, SnmfConfig(sparsity_lambda=0.01, labels=HES))
        cosines = _column_cosines(estimate.matrix, oracle_phantoms[0].w_true)
        assert np.all(cosines >= 0.99)


class TestSolvers:
    def test_pinv_recovers_known_concentrations(self, small_phantom):
        w = small_phantom.w_true
        h = np.random.default_rng(2).uniform(0, 1, size=(6, 6, 3))
        od = OdImage(h @ w.matrix.T)
        solved = PinvSolver().solve(od, w)
        np.testing.assert_allclose(solved.data, h, rtol=1e-6, atol=1e-9)

    def test_zero_density_gives_zero(self, small_phantom):
        solved = solve_concentrations(OdImage(np.zeros((3, 3, 3))), small_phantom.w_true)
        assert np.all(solved.data == 0.0)

    def test_orthonormal_columns(self):
        w = StainMatrix(np.eye(3), HES)
        solved = solve_concentrations(OdImage(np.array([[[1.0, 0.0, 0.0]]])), w)
        np.testing.assert_allclose(solved.data[0, 0], [1.0, 0.0, 0.0], atol=1e-12)

    def test_nnls_matches_pinv_on_feasible_pixels(self, small_phantom):
        w = small_phantom.w_true
        od = rgb_to_od(small_phantom.i_hes)
        pinv = PinvSolver().solve(od, w).data
        nnls = NnlsSolver().solve(od, w).data
        raw = od.data.reshape(-1, 3) @ np.linalg.pinv(w.matrix).T
        feasible = np.all(raw >= 0, axis=1).reshape(od.shape)
        np.testing.assert_allclose(nnls[feasible], pinv[feasible], atol=1e-6)
        assert np.all(nnls >= 0)

    def test_nnls_residual_is_no_worse_than_clamping(self, small_phantom):
        w = small_phantom.w_true
        od = rgb_to_od(small_phantom.i_hes)
        v = od.data.reshape(-1, 3)
        residual = lambda h: np.linalg.norm(v - h.reshape(-1, 3) @ w.matrix.T, axis=1)
        nnls = residual(NnlsSolver().solve(od, w).data)
        pinv = residual(PinvSolver().solve(od, w).data)
        assert np.all(nnls <= pinv + 1e-6)

    def test_singular_matrix(self):
        column = np.array([0.6, 0.8, 0.0])
        w = StainMatrix(np.column_stack([column, column]), ("Hematoxylin", "Eosin"))
        with pytest.raises(SingularStainMatrixError, match="singular stain matrix"):
            solve_concentrations(OdImage(np.ones((2, 2, 3))), w)

    def test_unknown_mode(self):
        with pytest.raises(ValueError, match="Must be one of"):
            create_solver("lstsq")


class TestNormalization:
    def test_constant_map(self):
        cmap = ConcentrationMap(np.full((4, 4), 2.0))
        normalized = normalize_p99(cmap, BinaryMask.full((4, 4)))
        assert normalized.scale.tolist() == [2.0]
        assert np.all(normalized.data == 1.0)

    def test_order_statistic(self):
        values = np.arange(100) / 100.0
        cmap = ConcentrationMap(values.reshape(10, 10))
        assert normalize_p99(cmap, BinaryMask.full((10, 10))).scale[0] == pytest.approx(0.99)

    def test_zero_map_keeps_unit_scale(self):
        normalized = normalize_p99(ConcentrationMap(np.zeros((3, 3))), BinaryMask.full((3, 3)))
        assert normalized.scale.tolist() == [1.0]
        assert np.all(normalized.data == 0.0)

    def test_empty_mask(self):
        with pytest.raises(EmptyRegionError, match="empty mask"):
            normalize_p99(ConcentrationMap(np.ones((3, 3))), BinaryMask(np.zeros((3, 3))))

    def test_scale_restores_the_input(self):
        data = np.random.default_rng(3).uniform(0, 5, size=(8, 8, 2))
        normalized = normalize_p99(ConcentrationMap(data), BinaryMask.full((8, 8)))
        np.testing.assert_allclose(normalized.denormalized().data, data, rtol=1e-6, atol=0)

    def test_mask_restricts_the_percentile(self):
        data = np.ones((4, 4))
        data[0, 0] = 100.0
        mask = np.ones((4, 4), dtype=bool)
        mask[0, 0] = False
        assert normalize_p99(ConcentrationMap(data), BinaryMask(mask)).scale[0] == 1.0

    def test_slide_scale_pools_tiles(self):
        a = ConcentrationMap(np.zeros((2, 2)))
        b = ConcentrationMap(np.full((2, 2), 3.0))
        full = BinaryMask.full((2, 2))
        assert slide_p99_scale([a, b], [full, full]).tolist() == [3.0]
        assert percentile_scale(np.zeros(5)) == 1.0


class TestExtractSaffron:
    def test_background_tile_is_all_zero(self, white_tile, small_phantom, caplog):
        with caplog.at_level(logging.WARNING):
            cmap = extract_saffron(white_tile, small_phantom.w_true)
        assert np.all(cmap.values() == 0.0)
        assert "mask is empty" in caplog.text

    def test_requires_saffron_column(self, small_phantom):
        with pytest.raises(NoSaffronColumnError, match="no saffron column"):
            extract_saffron(small_phantom.i_he, small_phantom.he_matrix)

    def test_slide_scale_is_used(self, small_phantom):
        cmap = extract_saffron(small_phantom.i_hes, small_phantom.w_true, scale=0.5)
        assert cmap.scale.tolist() == [0.5]

    def test_matches_phantom_truth(self, oracle_phantoms):
        for phantom in oracle_phantoms:
            extracted = extract_saffron(phantom.i_hes, phantom.w_true)
            truth = phantom.h_true.data[:, :, 2] / extracted.scale[0]
            assert np.mean(np.abs(extracted.values() - truth)) <= 0.02

    def test_hard_mode_stays_usable(self):
        phantom = generate_phantom(PhantomSpec(width=128, height=128, seed=1, hard_mode=True))
        extracted = extract_saffron(phantom.i_hes, phantom.w_true)
        truth = phantom.h_true.data[:, :, 2] / extracted.scale[0]
        assert np.mean(np.abs(extracted.values() - truth)) <= 0.05


def test_deconvolution_matches_phantom_truth(oracle_phantoms):
    for phantom in oracle_phantoms:
        od = rgb_to_od(phantom.i_hes)
        truth = phantom.h_true.data
        # per-channel OD error is pure 8-bit quantization
        assert np.max(np.abs(od.data - truth @ phantom.w_true.matrix.T)) <= 0.01
        solved = solve_concentrations(od, phantom.w_true).data
        assert np.max(np.abs(solved - truth)) <= 0.01
        assert np.mean(np.abs(solved - truth)) <= 0.003


def test_tissue_mask_covers_phantom_blobs(small_phantom):
    mask = tissue_mask(rgb_to_od(small_phantom.i_hes))
    stained = small_phantom.h_true.data.sum(axis=2) > 0.45
    assert np.all(mask.data[stained])
