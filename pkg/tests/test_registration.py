import numpy as np
import pytest
from scipy import ndimage

from src.core.affine import AffineTransform, corner_error
from src.core.errors import DimensionMismatchError, NoSignalError
from src.core.imaging import RgbImage, to_gray_od
from src.core.rng import Lcg64
from src.services.phantom import PhantomSpec, generate_registration_case, random_warp
from src.services.registration import (
    BILINEAR,
    NEAREST,
    PatchRegistrar,
    estimate_rigid,
    estimate_translation,
    refine_affine,
    warp_affine,
)

TEXTURED = dict(width=128, height=128, blob_count=(14, 14, 10), blob_size=(1 / 20, 1 / 8))


def _psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    return float("inf") if mse == 0 else 10 * np.log10(255.0**2 / mse)


class TestWarp:
    def test_identity_is_bit_identical(self, small_phantom):
        warped = warp_affine(small_phantom.i_hes, AffineTransform.identity())
        assert np.array_equal(warped.data, small_phantom.i_hes.data)

    def test_integer_translation_nearest(self, textured):
        warped = warp_affine(textured, AffineTransform.translation(3, 2), NEAREST)
        assert np.array_equal(warped[2:, 3:], textured[:-2, :-3])
        assert np.all(warped[:2] == 0.0)

    def test_rgb_fill_is_white(self, small_phantom):
        warped = warp_affine(small_phantom.i_hes, AffineTransform.translation(10, 0), NEAREST)
        assert np.all(warped.data[:, :10] == 255)

    def test_forward_then_inverse(self, textured):
        image = textured * 255.0
        t = AffineTransform.translation(2.5, -1.5).compose(
            AffineTransform.rotation(3.0, (63.5, 63.5))
        )
        restored = warp_affine(warp_affine(image, t, BILINEAR), t.inverse(), BILINEAR)
        interior = (slice(20, -20), slice(20, -20))
        assert _psnr(restored[interior], image[interior]) >= 40.0

    def test_unknown_interpolation(self, textured):
        with pytest.raises(ValueError):
            warp_affine(textured, AffineTransform.identity(), "cubic")


class TestTranslation:
    def test_self_alignment(self, textured):
        dx, dy, score = estimate_translation(textured, textured)
        assert (dx, dy) == (0, 0)
        assert score == pytest.approx(1.0, abs=1e-6)

    def test_score_drops_for_a_shifted_pair(self, textured):
        moving = np.roll(textured, shift=(6, 9), axis=(0, 1))
        _, _, score = estimate_translation(textured, moving)
        assert 0.0 < score < 1.0

    def test_rolled_image(self, textured):
        moving = np.roll(textured, shift=(-3, 5), axis=(0, 1))
        dx, dy, _ = estimate_translation(textured, moving)
        assert (dx, dy) == (5, -3)

    def test_antisymmetric(self, textured):
        moving = np.roll(textured, shift=(4, -7), axis=(0, 1))
        forward = estimate_translation(textured, moving)[:2]
        backward = estimate_translation(moving, textured)[:2]
        assert backward == (-forward[0], -forward[1])

    def test_constant_image_has_no_signal(self, textured):
        with pytest.raises(NoSignalError, match="no signal"):
            estimate_translation(np.full((32, 32), 0.3), textured[:32, :32])

    def test_shape_mismatch(self, textured):
        with pytest.raises(DimensionMismatchError):
            estimate_translation(textured, textured[:64])


class TestRigid:
    def test_identical_images(self, textured):
        result = estimate_rigid(textured, textured)
        assert corner_error(result.transform, AffineTransform.identity(), textured.shape) < 1e-9

    def test_pure_shift(self, textured):
        moving = np.roll(textured, 10, axis=1)
        result = estimate_rigid(textured, moving)
        np.testing.assert_allclose(result.transform.matrix, [[1, 0, -10], [0, 1, 0]], atol=1e-12)

    def test_small_rotation(self, textured):
        t_true = AffineTransform.rotation(2.0, (63.5, 63.5))
        moving = warp_affine(textured, t_true, BILINEAR)
        result = estimate_rigid(textured, moving)
        assert corner_error(result.transform, t_true.inverse(), textured.shape) <= 1.0

    @pytest.mark.parametrize("seed", [0, 1, 2, 3])
    def test_lands_near_seeded_warps(self, seed):
        warp = random_warp(Lcg64(1000 + seed), (128, 128))
        spec = PhantomSpec(seed=seed, warp=warp, **TEXTURED)
        fixed, moving, t_true = generate_registration_case(spec, margin=40)
        result = estimate_rigid(to_gray_od(fixed), to_gray_od(moving))
        # within one angle step and the 2% scale the rigid model cannot express
        assert corner_error(result.transform, t_true.inverse(), fixed.shape) <= 3.0

    def test_rejects_non_positive_step(self, textured):
        with pytest.raises(ValueError):
            estimate_rigid(textured, textured, angle_step=0.0)


class TestAffine:
    def test_starting_at_the_answer(self):
        spec = PhantomSpec(seed=2, warp=AffineTransform.rotation(1.5, (63.5, 63.5)), **TEXTURED)
        fixed, moving, t_true = generate_registration_case(spec)
        result = refine_affine(to_gray_od(fixed), to_gray_od(moving), t_true.inverse())
        assert corner_error(result.transform, t_true.inverse(), fixed.shape) <= 0.1
        for trace in result.ssd_trace:
            assert np.all(np.diff(trace) <= 0)

    def test_exact_answer_needs_at_most_two_steps(self, textured):
        # shifts stay whole pixels on every pyramid level
        t_true = AffineTransform.translation(8, 4)
        moving = warp_affine(textured, t_true, BILINEAR)
        result = refine_affine(textured, moving, t_true.inverse(), levels=3)
        assert result.converged
        assert all(len(trace) - 1 <= 2 for trace in result.ssd_trace)
        assert corner_error(result.transform, t_true.inverse(), textured.shape) <= 0.1

    def test_implausible_initial_transform(self, textured):
        with pytest.raises(ValueError):
            refine_affine(textured, textured, AffineTransform.from_coefficients([3, 0, 0, 0, 3, 0]))


class TestPatchRegistrar:
    def test_identity_pair(self):
        spec = PhantomSpec(seed=1, **TEXTURED)
        fixed, moving, _ = generate_registration_case(spec)
        assert np.array_equal(fixed.data, moving.data)
        result = PatchRegistrar().register(fixed, moving)
        assert corner_error(result.transform, AffineTransform.identity(), fixed.shape) <= 0.1
        assert result.score == pytest.approx(1.0, abs=1e-6)

    def test_recovers_seeded_warps(self):
        errors = []
        for seed in range(20):
            warp = random_warp(Lcg64(1000 + seed), (128, 128))
            spec = PhantomSpec(seed=seed, warp=warp, **TEXTURED)
            fixed, moving, t_true = generate_registration_case(spec, margin=40)
            result = PatchRegistrar().register(fixed, moving)
            errors.append(corner_error(result.transform, t_true.inverse(), fixed.shape))
        assert np.mean(errors) <= 0.5
        assert max(errors) <= 0.5, f"worst seed {int(np.argmax(errors))}: {max(errors):.3f} px"

    def test_unrelated_noise_is_flagged(self):
        rng = np.random.default_rng(0)
        fixed = RgbImage(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8))
        moving = RgbImage(rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8))
        result = PatchRegistrar(max_iters=30).register(fixed, moving)
        assert not result.converged or result.score < 0.2

    def test_score_is_clamped(self):
        assert -1.0 <= PatchRegistrar().register_gray(
            ndimage.gaussian_filter(np.random.default_rng(1).normal(size=(64, 64)), 2),
            ndimage.gaussian_filter(np.random.default_rng(2).normal(size=(64, 64)), 2),
        ).score <= 1.0
