"""
Restained pair registration on grey mean-OD images.

Coarse rigid alignment (exhaustive angle search, phase-correlation
translation) followed by coarse-to-fine affine refinement of the sum of
squared differences with numeric gradients and backtracking line search.
Transforms map moving coordinates into fixed coordinates.
"""

import logging
from typing import List, Tuple

import numpy as np
from scipy import ndimage

from src.core.affine import AffineTransform
from src.core.errors import DimensionMismatchError, NoSignalError
from src.core.imaging import DEFAULT_ILLUMINANT, RgbImage, to_gray_od
from src.interfaces.registration import IRegistrar, RegistrationResult

logger = logging.getLogger(__name__)

NEAREST = "nearest"
BILINEAR = "bilinear"
_ORDERS = {NEAREST: 0, BILINEAR: 1}

MIN_SIZE = 8
CONVERGENCE_TOL = 1e-6
_GRADIENT_STEP = 1e-3
_MAX_BACKTRACKS = 25
_EXACT_MATCH = 1e-20
_MIN_COVERAGE = 0.25
# cycles per pixel; tissue structure sits well below, quantization noise above
_LOW_PASS_SIGMA = 0.08


def warp_affine(img, t: AffineTransform, interpolation: str = BILINEAR):
    """
    Resample `img` into the frame `t` maps it to (inverse mapping).

    RgbImage inputs are filled with white outside the source, arrays with 0.
    """
    if interpolation not in _ORDERS:
        raise ValueError(f"Unknown interpolation '{interpolation}'")
    if isinstance(img, RgbImage):
        if t.is_identity():
            return RgbImage(img.data.copy())
        channels = [
            _resample(img.data[:, :, c].astype(np.float64), t, interpolation, 255.0)
            for c in range(3)
        ]
        stacked = np.stack(channels, axis=2)
        return RgbImage(np.clip(np.floor(stacked + 0.5), 0, 255).astype(np.uint8))

    data = np.asarray(img, dtype=np.float64)
    if t.is_identity():
        return data.copy()
    if data.ndim == 3:
        return np.stack(
            [_resample(data[:, :, c], t, interpolation, 0.0) for c in range(data.shape[2])],
            axis=2,
        )
    return _resample(data, t, interpolation, 0.0)


def _resample(plane: np.ndarray, t: AffineTransform, interpolation: str, fill: float):
    inverse = t.inverse()
    # scipy works in (row, col); swap x and y
    matrix = inverse.linear[::-1, ::-1]
    offset = inverse.offset[::-1]
    return ndimage.affine_transform(
        plane,
        matrix,
        offset=offset,
        output_shape=plane.shape,
        order=_ORDERS[interpolation],
        mode="constant",
        cval=fill,
        prefilter=False,
    )


def _check_pair(fixed: np.ndarray, moving: np.ndarray) -> None:
    if fixed.shape != moving.shape:
        raise DimensionMismatchError(f"Dimension mismatch: {fixed.shape} vs {moving.shape}")
    if min(fixed.shape) < MIN_SIZE:
        raise ValueError(f"Images must be at least {MIN_SIZE}x{MIN_SIZE}, got {fixed.shape}")


def _hann_window(shape: Tuple[int, int]) -> np.ndarray:
    return np.outer(np.hanning(shape[0]), np.hanning(shape[1]))


def _low_pass_bell(shape: Tuple[int, int], sigma: float = _LOW_PASS_SIGMA) -> np.ndarray:
    """Gaussian weight over spatial frequency (cycles per pixel), in FFT layout"""
    fy = np.fft.fftfreq(shape[0])[:, None]
    fx = np.fft.fftfreq(shape[1])[None, :]
    return np.exp(-0.5 * (fx * fx + fy * fy) / (sigma * sigma))


def estimate_translation(fixed: np.ndarray, moving: np.ndarray) -> Tuple[int, int, float]:
    """
    Integer shift (dx, dy) of `moving` relative to `fixed` by phase correlation,
    i.e. moving(x, y) ~ fixed(x - dx, y - dy).

    Both images are apodized with a Hann window so tile borders and rotation
    fill do not correlate, and the whitened cross spectrum is weighted by a
    Gaussian low-pass. Score is the peak divided by the total weight of the
    usable frequencies: 1 for an image against itself.
    """
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    _check_pair(fixed, moving)
    if np.std(fixed) < 1e-12 or np.std(moving) < 1e-12:
        raise NoSignalError("no signal: constant image cannot be registered")

    window = _hann_window(fixed.shape)
    fixed_freq = np.fft.fft2((fixed - fixed.mean()) * window)
    moving_freq = np.fft.fft2((moving - moving.mean()) * window)
    cross = moving_freq * np.conj(fixed_freq)
    magnitude = np.abs(cross)
    usable = magnitude > 1e-12 * magnitude.max()
    weight = np.where(usable, _low_pass_bell(fixed.shape), 0.0)
    cross = np.where(usable, weight * cross / np.maximum(magnitude, 1e-300), 0)
    surface = np.real(np.fft.ifft2(cross)) * (cross.size / weight.sum())

    row, col = np.unravel_index(int(np.argmax(surface)), surface.shape)
    rows, cols = surface.shape
    dy = row - rows if row > rows // 2 else row
    dx = col - cols if col > cols // 2 else col
    score = float(np.clip(surface[row, col], -1.0, 1.0))
    return int(dx), int(dy), score


def _center(shape: Tuple[int, int]) -> Tuple[float, float]:
    return ((shape[1] - 1) / 2.0, (shape[0] - 1) / 2.0)


def estimate_rigid(
    fixed: np.ndarray,
    moving: np.ndarray,
    angle_range: float = 10.0,
    angle_step: float = 0.5,
) -> RegistrationResult:
    """Exhaustive rotation search, each angle scored by phase correlation"""
    if angle_step <= 0:
        raise ValueError(f"angle_step must be > 0, got {angle_step}")
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    _check_pair(fixed, moving)

    center = _center(fixed.shape)
    count = int(np.floor(angle_range / angle_step + 1e-9))
    angles = np.arange(-count, count + 1) * angle_step
    # try 0 first so ties keep the unrotated solution
    angles = sorted(angles, key=abs)

    best = None
    for angle in angles:
        rotation = AffineTransform.rotation(float(angle), center)
        rotated = moving if angle == 0 else warp_affine(moving, rotation, BILINEAR)
        dx, dy, score = estimate_translation(fixed, rotated)
        if best is None or score > best[0]:
            best = (score, rotation, dx, dy, float(angle))

    score, rotation, dx, dy, angle = best
    transform = AffineTransform.translation(-dx, -dy).compose(rotation)
    logger.debug("Rigid estimate: angle=%.2f shift=(%d, %d) score=%.3f", angle, dx, dy, score)
    return RegistrationResult(transform=transform, score=score, converged=True)


def _level_transform(t: AffineTransform, factor: float) -> AffineTransform:
    """Express a full-resolution transform in the coordinates of a 1/factor pyramid level"""
    offset = 0.5 / factor - 0.5
    scaling = np.array([[1 / factor, 0, offset], [0, 1 / factor, offset], [0, 0, 1]])
    return AffineTransform(scaling @ t.homogeneous() @ np.linalg.inv(scaling))


def _downsample(img: np.ndarray, levels: int) -> List[np.ndarray]:
    pyramid = [img]
    for _ in range(levels - 1):
        current = pyramid[-1]
        h, w = (current.shape[0] // 2) * 2, (current.shape[1] // 2) * 2
        if min(h, w) < 2 * MIN_SIZE:
            break
        block = current[:h, :w].reshape(h // 2, 2, w // 2, 2)
        pyramid.append(block.mean(axis=(1, 3)))
    return pyramid


class _AffineCost:
    """Mean squared difference over fixed pixels whose preimage lies inside moving"""

    def __init__(self, fixed: np.ndarray, moving: np.ndarray):
        self.fixed = fixed
        self.moving = moving
        self.height, self.width = fixed.shape
        cx, cy = _center(fixed.shape)
        self.half = max(self.height, self.width) / 2.0
        # centered, size-normalized parametrization keeps all 6 parameters comparable
        self.normalize = np.array(
            [[1 / self.half, 0, -cx / self.half], [0, 1 / self.half, -cy / self.half], [0, 0, 1]]
        )
        self.denormalize = np.linalg.inv(self.normalize)
        ys, xs = np.mgrid[0 : self.height, 0 : self.width]
        self.grid = np.stack([xs.ravel(), ys.ravel()], axis=1).astype(np.float64)

    def to_params(self, t: AffineTransform) -> np.ndarray:
        return (self.normalize @ t.homogeneous() @ self.denormalize)[:2].reshape(-1)

    def to_transform(self, params: np.ndarray) -> AffineTransform:
        normalized = np.vstack([params.reshape(2, 3), [0, 0, 1]])
        return AffineTransform(self.denormalize @ normalized @ self.normalize)

    def __call__(self, params: np.ndarray) -> float:
        return self.evaluate(self.to_transform(params))[0]

    def evaluate(self, t: AffineTransform) -> Tuple[float, np.ndarray, np.ndarray]:
        inverse = t.inverse()
        source = self.grid @ inverse.linear.T + inverse.offset
        valid = (
            (source[:, 0] >= 0)
            & (source[:, 0] <= self.width - 1)
            & (source[:, 1] >= 0)
            & (source[:, 1] <= self.height - 1)
        )
        if valid.mean() < _MIN_COVERAGE:
            return np.inf, np.empty(0), np.empty(0)
        sampled = ndimage.map_coordinates(
            self.moving,
            [source[valid, 1], source[valid, 0]],
            order=1,
            mode="nearest",
            prefilter=False,
        )
        reference = self.fixed.ravel()[valid]
        difference = sampled - reference
        return float(np.mean(difference * difference)), reference, sampled


def _normalized_correlation(a: np.ndarray, b: np.ndarray) -> float:
    if a.size < 2:
        return 0.0
    a = a - a.mean()
    b = b - b.mean()
    denominator = np.sqrt(np.sum(a * a) * np.sum(b * b))
    if denominator <= 1e-300:
        return 0.0
    return float(np.sum(a * b) / denominator)


def refine_affine(
    fixed: np.ndarray,
    moving: np.ndarray,
    init: AffineTransform,
    levels: int = 3,
    max_iters: int = 100,
) -> RegistrationResult:
    """Coarse-to-fine gradient descent on SSD over the 6 affine parameters"""
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if not init.is_plausible():
        raise ValueError(f"Initial transform determinant {init.determinant():.3f} is out of bounds")
    fixed = np.asarray(fixed, dtype=np.float64)
    moving = np.asarray(moving, dtype=np.float64)
    _check_pair(fixed, moving)

    fixed_pyramid = _downsample(fixed, levels)
    moving_pyramid = _downsample(moving, levels)
    transform = init
    traces: List[List[float]] = []
    converged = False
    diverged = False
    total_iterations = 0

    for level in reversed(range(len(fixed_pyramid))):
        factor = float(2**level)
        cost = _AffineCost(fixed_pyramid[level], moving_pyramid[level])
        params = cost.to_params(_level_transform(transform, factor))
        value = cost(params)
        trace = [value]
        converged = False
        step = 1.0

        for _ in range(max_iters):
            if not np.isfinite(value):
                # too little overlap to measure anything
                break
            if value <= _EXACT_MATCH:
                converged = True
                break
            total_iterations += 1
            gradient = np.zeros(6)
            for i in range(6):
                delta = np.zeros(6)
                delta[i] = _GRADIENT_STEP
                gradient[i] = (cost(params + delta) - cost(params - delta)) / (2 * _GRADIENT_STEP)
            if not np.all(np.isfinite(gradient)) or not np.any(gradient):
                converged = True
                break

            accepted = False
            out_of_bounds = False
            step = min(step * 2.0, 1e6)
            for _ in range(_MAX_BACKTRACKS):
                candidate = params - step * gradient
                if not cost.to_transform(candidate).is_plausible():
                    out_of_bounds = True
                else:
                    out_of_bounds = False
                    candidate_value = cost(candidate)
                    if candidate_value <= value:
                        accepted = True
                        break
                step *= 0.5
            if not accepted:
                # descent leads out of the determinant bounds, or this is a local minimum
                diverged = out_of_bounds
                converged = not out_of_bounds
                break

            change = abs(value - candidate_value) / max(value, 1e-300)
            params, value = candidate, candidate_value
            trace.append(value)
            if change < CONVERGENCE_TOL:
                converged = True
                break

        traces.append(trace)
        transform = _level_transform(cost.to_transform(params), 1.0 / factor)
        if diverged:
            logger.warning("Affine refinement left the determinant bounds; keeping best-so-far")
            break

    _, reference, sampled = _AffineCost(fixed, moving).evaluate(transform)
    score = _normalized_correlation(reference, sampled)
    return RegistrationResult(
        transform=transform,
        score=score,
        converged=converged and not diverged,
        ssd_trace=traces,
        iterations=total_iterations,
    )


class PatchRegistrar(IRegistrar):
    """Rigid search followed by affine refinement on grey mean-OD images"""

    def __init__(
        self,
        angle_range: float = 10.0,
        angle_step: float = 0.5,
        levels: int = 3,
        max_iters: int = 100,
        illuminant: int = DEFAULT_ILLUMINANT,
    ):
        self.angle_range = angle_range
        self.angle_step = angle_step
        self.levels = levels
        self.max_iters = max_iters
        self.illuminant = illuminant

    def register(self, fixed: RgbImage, moving: RgbImage) -> RegistrationResult:
        return self.register_gray(
            to_gray_od(fixed, self.illuminant), to_gray_od(moving, self.illuminant)
        )

    def register_gray(self, fixed: np.ndarray, moving: np.ndarray) -> RegistrationResult:
        rigid = estimate_rigid(fixed, moving, self.angle_range, self.angle_step)
        refined = refine_affine(fixed, moving, rigid.transform, self.levels, self.max_iters)
        logger.info(
            "Registered pair: score=%.3f converged=%s", refined.score, refined.converged
        )
        return refined
