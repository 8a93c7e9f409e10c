"""
Synthetic HE/HES tile pairs with known stain matrix, concentrations and warp.

HES tiles are rendered through I = I0 * exp(-W H) from seeded blob fields;
HE tiles reuse the same concentrations with part of the Saffron density
redirected into the Eosin channel and no Saffron column. Every draw comes
from the 64-bit linear generator so phantoms are identical on every
platform.
"""

import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
import yaml

from src.core.affine import AffineTransform
from src.core.errors import DocumentFormatError
from src.core.imaging import (
    CANONICAL_LABELS,
    DEFAULT_ILLUMINANT,
    EOSIN,
    HEMATOXYLIN,
    ConcentrationMap,
    RgbImage,
    StainMatrix,
    od_array_to_rgb,
)
from src.core.rng import Lcg64
from src.services.registration import BILINEAR, warp_affine

logger = logging.getLogger(__name__)

MIN_SIZE = 32

PHANTOM_VECTORS = {
    "well_separated": ((0.65, 0.70, 0.29), (0.07, 0.99, 0.11), (0.10, 0.48, 0.87)),
    # Saffron nearly shares the Eosin hue
    "hard": ((0.65, 0.70, 0.29), (0.07, 0.99, 0.11), (0.20, 0.95, 0.35)),
}

# truncated Gaussian bumps end at this many sigmas
_BUMP_RADIUS = 2.0


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 256
    height: int = 256
    seed: int = 0
    blob_count: Tuple[int, int, int] = (8, 8, 6)
    max_concentration: Tuple[float, float, float] = (0.5, 0.5, 0.5)
    # blob sigma range as fractions of the shorter side
    blob_size: Tuple[float, float] = (1 / 16, 1 / 6)
    noise_sigma: float = 0.0
    warp: Optional[AffineTransform] = None
    hard_mode: bool = False
    eosin_redirect: float = 0.5
    illuminant: int = DEFAULT_ILLUMINANT

    def __post_init__(self):
        if self.width < MIN_SIZE or self.height < MIN_SIZE:
            raise ValueError(
                f"Phantom dimensions must be at least {MIN_SIZE}x{MIN_SIZE}, got {self.width}x{self.height}"
            )
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if len(self.blob_count) != 3 or any(c < 0 for c in self.blob_count):
            raise ValueError("blob_count needs three non-negative counts (H, E, S)")
        if len(self.max_concentration) != 3 or any(c < 0 for c in self.max_concentration):
            raise ValueError("max_concentration needs three non-negative values (H, E, S)")
        low, high = self.blob_size
        if not 0 < low <= high:
            raise ValueError(f"blob_size must satisfy 0 < low <= high, got {self.blob_size}")
        if not 0 <= self.eosin_redirect <= 1:
            raise ValueError(f"eosin_redirect must lie in [0, 1], got {self.eosin_redirect}")
        object.__setattr__(self, "blob_count", tuple(int(c) for c in self.blob_count))
        object.__setattr__(self, "max_concentration", tuple(float(c) for c in self.max_concentration))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True)
class Phantom:
    w_true: StainMatrix
    h_true: ConcentrationMap
    i_he: RgbImage
    i_hes: RgbImage
    spec: PhantomSpec = field(default=None)

    def __iter__(self):
        # unpacks as (w_true, h_true, i_he, i_hes)
        return iter((self.w_true, self.h_true, self.i_he, self.i_hes))

    @property
    def he_matrix(self) -> StainMatrix:
        return self.w_true.select(HEMATOXYLIN, EOSIN)


def phantom_stain_matrix(hard_mode: bool = False, illuminant: int = DEFAULT_ILLUMINANT) -> StainMatrix:
    vectors = PHANTOM_VECTORS["hard" if hard_mode else "well_separated"]
    return StainMatrix.from_vectors(vectors, CANONICAL_LABELS, illuminant)


def _blob_field(rng: Lcg64, shape: Tuple[int, int], count: int, peak: float, size) -> np.ndarray:
    height, width = shape
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    result = np.zeros(shape)
    if count == 0 or peak == 0:
        return result
    short = min(height, width)
    floor = np.exp(-0.5 * _BUMP_RADIUS**2)
    for _ in range(count):
        cx, cy, s, a = rng.uniform(4)
        cx *= width
        cy *= height
        sigma = short * (size[0] + s * (size[1] - size[0]))
        amplitude = peak * (0.5 + 0.5 * a)
        r2 = ((xs - cx) ** 2 + (ys - cy) ** 2) / (sigma * sigma)
        bump = (np.exp(-0.5 * r2) - floor) / (1.0 - floor)
        bump = np.where(r2 < _BUMP_RADIUS**2, bump, 0.0)
        result = np.maximum(result, amplitude * bump)
    return result


def _render(od: np.ndarray, rng: Lcg64, noise_sigma: float, i0: int) -> RgbImage:
    intensities = float(i0) * np.exp(-od)
    if noise_sigma > 0:
        intensities = intensities + noise_sigma * rng.normal(intensities.size).reshape(intensities.shape)
        intensities = np.clip(intensities, 0.0, float(i0))
        return RgbImage(np.clip(np.floor(intensities + 0.5), 0, 255).astype(np.uint8))
    return RgbImage(od_array_to_rgb(od, i0))


def generate_phantom(spec: PhantomSpec) -> Phantom:
    rng = Lcg64(spec.seed)
    w_true = phantom_stain_matrix(spec.hard_mode, spec.illuminant)
    fields = [
        _blob_field(rng, spec.shape, count, peak, spec.blob_size)
        for count, peak in zip(spec.blob_count, spec.max_concentration)
    ]
    hematoxylin, eosin, saffron = fields
    # collagen takes Saffron instead of Eosin on the HES slide
    eosin = np.where(saffron > 0, 0.0, eosin)
    # images render from the stored (float32-held) truth
    h_true = ConcentrationMap(np.stack([hematoxylin, eosin, saffron], axis=2))
    hematoxylin, eosin, saffron = np.moveaxis(h_true.data, 2, 0)

    od_hes = h_true.data @ w_true.matrix.T
    h_he = np.stack([hematoxylin, eosin + spec.eosin_redirect * saffron], axis=2)
    od_he = h_he @ w_true.matrix[:, :2].T

    i_hes = _render(od_hes, rng, spec.noise_sigma, spec.illuminant)
    i_he = _render(od_he, rng, spec.noise_sigma, spec.illuminant)
    logger.debug(
        "Phantom %dx%d seed=%d: saffron covers %.1f%% of pixels",
        spec.width, spec.height, spec.seed, 100.0 * float(np.mean(saffron > 0)),
    )
    return Phantom(w_true, h_true, i_he, i_hes, spec)


def random_warp(
    rng: Lcg64,
    shape: Tuple[int, int],
    max_angle: float = 5.0,
    max_shift: float = 20.0,
    scale_range: Tuple[float, float] = (0.98, 1.02),
) -> AffineTransform:
    """Rotation and isotropic scale about the tile centre followed by a shift"""
    angle, scale, tx, ty = rng.uniform(4)
    height, width = shape
    center = ((width - 1) / 2.0, (height - 1) / 2.0)
    rotation = AffineTransform.rotation(
        max_angle * (2 * angle - 1),
        center,
        scale_range[0] + scale * (scale_range[1] - scale_range[0]),
    )
    shift = AffineTransform.translation(max_shift * (2 * tx - 1), max_shift * (2 * ty - 1))
    return shift.compose(rotation)


def _canvas_crop(spec: PhantomSpec, margin: int):
    """Phantom `margin` pixels larger on every side, t_true in canvas coordinates, crop window"""
    t_true = spec.warp if spec.warp is not None else AffineTransform.identity()
    canvas = replace(spec, width=spec.width + 2 * margin, height=spec.height + 2 * margin, warp=None)
    big = generate_phantom(canvas)
    to_canvas = AffineTransform.translation(margin, margin)
    t_canvas = to_canvas.compose(t_true).compose(to_canvas.inverse())
    crop = (slice(margin, margin + spec.height), slice(margin, margin + spec.width))
    return big, t_true, t_canvas, crop


def generate_registration_case(
    spec: PhantomSpec, margin: int = 32
) -> Tuple[RgbImage, RgbImage, AffineTransform]:
    """
    (fixed, moving, t_true) with moving = warp_affine(fixed, t_true).

    Both tiles are cut from a phantom `margin` pixels larger on every side,
    so content warped into view comes from the phantom instead of white fill.
    Registration recovers t_true.inverse() (moving to fixed coordinates).
    """
    big, t_true, t_canvas, crop = _canvas_crop(spec, margin)
    fixed = RgbImage(big.i_hes.data[crop].copy())
    moving = RgbImage(warp_affine(big.i_hes, t_canvas, BILINEAR).data[crop].copy())
    return fixed, moving, t_true


def generate_warped_phantom(spec: PhantomSpec, margin: int = 32) -> Phantom:
    """Phantom whose HES tile is displaced by spec.warp, as after restaining and rescanning"""
    if spec.warp is None:
        return generate_phantom(spec)
    big, _, t_canvas, crop = _canvas_crop(spec, margin)
    return Phantom(
        big.w_true,
        ConcentrationMap(big.h_true.data[crop].copy()),
        RgbImage(big.i_he.data[crop].copy()),
        RgbImage(warp_affine(big.i_hes, t_canvas, BILINEAR).data[crop].copy()),
        spec,
    )


_SPEC_KEYS = {
    "width", "height", "seed", "blob_count", "max_concentration", "blob_size",
    "noise_sigma", "warp", "hard_mode", "eosin_redirect", "illuminant",
}


def spec_from_dict(values: Dict[str, Any]) -> PhantomSpec:
    unknown = set(values) - _SPEC_KEYS
    if unknown:
        raise DocumentFormatError(f"Unknown phantom spec keys: {sorted(unknown)}")
    kwargs = dict(values)
    for key in ("blob_count", "max_concentration", "blob_size"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    if kwargs.get("warp") is not None:
        kwargs["warp"] = AffineTransform.from_coefficients(kwargs["warp"])
    try:
        return PhantomSpec(**kwargs)
    except (TypeError, ValueError) as e:
        raise DocumentFormatError(f"Invalid phantom spec: {e}") from e


def load_phantom_spec(path) -> PhantomSpec:
    """Read a YAML mapping of PhantomSpec fields; `warp` is six coefficients a, b, tx, c, d, ty"""
    try:
        with open(Path(path), "r", encoding="utf-8") as f:
            values = yaml.safe_load(f) or {}
    except yaml.YAMLError as e:
        raise DocumentFormatError(f"Malformed phantom spec {path}: {e}") from e
    if not isinstance(values, dict):
        raise DocumentFormatError(f"Phantom spec {path} must be a mapping")
    return spec_from_dict(values)
