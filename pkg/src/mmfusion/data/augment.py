"""Training-time image augmentation.

Each operation fires independently with probability 0.5:

    horizontal flip
    rotation    uniform in [-15, 15] degrees
    zoom        uniform in [0.9, 1.1]
    shear       uniform in [-10, 10] degrees
    brightness  scale uniform in [0.8, 1.2], clamped to [0, 1]

Geometric operations are combined into one affine warp about the image centre
with bilinear interpolation and zero fill, so an all-zero image stays all-zero.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .records import Sample

ROTATION_RANGE = (-15.0, 15.0)
ZOOM_RANGE = (0.9, 1.1)
SHEAR_RANGE = (-10.0, 10.0)
BRIGHTNESS_RANGE = (0.8, 1.2)
APPLY_PROB = 0.5


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    rotation_deg: float | None = None
    zoom: float | None = None
    shear_deg: float | None = None
    brightness: float | None = None

    @property
    def has_warp(self) -> bool:
        return any(v is not None for v in (self.rotation_deg, self.zoom, self.shear_deg))


def draw_params(rng: np.random.Generator) -> AugmentParams:
    # every value is drawn whether or not it is used, so the stream stays aligned
    flip = rng.random() < APPLY_PROB
    vals = {}
    for name, (lo, hi) in (
        ("rotation_deg", ROTATION_RANGE),
        ("zoom", ZOOM_RANGE),
        ("shear_deg", SHEAR_RANGE),
        ("brightness", BRIGHTNESS_RANGE),
    ):
        use = rng.random() < APPLY_PROB
        v = float(rng.uniform(lo, hi))
        vals[name] = v if use else None
    return AugmentParams(flip=bool(flip), **vals)


def _warp_matrix(p: AugmentParams) -> np.ndarray:
    """Forward 2x2 map in (row, col) coordinates: rotate . shear . zoom."""
    th = np.deg2rad(p.rotation_deg or 0.0)
    sh = np.deg2rad(p.shear_deg or 0.0)
    z = p.zoom or 1.0
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    shear = np.array([[1.0, 0.0], [np.tan(sh), 1.0]])
    return rot @ shear @ (z * np.eye(2))


def adjust_brightness(image: np.ndarray, scale: float) -> np.ndarray:
    return np.clip(image * np.float32(scale), 0.0, 1.0).astype(image.dtype, copy=False)


def apply_params(image: np.ndarray, p: AugmentParams) -> np.ndarray:
    out = np.asarray(image, np.float32)
    if p.flip:
        out = out[:, ::-1, :]
    if p.has_warp:
        inv = np.linalg.inv(_warp_matrix(p))
        h, w = out.shape[:2]
        centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
        matrix = np.eye(3)
        matrix[:2, :2] = inv
        offset = np.zeros(3)
        offset[:2] = centre - inv @ centre
        out = ndimage.affine_transform(out, matrix, offset=offset, order=1, mode="constant", cval=0.0)
    if p.brightness is not None:
        out = adjust_brightness(out, p.brightness)
    return np.ascontiguousarray(out, dtype=np.float32)


def augment(sample: Sample, seed: int) -> Sample:
    """Randomly augment the present modalities of ``sample``; absent ones stay black."""
    rng = np.random.default_rng(seed)
    pf = draw_params(rng)
    pi = draw_params(rng)
    facade = apply_params(sample.facade, pf) if sample.facade_present else np.zeros_like(sample.facade)
    interior = apply_params(sample.interior, pi) if sample.interior_present else np.zeros_like(sample.interior)
    return replace(sample, facade=facade, interior=interior)
