"""Driving-image augmentation: color jitter, scaling, piecewise-affine
warping, and face-centered cropping.

The geometric part is exposed both as an image warp (single resampling
pass) and as a forward point map, so tests can track keypoints through
exactly the transform that produced the image.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from skimage.transform import PiecewiseAffineTransform, warp

from .data import BOX_DILATION, FaceBox, InvalidInputError

GRID_POINTS = 4
# geometric strengths sized for 64px sprites: expressive features are only
# a few pixels tall, so displacement caps beyond ~1px destroy the very
# signal the motion branch must preserve
MAX_WARP = 0.02  # control-point displacement cap, fraction of image size
MAX_SCALE_DELTA = 0.15
JITTER_RANGE = 0.3
HUE_RANGE = 0.1

# grid extends past the image so the warp mesh always covers it
_GRID_MARGIN = 0.2


@dataclass
class AugmentationParams:
    brightness: float = 0.0
    contrast: float = 0.0
    saturation: float = 0.0
    hue: float = 0.0
    scale_factor: float = 1.0
    warp_disp: np.ndarray = field(
        default_factory=lambda: np.zeros((GRID_POINTS, GRID_POINTS, 2))
    )  # normalized units
    crop_box: FaceBox = field(default_factory=lambda: FaceBox(0.5, 0.5, 1.0))
    rng_seed: int = 0

    def validate(self) -> None:
        if abs(self.scale_factor - 1.0) > MAX_SCALE_DELTA + 1e-9:
            raise InvalidInputError(f"scale_factor {self.scale_factor} outside the supported range")
        if np.abs(self.warp_disp).max() > MAX_WARP + 1e-9:
            raise InvalidInputError("control-point displacement exceeds max_warp")
        if self.warp_disp.shape != (GRID_POINTS, GRID_POINTS, 2):
            raise InvalidInputError("warp grid must be KxKx2")
        if self.crop_box.s > 1.0 + 1e-9:
            raise InvalidInputError("crop box exceeds image after clamping")

    def is_identity_geometry(self) -> bool:
        full = (
            abs(self.crop_box.cx - 0.5) < 1e-12
            and abs(self.crop_box.cy - 0.5) < 1e-12
            and abs(self.crop_box.s - 1.0) < 1e-12
        )
        return (
            abs(self.scale_factor - 1.0) < 1e-12
            and not np.any(self.warp_disp)
            and full
        )

    def is_identity(self) -> bool:
        return (
            self.brightness == 0.0
            and self.contrast == 0.0
            and self.saturation == 0.0
            and self.hue == 0.0
            and self.is_identity_geometry()
        )


def sample_augmentation(
    box: FaceBox, image_size: int, rng: np.random.Generator
) -> AugmentationParams:
    """Draw augmentation parameters; the crop follows the face box."""
    disp = rng.uniform(-MAX_WARP, MAX_WARP, size=(GRID_POINTS, GRID_POINTS, 2))
    return AugmentationParams(
        brightness=float(rng.uniform(-JITTER_RANGE, JITTER_RANGE)),
        contrast=float(rng.uniform(-JITTER_RANGE, JITTER_RANGE)),
        saturation=float(rng.uniform(-JITTER_RANGE, JITTER_RANGE)),
        hue=float(rng.uniform(-HUE_RANGE, HUE_RANGE)),
        scale_factor=float(rng.uniform(1.0 - MAX_SCALE_DELTA, 1.0 + MAX_SCALE_DELTA)),
        warp_disp=disp,
        crop_box=box.dilated(BOX_DILATION).clamped(),
        rng_seed=int(rng.integers(2**31)),
    )


# --- color ------------------------------------------------------------------

_HUE_AXIS = np.ones(3) / np.sqrt(3.0)


def _hue_rotation_matrix(angle: float) -> np.ndarray:
    """Rotation of RGB space around the gray diagonal."""
    c, s = np.cos(angle), np.sin(angle)
    x, y, z = _HUE_AXIS
    k = np.array([[0, -z, y], [z, 0, -x], [-y, x, 0]])
    return c * np.eye(3) + s * k + (1 - c) * np.outer(_HUE_AXIS, _HUE_AXIS)


def color_jitter(img: np.ndarray, params: AugmentationParams) -> np.ndarray:
    """Pointwise color augmentation; never moves geometry."""
    out = img.astype(np.float64)
    out = out * (1.0 + params.brightness)
    mean = out.mean()
    out = (out - mean) * (1.0 + params.contrast) + mean
    gray = out.mean(axis=2, keepdims=True)
    out = gray + (out - gray) * (1.0 + params.saturation)
    if params.hue != 0.0:
        rot = _hue_rotation_matrix(2.0 * np.pi * params.hue)
        out = out @ rot.T
    return np.clip(out, 0.0, 1.0).astype(np.float32)


# --- geometry ----------------------------------------------------------------


class _GeometricMap:
    """scale-about-face-center, then piecewise-affine warp, then crop+resize.

    Operates in pixel (x, y) coordinates of an S x S image.
    """

    def __init__(self, params: AugmentationParams, box: FaceBox, size: int):
        self.size = size
        self.scale = params.scale_factor
        self.center = np.array([box.cx * size, box.cy * size])
        crop = params.crop_box
        self.crop_origin = np.array(
            [(crop.cx - crop.s / 2.0) * size, (crop.cy - crop.s / 2.0) * size]
        )
        self.crop_scale = crop.s  # output pixel -> crop.s input pixels

        self.paw = None
        self.paw_inv = None
        if np.any(params.warp_disp):
            lin = np.linspace(-_GRID_MARGIN, 1.0 + _GRID_MARGIN, GRID_POINTS) * size
            gx, gy = np.meshgrid(lin, lin)
            src = np.stack([gx.ravel(), gy.ravel()], axis=1)
            dst = src + params.warp_disp.reshape(-1, 2) * size
            fwd = PiecewiseAffineTransform()
            fwd.estimate(src, dst)
            self.paw = fwd

    def forward(self, pts: np.ndarray) -> np.ndarray:
        """Input pixel coords -> output pixel coords."""
        q = self.center + self.scale * (pts - self.center)
        if self.paw is not None:
            q = self.paw(q)
        return (q - self.crop_origin) / self.crop_scale

    def inverse(self, pts: np.ndarray) -> np.ndarray:
        q = pts * self.crop_scale + self.crop_origin
        if self.paw is not None:
            q = self.paw.inverse(q)
        return self.center + (q - self.center) / self.scale


def augment_driving(
    img: np.ndarray, box: FaceBox, params: AugmentationParams
) -> np.ndarray:
    """Full driving-path augmentation; output has the input resolution."""
    params.validate()
    if params.is_identity():
        return img.copy()
    out = color_jitter(img, params)
    if params.is_identity_geometry():
        return out
    size = img.shape[0]
    gmap = _GeometricMap(params, box, size)
    warped = warp(
        out.astype(np.float64),
        inverse_map=lambda coords: gmap.inverse(coords),
        mode="edge",
        order=1,
        preserve_range=True,
    )
    return np.clip(warped, 0.0, 1.0).astype(np.float32)


def map_keypoints(
    pts: np.ndarray, box: FaceBox, params: AugmentationParams, size: int
) -> np.ndarray:
    """Apply the recorded geometric map to normalized (u, v) points."""
    params.validate()
    if params.is_identity_geometry():
        return np.asarray(pts, dtype=np.float64).copy()
    gmap = _GeometricMap(params, box, size)
    px = np.asarray(pts, dtype=np.float64) * size
    return gmap.forward(px) / size
