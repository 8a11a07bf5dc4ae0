"""Frame-pair sampling, face boxes, f_rts, and the synthetic clip dataset.

Clips live on disk as one directory per clip with zero-padded PNG frames
plus a ``manifest.json`` recording per-frame face boxes and, for synthetic
clips, the ground-truth attributes and identity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .sprites import (
    FaceAttributes,
    FaceIdentity,
    head_radii,
    render_sprite,
)

BOX_DILATION = 1.6


class InvalidInputError(ValueError):
    pass


@dataclass
class FaceBox:
    """Square face box in normalized image coordinates."""

    cx: float
    cy: float
    s: float

    def validate(self) -> None:
        if not (0.0 < self.s <= 1.0):
            raise InvalidInputError(f"face box side {self.s} outside (0, 1]")

    def dilated(self, factor: float = BOX_DILATION) -> "FaceBox":
        return FaceBox(self.cx, self.cy, self.s * factor)

    def clamped(self) -> "FaceBox":
        """Shift/shrink so the box lies inside the unit square."""
        s = min(self.s, 1.0)
        half = s / 2.0
        cx = min(max(self.cx, half), 1.0 - half)
        cy = min(max(self.cy, half), 1.0 - half)
        return FaceBox(cx, cy, s)


@dataclass
class RTSTriplet:
    """Relative translation and scale between reference and driving boxes."""

    dx_rel: float
    dy_rel: float
    scale_ratio: float

    def as_vector(self) -> np.ndarray:
        return np.array([self.dx_rel, self.dy_rel, self.scale_ratio], dtype=np.float32)

    @staticmethod
    def identity() -> "RTSTriplet":
        return RTSTriplet(0.0, 0.0, 1.0)


def compute_f_rts(ref_box: FaceBox, drv_box: FaceBox) -> RTSTriplet:
    """Translation/scale triplet recovering head motion lost to cropping."""
    if ref_box.s <= 0.0:
        raise InvalidInputError("degenerate reference box (s <= 0)")
    if drv_box.s <= 0.0:
        raise InvalidInputError("degenerate driving box (s <= 0)")
    return RTSTriplet(
        (drv_box.cx - ref_box.cx) / ref_box.s,
        (drv_box.cy - ref_box.cy) / ref_box.s,
        drv_box.s / ref_box.s,
    )


@dataclass
class FramePair:
    reference: np.ndarray
    driving_raw: np.ndarray
    driving_aug: np.ndarray
    target: np.ndarray
    ref_box: FaceBox
    drv_box: FaceBox
    rts: RTSTriplet


def sprite_face_box(attributes: FaceAttributes, identity: FaceIdentity) -> FaceBox:
    """Ground-truth face box of a rendered sprite (head bounding square)."""
    rx, ry = head_radii(identity, attributes.zoom)
    return FaceBox(0.5 + attributes.pos_x, 0.5 + attributes.pos_y, 2.0 * max(rx, ry))


# --- clips on disk --------------------------------------------------------


@dataclass
class Clip:
    path: Path
    boxes: list[FaceBox]
    attributes: list[FaceAttributes] | None = None
    identity: FaceIdentity | None = None

    def __len__(self) -> int:
        return len(self.boxes)

    def frame(self, i: int) -> np.ndarray:
        return load_image(self.path / f"frame_{i:04d}.png")

    def frames(self) -> list[np.ndarray]:
        return [self.frame(i) for i in range(len(self))]


def save_image(path: Path, img: np.ndarray) -> None:
    arr = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    PILImage.fromarray(arr).save(path)


def load_image(path: Path) -> np.ndarray:
    arr = np.asarray(PILImage.open(path).convert("RGB"), dtype=np.float32)
    return arr / 255.0


def write_clip(
    path: Path,
    frames: list[np.ndarray],
    boxes: list[FaceBox],
    attributes: list[FaceAttributes] | None = None,
    identity: FaceIdentity | None = None,
) -> None:
    path.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        save_image(path / f"frame_{i:04d}.png", frame)
    manifest = {
        "num_frames": len(frames),
        "boxes": [asdict(b) for b in boxes],
    }
    if attributes is not None:
        manifest["attributes"] = [asdict(a) for a in attributes]
    if identity is not None:
        manifest["identity"] = asdict(identity)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=1))


def load_clip(path: Path) -> Clip:
    manifest = json.loads((path / "manifest.json").read_text())
    boxes = [FaceBox(**b) for b in manifest["boxes"]]
    attributes = None
    if "attributes" in manifest:
        attributes = [FaceAttributes(**a) for a in manifest["attributes"]]
    identity = FaceIdentity(**manifest["identity"]) if "identity" in manifest else None
    return Clip(Path(path), boxes, attributes, identity)


class ClipDataset:
    """All clip directories under a root, sorted by name."""

    def __init__(self, root: Path):
        root = Path(root)
        clip_dirs = sorted(p for p in root.iterdir() if (p / "manifest.json").exists())
        if not clip_dirs:
            raise InvalidInputError(f"no clips found under {root}")
        self.clips = [load_clip(p) for p in clip_dirs]

    def __len__(self) -> int:
        return len(self.clips)


# --- synthetic clip generation --------------------------------------------


def _smooth_wave(rng: np.random.Generator, length: int, lo: float, hi: float) -> np.ndarray:
    """A sinusoid with random period/phase, clipped to [lo, hi]."""
    period = rng.uniform(8.0, 24.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    amp = rng.uniform(0.6, 1.0)
    t = np.arange(length)
    wave = 0.5 + 0.5 * amp * np.sin(2.0 * np.pi * t / period + phase)
    return lo + (hi - lo) * np.clip(wave, 0.0, 1.0)


def sample_identity(rng: np.random.Generator) -> FaceIdentity:
    return FaceIdentity(
        skin_tone=float(rng.uniform(0.0, 1.0)),
        face_shape=float(rng.uniform(0.0, 1.0)),
    )


def generate_clip_attributes(
    rng: np.random.Generator, length: int
) -> list[FaceAttributes]:
    eye = _smooth_wave(rng, length, 0.05, 1.0)
    mouth = _smooth_wave(rng, length, 0.0, 1.0)
    brow = _smooth_wave(rng, length, 0.0, 1.0)
    yaw = _smooth_wave(rng, length, -0.9, 0.9)
    roll = _smooth_wave(rng, length, -0.7, 0.7)
    pos_x = _smooth_wave(rng, length, -0.03, 0.03)
    pos_y = _smooth_wave(rng, length, -0.03, 0.03)
    zoom = _smooth_wave(rng, length, 0.95, 1.05)
    return [
        FaceAttributes(
            eye_openness=float(eye[i]),
            mouth_openness=float(mouth[i]),
            brow_raise=float(brow[i]),
            yaw=float(yaw[i]),
            roll=float(roll[i]),
            pos_x=float(pos_x[i]),
            pos_y=float(pos_y[i]),
            zoom=float(zoom[i]),
        )
        for i in range(length)
    ]


def generate_dataset(
    out_dir: Path,
    num_clips: int = 40,
    clip_length: int = 32,
    image_size: int = 64,
    seed: int = 0,
) -> None:
    """Render a synthetic sprite dataset to disk."""
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    for c in range(num_clips):
        identity = sample_identity(rng)
        attrs = generate_clip_attributes(rng, clip_length)
        frames, boxes = [], []
        for a in attrs:
            face = render_sprite(a, identity, image_size)
            frames.append(face.rendered)
            boxes.append(sprite_face_box(a, identity))
        write_clip(out_dir / f"clip_{c:04d}", frames, boxes, attrs, identity)


# --- frame pair sampling ---------------------------------------------------


def sample_pair_indices(num_frames: int, rng: np.random.Generator) -> tuple[int, int]:
    """Two distinct frame indices, uniform over ordered pairs."""
    if num_frames < 2:
        raise InvalidInputError("need at least 2 frames to sample a pair")
    i = int(rng.integers(num_frames))
    j = int(rng.integers(num_frames - 1))
    if j >= i:
        j += 1
    return i, j


def sample_frame_pair(
    frames: list[np.ndarray],
    boxes: list[FaceBox],
    rng: np.random.Generator,
    params=None,
) -> FramePair:
    """Draw a (reference, driving) pair and build the training inputs.

    ``params`` overrides the sampled augmentation (mainly for tests);
    by default augmentation parameters are drawn from ``rng``.
    """
    from .augment import augment_driving, sample_augmentation

    i, j = sample_pair_indices(len(frames), rng)
    ref, drv = frames[i], frames[j]
    ref_box, drv_box = boxes[i], boxes[j]
    if params is None:
        params = sample_augmentation(drv_box, drv.shape[0], rng)
    aug = augment_driving(drv, drv_box, params)
    return FramePair(
        reference=ref,
        driving_raw=drv,
        driving_aug=aug,
        target=drv,
        ref_box=ref_box,
        drv_box=drv_box,
        rts=compute_f_rts(ref_box, drv_box),
    )
