import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from motiondiff.augment import (
    GRID_POINTS,
    MAX_WARP,
    AugmentationParams,
    augment_driving,
    color_jitter,
    map_keypoints,
    sample_augmentation,
)
from motiondiff.data import FaceBox, InvalidInputError
from motiondiff.sprites import FaceAttributes, FaceIdentity, render_sprite


@pytest.fixture(scope="module")
def face_img():
    return render_sprite(FaceAttributes(), FaceIdentity(), 64).rendered


BOX = FaceBox(0.5, 0.5, 0.55)


def test_identity_params_noop(face_img):
    out = augment_driving(face_img, BOX, AugmentationParams())
    assert np.array_equal(out, face_img)


def test_color_only_keeps_geometry(face_img):
    params = AugmentationParams(brightness=0.2, saturation=-0.1)
    out = augment_driving(face_img, BOX, params)
    # the dark mouth stays the darkest region in the same place
    assert np.unravel_index(out.mean(2).argmin(), out.shape[:2]) == \
        np.unravel_index(face_img.mean(2).argmin(), face_img.shape[:2])


def test_brightness_direction(face_img):
    brighter = color_jitter(face_img, AugmentationParams(brightness=0.3))
    darker = color_jitter(face_img, AugmentationParams(brightness=-0.3))
    assert brighter.mean() > face_img.mean() > darker.mean()


def test_hue_preserves_gray():
    gray = np.full((8, 8, 3), 0.5, dtype=np.float32)
    out = color_jitter(gray, AugmentationParams(hue=0.1))
    assert np.allclose(out, gray, atol=1e-6)


def test_validate_rejects_bad_params():
    with pytest.raises(InvalidInputError):
        AugmentationParams(scale_factor=1.4).validate()
    disp = np.zeros((GRID_POINTS, GRID_POINTS, 2))
    disp[0, 0, 0] = MAX_WARP * 2
    with pytest.raises(InvalidInputError):
        AugmentationParams(warp_disp=disp).validate()


# Keypoint map oracle: with pure scale-about-center, the forward map is
# closed form. [DERIVED: p' = c + k (p - c)]
def test_keypoint_map_pure_scale():
    params = AugmentationParams(scale_factor=1.1)
    pts = np.array([[0.5, 0.5], [0.3, 0.6], [0.7, 0.2]])
    out = map_keypoints(pts, BOX, params, 64)
    expected = np.array([0.5, 0.5]) + 1.1 * (pts - np.array([0.5, 0.5]))
    assert np.allclose(out, expected, atol=1e-9)


def test_keypoint_map_crop_only():
    crop = FaceBox(0.5, 0.5, 0.5)
    params = AugmentationParams(crop_box=crop)
    out = map_keypoints(np.array([[0.5, 0.5], [0.375, 0.25]]), BOX, params, 64)
    assert np.allclose(out[0], [0.5, 0.5], atol=1e-9)
    assert np.allclose(out[1], [0.25, 0.0], atol=1e-9)


def test_keypoints_track_warped_image(face_img, rng):
    """The mapped mouth keypoint lands on the mouth of the warped image."""
    params = sample_augmentation(BOX, 64, rng)
    params.brightness = params.contrast = params.saturation = params.hue = 0.0
    out = augment_driving(face_img, BOX, params)
    mouth = np.array([[0.5, 0.5 + 0.16]])  # mouth center, default attrs
    mapped = map_keypoints(mouth, BOX, params, 64)[0]
    px = np.clip((mapped * 64).astype(int), 0, 63)
    # mouth color is dark red: red channel well above blue at the mapped point
    patch = out[max(px[1] - 2, 0) : px[1] + 3, max(px[0] - 2, 0) : px[0] + 3]
    assert patch.mean(axis=(0, 1))[0] - patch.mean(axis=(0, 1))[2] > 0.05


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_sampled_params_always_valid(seed):
    rng = np.random.default_rng(seed)
    params = sample_augmentation(BOX, 64, rng)
    params.validate()
    assert abs(params.scale_factor - 1.0) <= 0.3 + 1e-9
    assert np.abs(params.warp_disp).max() <= MAX_WARP + 1e-9
    crop = params.crop_box
    assert crop.cx - crop.s / 2 >= -1e-9 and crop.cx + crop.s / 2 <= 1 + 1e-9


def test_warp_inverse_consistency(rng):
    """forward(inverse(p)) ~= p through the full geometric map.

    The piecewise-affine forward and inverse branches triangulate source
    and destination grids independently, so they agree only to sub-pixel
    precision where the triangulations flip a diagonal. Without the warp
    the map is closed form and the round trip is exact.
    """
    from motiondiff.augment import _GeometricMap

    params = sample_augmentation(BOX, 64, rng)
    gmap = _GeometricMap(params, BOX, 64)
    pts = rng.uniform(16, 48, size=(10, 2))
    back = gmap.forward(gmap.inverse(pts))
    assert np.abs(back - pts).max() < 1.5  # near pixel scale

    params.warp_disp = np.zeros_like(params.warp_disp)
    gmap = _GeometricMap(params, BOX, 64)
    back = gmap.forward(gmap.inverse(pts))
    assert np.allclose(back, pts, atol=1e-9)


def test_augment_output_range(face_img, rng):
    for _ in range(3):
        params = sample_augmentation(BOX, 64, rng)
        out = augment_driving(face_img, BOX, params)
        assert out.shape == face_img.shape
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert out.dtype == np.float32
