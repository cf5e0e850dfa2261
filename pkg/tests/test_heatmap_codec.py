import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spcnet.config import MPII_FLIP_PAIRS, CodecConfig, ConfigError, DataError
from spcnet.heatmap_codec import (
    CropTransform,
    KeypointSet,
    Visibility,
    build_crop_transform,
    crop_to_heatmap,
    decode_heatmaps,
    encode_heatmaps,
    heatmap_to_crop,
    presence_mask,
    transform_keypoints,
)

CFG = CodecConfig()


def hm_kps(points, vis=None):
    points = np.asarray(points, float)
    n = len(points)
    vis = np.full(n, 2) if vis is None else vis
    return KeypointSet(points, vis, "heatmap64")


def one_joint(x, y):
    cfg = CodecConfig(joint_count=1)
    return cfg, hm_kps([[x, y]])


def test_peak_is_one_at_joint():
    cfg, k = one_joint(32, 32)
    hm = encode_heatmaps(k, cfg)
    assert hm.shape == (1, 64, 64)
    assert hm[0, 32, 32] == 1.0
    assert hm.max() == 1.0


def test_neighbour_value():
    cfg, k = one_joint(32, 32)
    hm = encode_heatmaps(k, cfg)
    # x = 33, y = 32 -> row 32, col 33
    assert hm[0, 32, 33] == pytest.approx(math.exp(-0.5), abs=1e-6)
    assert hm[0, 32, 33] == pytest.approx(0.60653, abs=1e-5)


def test_truncation_window():
    cfg, k = one_joint(32, 32)
    hm = encode_heatmaps(k, cfg)
    assert hm[0, 32, 35] > 0
    assert hm[0, 32, 36] == 0
    assert hm[0, 29, 29] > 0
    assert hm[0, 28, 32] == 0


def test_all_absent_is_zero():
    k = KeypointSet.absent(16, "heatmap64")
    assert not encode_heatmaps(k, CFG).any()


def test_out_of_grid_joint_gets_zero_channel():
    k = hm_kps([[70.0, 10.0], [10.0, 10.0]])
    cfg = CodecConfig(joint_count=2)
    hm = encode_heatmaps(k, cfg)
    assert not hm[0].any() and hm[1].max() == 1.0
    assert presence_mask(k, cfg).tolist() == [False, True]


def test_joint_count_mismatch():
    with pytest.raises(ConfigError):
        encode_heatmaps(hm_kps([[1, 1]]), CFG)


def test_encode_requires_heatmap_frame():
    with pytest.raises(ConfigError):
        encode_heatmaps(KeypointSet([[1, 1]], [2], "crop256"), CodecConfig(joint_count=1))


def test_decode_round_trip_grid_point():
    cfg, k = one_joint(32, 32)
    out = decode_heatmaps(encode_heatmaps(k, cfg), cfg)
    assert out.coords.tolist() == [[32.0, 32.0]]
    assert out.visibility.tolist() == [Visibility.VISIBLE]


def test_decode_zero_channel_is_absent():
    out = decode_heatmaps(np.zeros((2, 64, 64)), CodecConfig(joint_count=2))
    assert out.visibility.tolist() == [0, 0]
    assert out.coords.tolist() == [[-1, -1], [-1, -1]]


def test_decode_tie_break_row_major():
    hm = np.zeros((1, 64, 64))
    hm[0, 9, 9] = 1.0
    hm[0, 5, 5] = 1.0
    out = decode_heatmaps(hm)
    assert out.coords.tolist() == [[5.0, 5.0]]


def test_decode_empty_stack():
    with pytest.raises(ConfigError):
        decode_heatmaps(np.zeros((0, 64, 64)))


def test_decode_resolution_mismatch():
    with pytest.raises(ConfigError):
        decode_heatmaps(np.zeros((16, 32, 32)), CFG)


def test_subpixel_flag_shifts_quarter():
    cfg = CodecConfig(joint_count=1, subpixel=True)
    hm = np.zeros((1, 64, 64))
    hm[0, 10, 20] = 1.0
    hm[0, 10, 21] = 0.5
    hm[0, 9, 20] = 0.3
    out = decode_heatmaps(hm, cfg)
    assert out.coords.tolist() == [[20.25, 9.75]]


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 63.49), st.floats(0, 63.49)), min_size=16, max_size=16),
       st.floats(0.01, 1e4))
def test_decode_scale_invariant(points, c):
    k = hm_kps(points)
    hm = encode_heatmaps(k, CFG)
    assert decode_heatmaps(hm * c, CFG).allclose(decode_heatmaps(hm, CFG))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 63.49), st.floats(0, 63.49)), min_size=16, max_size=16),
       st.floats(0.5, 3.0))
def test_encoded_range_and_peak(points, sigma):
    cfg = CodecConfig(sigma=sigma)
    hm = encode_heatmaps(hm_kps(points), cfg)
    assert hm.min() >= 0 and hm.max() <= 1
    assert np.all(hm.reshape(16, -1).max(axis=1) == 1.0)


# -- crop transforms -----------------------------------------------------------

def identity_transform(flip=False, pairs=()):
    # 256 px image, centre 128, scale 1.28 -> crop == image
    return CropTransform((128.0, 128.0), 256 / 200, 0.0, flip, 256, pairs)


def test_identity_transform_is_identity():
    t = identity_transform()
    np.testing.assert_allclose(t.matrix, [[1, 0, 0], [0, 1, 0]], atol=1e-12)
    k = KeypointSet([[10.5, 50.25], [200, 3]], [2, 1], "image")
    out = transform_keypoints(k, t)
    assert out.frame == "crop256"
    np.testing.assert_allclose(out.coords, k.coords, atol=1e-9)


def test_horizontal_flip_with_pair_swap():
    # joints 10 (r_wrist) and 15 (l_wrist)
    coords = np.full((16, 2), 100.0)
    coords[10] = (10, 50)
    coords[15] = (30, 60)
    t = identity_transform(flip=True, pairs=MPII_FLIP_PAIRS)
    out = transform_keypoints(KeypointSet(coords, np.full(16, 2), "image"), t)
    assert out.coords[15].tolist() == pytest.approx([245, 50])
    assert out.coords[10].tolist() == pytest.approx([225, 60])


def test_forward_demotes_out_of_crop():
    t = CropTransform((50.0, 50.0), 0.5, output_size=256)  # 100 px box
    k = KeypointSet([[50, 50], [200, 50]], [2, 2], "image")
    out = transform_keypoints(k, t)
    assert out.visibility.tolist() == [2, 0]
    assert out.coords[0].tolist() == pytest.approx([128, 128])


def test_frame_checks():
    t = identity_transform()
    with pytest.raises(ConfigError):
        transform_keypoints(KeypointSet([[1, 1]], [2], "crop256"), t, "forward")
    with pytest.raises(ConfigError):
        transform_keypoints(KeypointSet([[1, 1]], [2], "image"), t, "inverse")


def test_non_positive_scale():
    with pytest.raises(DataError):
        build_crop_transform((10, 10), 0.0, CFG)
    with pytest.raises(DataError):
        build_crop_transform((10, 10), 1.0, CFG, scale_jitter=0.0)


transforms = st.builds(
    lambda cx, cy, s, r, f: CropTransform((cx, cy), s, r, f, 256, MPII_FLIP_PAIRS),
    st.floats(0, 500), st.floats(0, 500), st.floats(0.3, 4), st.floats(-60, 60), st.booleans(),
)


@settings(max_examples=100, deadline=None)
@given(transforms, st.integers(0, 2**31 - 1))
def test_forward_matches_matrix_oracle(t, seed):
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-100, 600, (16, 2))
    out = transform_keypoints(KeypointSet(pts, np.full(16, 2), "image"), t)
    m = t.matrix
    expected = np.array([[m[0, 0] * x + m[0, 1] * y + m[0, 2], m[1, 0] * x + m[1, 1] * y + m[1, 2]]
                         for x, y in pts])
    if t.flip:
        for a, b in MPII_FLIP_PAIRS:
            expected[[a, b]] = expected[[b, a]]
    keep = out.present
    np.testing.assert_allclose(out.coords[keep], expected[keep], atol=1e-6)
    inside = np.all((expected >= 0) & (expected < 256), axis=1)
    assert np.array_equal(keep, inside)


@settings(max_examples=100, deadline=None)
@given(transforms, st.integers(0, 2**31 - 1))
def test_forward_inverse_round_trip(t, seed):
    rng = np.random.default_rng(seed)
    crop_pts = rng.uniform(0, 255, (16, 2))
    img = transform_keypoints(KeypointSet(crop_pts, np.full(16, 2), "crop256"), t, "inverse")
    back = transform_keypoints(img, t, "forward")
    np.testing.assert_allclose(back.coords, crop_pts, atol=1e-6)
    assert back.visibility.tolist() == [2] * 16


def test_rotation_180_twice_is_identity():
    t = CropTransform((128.0, 128.0), 256 / 200, 180.0, output_size=256)
    k = KeypointSet([[100.0, 40.0], [3.0, 250.0]], [2, 2], "image")
    once = transform_keypoints(k, t)
    twice = transform_keypoints(once.replace(frame="image"), t)
    np.testing.assert_allclose(twice.coords, k.coords, atol=1e-6)


def test_crop_heatmap_frames():
    k = KeypointSet([[128.0, 64.0]], [2], "crop256")
    h = crop_to_heatmap(k, CodecConfig(joint_count=1))
    assert h.frame == "heatmap64" and h.coords.tolist() == [[32.0, 16.0]]
    assert heatmap_to_crop(h, CodecConfig(joint_count=1)).coords.tolist() == [[128.0, 64.0]]
