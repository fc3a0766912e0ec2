import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vosynth.geometry import CameraIntrinsics, PoseVector, Se3Transform, pose_to_transform, reproject
from vosynth.imaging import DEPTH_MAX, DEPTH_MIN, warp_image
from vosynth.oracle import (
    Plane,
    SceneFormatError,
    SyntheticScene,
    format_scene,
    parse_scene,
    perturb_pose,
    random_snippet,
    render,
    render_motion,
    render_view,
    ridge_scene,
    texture_value,
)

SIZE = (64, 48)
K = CameraIntrinsics.default_for(*SIZE)
WALL = SyntheticScene((Plane((0, 0, 1), 5.0, texture_id=2, scale=2.0),))


def test_fronto_parallel_depth_is_constant():
    I = Se3Transform.identity()
    sn = render(WALL, K, I, [I, I], SIZE)
    assert np.all(sn.depth_center == 5.0)
    assert all(np.array_equal(f, sn.frames[1]) for f in sn.frames)


def test_forward_camera_sees_closer_plane():
    _, depth, hit = render_view(WALL, K, Se3Transform(np.eye(3), [0.0, 0.0, 1.0]), SIZE)
    assert hit.all()
    assert depth[int(K.cy), int(K.cx)] == 4.0


def test_background_where_nothing_is_hit():
    # plane behind the camera
    scene = SyntheticScene((Plane((0, 0, 1), -3.0),), (0.1, 0.2, 0.3))
    img, depth, hit = render_view(scene, K, Se3Transform.identity(), SIZE)
    assert not hit.any() and not depth.any()
    assert np.allclose(img, [0.1, 0.2, 0.3])
    with pytest.raises(ValueError):
        render_motion(scene, K, [PoseVector(), PoseVector()], SIZE)


def test_rendering_is_deterministic():
    a = random_snippet(11)[1]
    b = random_snippet(11)[1]
    for fa, fb in zip(a.frames, b.frames):
        assert np.array_equal(fa, fb)
    assert np.array_equal(a.depth_center, b.depth_center)
    assert [p.as_array().tolist() for p in a.true_poses] == [p.as_array().tolist() for p in b.true_poses]


def test_depth_in_range(oracle_snippet):
    _, sn = oracle_snippet
    d = sn.depth_center[sn.depth_center > 0]
    assert d.size == sn.depth_center.size
    assert d.min() >= DEPTH_MIN and d.max() <= DEPTH_MAX


def test_render_motion_recovers_given_poses():
    poses = [PoseVector(t=[0.1, -0.05, 0.2], r=[0.01, 0.02, -0.01]), PoseVector(t=[-0.1, 0.0, -0.3], r=[0.0, -0.03, 0.0])]
    sn = render_motion(ridge_scene(distance=3.0), K, poses, SIZE)
    for got, want in zip(sn.true_poses, poses):
        assert np.allclose(got.as_array(), want.as_array(), atol=1e-12)


@pytest.mark.parametrize("k", [0, 1])
def test_warp_reproduces_center(oracle_snippet, k):
    _, sn = oracle_snippet
    src = sn.frames[0 if k == 0 else 2]
    recon, mask = warp_image(src, sn.depth_center, pose_to_transform(sn.true_poses[k]), sn.K)
    inner = mask.copy()
    inner[1:-1, 1:-1] &= mask[:-2, 1:-1] & mask[2:, 1:-1] & mask[1:-1, :-2] & mask[1:-1, 2:]
    inner[[0, -1]] = False
    inner[:, [0, -1]] = False
    assert inner.mean() > 0.5
    assert np.abs(recon - sn.frames[1])[inner].mean() < 1e-3


def test_multi_view_photometric_consistency(oracle_snippet):
    """Re-render the exact sub-pixel ray a center pixel maps to in the next frame."""
    scene, sn = oracle_snippet
    T = pose_to_transform(sn.true_poses[1])
    proj = reproject(sn.depth_center, T, sn.K)
    rng = np.random.default_rng(0)
    h, w = sn.depth_center.shape
    worst, checked = 0.0, 0
    while checked < 50:
        i, j = int(rng.integers(0, h)), int(rng.integers(0, w))
        if not proj.valid[i, j]:
            continue
        checked += 1
        u, v = float(proj.u[i, j]), float(proj.v[i, j])
        # a 1x1 camera whose only pixel looks along the ray through (u, v)
        K1 = CameraIntrinsics(sn.K.fx, sn.K.fy, sn.K.cx - u, sn.K.cy - v)
        img, _, hit = render_view(scene, K1, sn.cameras[2], (1, 1))
        assert hit.all()
        worst = max(worst, float(np.abs(img[0, 0] - sn.frames[1][i, j]).max()))
    assert worst < 1e-6


def test_texture_is_bounded():
    pts = np.random.default_rng(1).uniform(-50, 50, (1000, 3))
    for tid in range(10):
        v = texture_value(tid, 1.0, pts)
        assert v.min() >= 0.05 - 1e-12 and v.max() <= 0.95 + 1e-12


def test_perturb_pose_zero_and_determinism():
    u = PoseVector(t=[0.1, 0.2, 0.3], r=[0.01, 0.02, 0.03])
    z = perturb_pose(u, 0.0, 0.0, 5)
    assert np.array_equal(z.as_array(), u.as_array())
    a, b = perturb_pose(u, 0.1, 0.01, 42), perturb_pose(u, 0.1, 0.01, 42)
    assert np.array_equal(a.as_array(), b.as_array())
    with pytest.raises(ValueError):
        perturb_pose(u, -1.0, 0.0, 0)


def test_perturb_pose_statistics():
    u = PoseVector()
    t = np.array([perturb_pose(u, 0.1, 0.0, s).t for s in range(1000)])
    sd = t.std(axis=0, ddof=1)
    assert np.all(np.abs(sd - 0.1) < 0.015)


def test_scene_text_round_trip():
    scene = ridge_scene(distance=3.3, yaw=0.37, tilt=(0.2, -0.05), texture_id=17, scale=2.5, background=(0.1, 0.2, 0.3))
    assert parse_scene(format_scene(scene)) == scene


def test_scene_parser_comments_and_errors():
    s = parse_scene("# demo\nbackground 0 0 0\n\nplane 0 0 2 10 3 1.5  # wall\n")
    assert s.planes[0].normal == (0.0, 0.0, 1.0) and s.planes[0].offset == 5.0
    for bad in ("plane 0 0 1 5 3", "wall 1 2 3", "plane 0 0 0 5 1 1", "background 2 0 0\nplane 0 0 1 5 0 1", "", "plane a b c d e f"):
        with pytest.raises(SceneFormatError):
            parse_scene(bad)


@given(st.integers(0, 10_000))
def test_random_snippets_are_valid(seed):
    _, sn = random_snippet(seed, (32, 24))
    assert (sn.depth_center > 0).all()
    for p in sn.true_poses:
        assert 0.1 - 1e-12 <= np.linalg.norm(p.t) <= 0.5 + 1e-12
        assert np.linalg.norm(p.r) <= 0.05 + 1e-12
