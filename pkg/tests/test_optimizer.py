import os

import numpy as np
import pytest

from vosynth import storage
from vosynth.geometry import CameraIntrinsics, PoseVector, invert, pose_to_transform, transform_to_pose
from vosynth.imaging import InverseDepthMap
from vosynth.losses import SnippetProblem
from vosynth.optimizer import (
    NonFiniteLossError,
    OptimizerConfig,
    _minimize,
    _pyramid,
    estimate_pose,
    refine_depth,
)
from vosynth.oracle import Plane, SyntheticScene, render_motion, ridge_scene

SIZE = (128, 96)
K = CameraIntrinsics.default_for(*SIZE)
TRUE_NEXT = PoseVector(t=[0.1, 0.0, 0.3], r=[0.0, 0.02, 0.0])


def pose_errors(est: PoseVector, true: PoseVector):
    return np.linalg.norm(est.t - true.t) / np.linalg.norm(true.t), float(np.abs(est.r - true.r).max())


@pytest.fixture(scope="module")
def plane_snippet():
    scene = SyntheticScene((Plane((0, 0, 1), 5.0, texture_id=4, scale=3.0),))
    u = PoseVector(t=[0.15, 0.0, 0.1])
    return render_motion(scene, K, [transform_to_pose(invert(pose_to_transform(u))), u], SIZE)


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(max_iters=0)
    with pytest.raises(ValueError):
        OptimizerConfig(backtrack=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(tol=0.0)
    with pytest.raises(ValueError):
        OptimizerConfig(scaling=(1, 1, 1))
    with pytest.raises(ValueError):
        OptimizerConfig(method="newton")
    assert OptimizerConfig(scaling=[1, 2, 3, 4, 5, 6]).scaling == (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)


def test_identical_frames_stay_at_zero(oracle_snippet):
    _, sn = oracle_snippet
    f = sn.frames[1]
    res = estimate_pose([f, f, f], sn.depth_center, sn.K)
    assert res.converged
    assert np.linalg.norm(np.concatenate([p.as_array() for p in res.poses])) < 1e-6
    assert res.report.recon == 0.0 and res.report.ssim == 0.0


def test_recovers_fixture_motion(fixtures_dir):
    frames = [storage.read_image(os.path.join(fixtures_dir, f"snippet_{n}.ppm")) for n in ("prev", "center", "next")]
    depth = storage.read_depth(os.path.join(fixtures_dir, "snippet_depth.pfm"))
    Kf = storage.read_intrinsics(os.path.join(fixtures_dir, "intrinsics.txt"))
    truth = storage.read_pose_vectors(os.path.join(fixtures_dir, "snippet_poses.txt"))
    assert np.allclose(truth[1].as_array(), TRUE_NEXT.as_array(), atol=1e-12)
    res = estimate_pose(frames, depth, Kf)
    for est, true in zip(res.poses, truth):
        dt, dr = pose_errors(est, true)
        assert dt < 0.02 and dr < 2e-3


def test_recovers_symmetric_motion():
    prev = transform_to_pose(invert(pose_to_transform(TRUE_NEXT)))
    sn = render_motion(ridge_scene(distance=3.0, yaw=0.4, tilt=(0.1, -0.15), texture_id=21, scale=4.0), K, [prev, TRUE_NEXT], SIZE)
    res = estimate_pose(sn.frames, sn.depth_center, K)
    assert res.converged
    for est, true in zip(res.poses, sn.true_poses):
        dt, dr = pose_errors(est, true)
        assert dt < 0.02 and dr < 2e-3


def test_trace_monotone_and_deterministic(oracle_snippet):
    _, sn = oracle_snippet
    cfg = OptimizerConfig(max_iters=15)
    a = estimate_pose(sn.frames, sn.depth_center, sn.K, cfg)
    b = estimate_pose(sn.frames, sn.depth_center, sn.K, cfg)
    assert a.trace == b.trace
    assert all(y <= x for x, y in zip(a.trace, a.trace[1:]))
    assert a.trace[-1] == a.report.total


def test_plain_descent_is_monotone(oracle_snippet):
    _, sn = oracle_snippet
    res = estimate_pose(sn.frames, sn.depth_center, sn.K, OptimizerConfig(max_iters=10, method="gd"))
    assert all(y <= x for x, y in zip(res.trace, res.trace[1:]))
    assert res.trace[-1] < res.trace[0]


def test_minimize_on_quadratic():
    A = np.diag([1.0, 10.0, 100.0])

    class State:
        def __init__(self, x):
            self.x = x

        def grad(self):
            return A @ self.x

    res = _minimize(lambda x: (0.5 * x @ A @ x, State(x)), np.ones(3), OptimizerConfig(tol=1e-10, ftol=0.0))
    assert res.converged and res.stop_reason in ("gradient", "stalled")
    assert np.linalg.norm(res.x) < 1e-9
    assert all(y <= x for x, y in zip(res.trace, res.trace[1:]))


def test_minimize_warm_start_with_exact_curvature():
    A = np.diag([1.0, 10.0, 100.0])

    class State:
        def __init__(self, x):
            self.x = x

        def grad(self):
            return A @ self.x

    x0 = np.array([0.01, 0.01, 0.001])
    res = _minimize(lambda x: (0.5 * x @ A @ x, State(x)), x0, OptimizerConfig(tol=1e-12, ftol=0.0), H0=np.linalg.inv(A))
    # the first quasi-Newton step lands on the minimizer
    assert res.trace[1] < 1e-25
    assert res.inverse_hessian is not None


def test_non_finite_loss_is_reported(oracle_snippet, monkeypatch):
    _, sn = oracle_snippet
    monkeypatch.setattr(SnippetProblem, "_smoothness", lambda self, d: float("nan"))
    with pytest.raises(NonFiniteLossError, match="smooth"):
        estimate_pose(sn.frames, sn.depth_center, sn.K)


def test_rejects_depth_without_positive_values(oracle_snippet):
    _, sn = oracle_snippet
    with pytest.raises(ValueError):
        estimate_pose(sn.frames, np.zeros_like(sn.depth_center), sn.K)


def test_pyramid_levels(oracle_snippet):
    _, sn = oracle_snippet
    levels = _pyramid(sn.frames, sn.depth_center, sn.K, 3)
    assert [lv[0][0].shape[:2] for lv in levels] == [(96, 128), (48, 64), (24, 32)]
    k1 = levels[1][2]
    assert (k1.fx, k1.cx) == (sn.K.fx / 2, (sn.K.cx - 0.5) / 2)
    # stops before a side drops below 16 pixels
    assert len(_pyramid(sn.frames, sn.depth_center, sn.K, 10)) == 3


def test_pyramid_config_recovers_motion(oracle_snippet):
    _, sn = oracle_snippet
    res = estimate_pose(sn.frames, sn.depth_center, sn.K, OptimizerConfig(pyramid_levels=2))
    for est, true in zip(res.poses, sn.true_poses):
        dt, dr = pose_errors(est, true)
        assert dt < 0.05 and dr < 5e-3


def test_refine_depth_from_truth_does_not_increase_loss(plane_snippet):
    sn = plane_snippet
    init = InverseDepthMap.from_depth(sn.depth_center)
    problem = SnippetProblem(sn.frames, K)
    before = problem.loss(init.to_depth(), sn.true_poses).total
    out = refine_depth(sn.frames, init, sn.true_poses, K, OptimizerConfig(max_iters=20))
    assert problem.loss(out.to_depth(), sn.true_poses).total <= before


@pytest.mark.parametrize("grid", [(4, 3), (1, 1)])
def test_refine_depth_recovers_plane(plane_snippet, grid):
    sn = plane_snippet
    init = InverseDepthMap.from_depth(np.full(sn.depth_center.shape, 7.0))
    out = refine_depth(sn.frames, init, sn.true_poses, K, grid=grid)
    assert abs(np.median(out.to_depth()) - 5.0) < 0.05 * 5.0


def test_refine_depth_validation(plane_snippet):
    sn = plane_snippet
    init = InverseDepthMap.from_depth(sn.depth_center)
    with pytest.raises(ValueError):
        refine_depth(sn.frames, init, sn.true_poses, K, grid=(64, 32))
    with pytest.raises(TypeError):
        refine_depth(sn.frames, sn.depth_center, sn.true_poses, K)
