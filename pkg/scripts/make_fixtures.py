"""Regenerate the golden files in fixtures/.

Run from the repository root: ``python3 scripts/make_fixtures.py``.
Output is deterministic; re-running must not change any file.
"""

from __future__ import annotations

import argparse
from pathlib import Path

import numpy as np

from vosynth import storage
from vosynth.geometry import CameraIntrinsics, PoseVector, Se3Transform, euler_to_rotation, pose_to_transform
from vosynth.metrics import Trajectory
from vosynth.oracle import Plane, SyntheticScene, render_motion, render_view, ridge_scene, write_scene

SIZE = (128, 96)


def warp_pair(out: Path):
    """Fronto-parallel plane at 5 m seen before and after a sideways move of exactly 2 px."""
    K = CameraIntrinsics.default_for(*SIZE)
    scene = SyntheticScene((Plane((0.0, 0.0, 1.0), 5.0, texture_id=7, scale=3.0),), (0.5, 0.5, 0.5))
    write_scene(out / "scene_plane.txt", scene)
    tx = 2.0 * 5.0 / K.fx
    target, depth, _ = render_view(scene, K, Se3Transform.identity(), SIZE)
    # the source camera sits at -tx, so target points map to source by adding +tx
    src, _, _ = render_view(scene, K, Se3Transform(np.eye(3), np.array([-tx, 0.0, 0.0])), SIZE)
    storage.write_image(out / "warp_src.ppm", src)
    storage.write_image(out / "warp_target.ppm", target)
    storage.write_depth(out / "warp_depth.pfm", depth)
    storage.write_pose_vectors(out / "warp_pose.txt", [PoseVector(t=[tx, 0.0, 0.0])])
    storage.write_intrinsics(out / "intrinsics.txt", K)


def snippet(out: Path):
    K = CameraIntrinsics.default_for(*SIZE)
    scene = ridge_scene(distance=3.0, yaw=0.45, tilt=(0.15, -0.1), texture_id=11, scale=4.0)
    write_scene(out / "scene_ridge.txt", scene)
    poses = [PoseVector(t=[-0.12, 0.03, -0.28], r=[0.01, -0.02, 0.005]), PoseVector(t=[0.1, 0.0, 0.3], r=[0.0, 0.02, 0.0])]
    sn = render_motion(scene, K, poses, SIZE)
    for name, img in zip(("prev", "center", "next"), sn.frames):
        storage.write_image(out / f"snippet_{name}.ppm", img)
    storage.write_depth(out / "snippet_depth.pfm", sn.depth_center)
    storage.write_pose_vectors(out / "snippet_poses.txt", sn.true_poses)


def trajectories(out: Path):
    ref = []
    for i in range(40):
        a = 2.0 * np.pi * i / 40
        ref.append(Se3Transform(euler_to_rotation([0.0, -a, 0.0]), np.array([4.0 * np.cos(a), 0.1 * np.sin(3 * a), 4.0 * np.sin(a)])))
    shift = np.array([0.3, 0.0, 0.4])
    storage.write_trajectory(out / "traj_ref.txt", Trajectory(ref))
    storage.write_trajectory(out / "traj_offset.txt", Trajectory([Se3Transform(p.R, p.t + shift) for p in ref]))
    storage.write_trajectory(out / "traj_scaled.txt", Trajectory([Se3Transform(p.R, 2.0 * p.t) for p in ref]))


def depth_sets(out: Path, seed=2024):
    """Ground-truth maps with holes and far pixels; predictions = gt times known noise."""
    rng = np.random.default_rng(seed)
    gt_dir, pred_dir = out / "depth_gt", out / "depth_pred"
    gt_dir.mkdir(exist_ok=True)
    pred_dir.mkdir(exist_ok=True)
    noise_rows = []
    for k in range(4):
        h, w = 24, 32
        gt = rng.uniform(1.0, 90.0, (h, w))
        gt[rng.uniform(size=(h, w)) < 0.2] = 0.0  # missing lidar returns
        noise = np.exp(rng.normal(0.0, 0.1, (h, w)))
        pred = np.where(gt > 0, gt * noise * (0.5 + k), rng.uniform(1.0, 50.0, (h, w)))
        storage.write_depth(gt_dir / f"img{k:02d}.pfm", gt)
        storage.write_depth(pred_dir / f"img{k:02d}.pfm", pred)
        noise_rows.append(noise)
    # one frame whose ground truth is entirely beyond the cap: skipped by the evaluator
    storage.write_depth(gt_dir / "img99.pfm", np.full((24, 32), 120.0))
    storage.write_depth(pred_dir / "img99.pfm", np.full((24, 32), 10.0))

    empty_gt, empty_pred = out / "depth_empty_gt", out / "depth_empty_pred"
    empty_gt.mkdir(exist_ok=True)
    empty_pred.mkdir(exist_ok=True)
    storage.write_depth(empty_gt / "img00.pfm", np.zeros((8, 8)))
    storage.write_depth(empty_pred / "img00.pfm", np.full((8, 8), 3.0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "fixtures"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    warp_pair(out)
    snippet(out)
    trajectories(out)
    depth_sets(out)
    (out / "optimizer.json").write_text('{"max_iters": 200, "scaling": [1, 1, 1, 5, 5, 5]}\n', encoding="ascii")
    (out / "broken.json").write_text("{max_iters: 200", encoding="ascii")
    print(f"fixtures written to {out}")


if __name__ == "__main__":
    main()
