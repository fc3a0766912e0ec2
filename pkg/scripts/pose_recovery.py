"""Pose-recovery benchmark on seeded oracle snippets.

Prints one line per snippet (translation error relative to |t|, worst
rotation error, wall time) and a success count at the end.

    python3 scripts/pose_recovery.py --trials 100 --first-seed 1000
"""

import argparse
import time

import numpy as np

from vosynth.optimizer import OptimizerConfig, estimate_pose
from vosynth.oracle import random_snippet


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--first-seed", type=int, default=1000)
    ap.add_argument("--pyramid-levels", type=int, default=1)
    ap.add_argument("--t-tol", type=float, default=0.02, help="relative translation tolerance")
    ap.add_argument("--r-tol", type=float, default=2e-3, help="rotation tolerance in radians")
    ap.add_argument("--time-limit", type=float, default=5.0)
    args = ap.parse_args()
    cfg = OptimizerConfig(pyramid_levels=args.pyramid_levels)
    good = 0
    times = []
    for seed in range(args.first_seed, args.first_seed + args.trials):
        _, sn = random_snippet(seed)
        t0 = time.perf_counter()
        res = estimate_pose(sn.frames, sn.depth_center, sn.K, cfg)
        dt = time.perf_counter() - t0
        times.append(dt)
        et = max(np.linalg.norm(e.t - t.t) / np.linalg.norm(t.t) for e, t in zip(res.poses, sn.true_poses))
        er = max(float(np.abs(e.r - t.r).max()) for e, t in zip(res.poses, sn.true_poses))
        ok = et < args.t_tol and er < args.r_tol and dt < args.time_limit
        good += ok
        print(f"seed {seed}  t_err {et:.4f}  r_err {er:.2e}  {dt:.2f} s  iters {res.iterations:3d}  {res.stop_reason:9s} {'ok' if ok else 'FAIL'}")
    print(f"{good}/{args.trials} recovered; mean {np.mean(times):.2f} s, max {np.max(times):.2f} s")


if __name__ == "__main__":
    main()
