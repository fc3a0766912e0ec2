"""Acceptance suite: one test and one summary line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the pass/fail lines are
printed in the "acceptance criteria" section at the end of the run.
Thresholds are the contractual ones and are not to be relaxed.
"""

import math
import os
import struct
import time

import numpy as np
import pytest

import _fuzz
from conftest import record_criterion
from vosynth import storage
from vosynth.cli import main
from vosynth.geometry import CameraIntrinsics, PoseVector, Se3Transform, euler_to_rotation
from vosynth.gradcheck import run_gradcheck
from vosynth.imaging import warp_image
from vosynth.losses import reconstruction_loss, smoothness_loss, snippet_loss, ssim
from vosynth.metrics import DepthEvalConfig, Trajectory, ate, depth_metrics
from vosynth.optimizer import estimate_pose
from vosynth.oracle import perturb_pose, random_snippet


def test_criterion_1_gradient_fidelity():
    rep = run_gradcheck(seed=0, trials=100, step=1e-5, size=(128, 96))
    ok = rep.max_rel_error < 1e-4 and rep.seconds < 60.0
    record_criterion(1, ok, "gradient fidelity", f"100 scenes, max rel error {rep.max_rel_error:.3g} < 1e-4, {rep.seconds:.1f} s < 60 s")
    assert ok


def test_criterion_2_pose_recovery():
    good, worst_time, failures = 0, 0.0, []
    for i in range(100):
        _, sn = random_snippet(1000 + i)
        t0 = time.perf_counter()
        res = estimate_pose(sn.frames, sn.depth_center, sn.K)
        dt = time.perf_counter() - t0
        worst_time = max(worst_time, dt)
        ok = dt < 5.0
        for est, true in zip(res.poses, sn.true_poses):
            ok &= np.linalg.norm(est.t - true.t) / np.linalg.norm(true.t) < 0.02
            ok &= float(np.abs(est.r - true.r).max()) < 2e-3
        good += bool(ok)
        if not ok:
            failures.append(1000 + i)
    ok = good >= 95 and worst_time < 5.0
    record_criterion(2, ok, "pose recovery", f"{good}/100 within 2% / 2e-3 rad, slowest {worst_time:.2f} s < 5 s, failed seeds {failures}")
    assert ok


def test_criterion_3_identity_warp_exact():
    rng = np.random.default_rng(3)
    exact = True
    for k in range(20):
        h, w = rng.integers(3, 60, 2)
        src = rng.uniform(size=(h, w, 3))
        depth = rng.uniform(0.2, 90, (h, w))
        depth[rng.uniform(size=(h, w)) < 0.1] = 0.0
        recon, mask = warp_image(src, depth, Se3Transform.identity(), CameraIntrinsics.default_for(w, h))
        exact &= bool(np.array_equal(recon[mask], src[mask])) and bool(np.array_equal(mask, depth > 0))
    _, sn = random_snippet(3)
    recon, mask = warp_image(sn.frames[0], sn.depth_center, Se3Transform.identity(), sn.K)
    exact &= bool(mask.all()) and bool(np.array_equal(recon, sn.frames[0]))
    record_criterion(3, exact, "identity-warp exactness", "21 images, bit-exact on valid pixels")
    assert exact


def test_criterion_4_loss_closed_forms():
    rng = np.random.default_rng(4)
    worst_self = max(abs(ssim(x, x) - 1.0) for x in rng.uniform(size=(200, 3, 3)))
    a = rng.uniform(0, 0.9, (10, 12, 3))
    l1 = reconstruction_loss(a + 0.1, a, np.ones((10, 12), bool))
    # the offset is exact up to the rounding of a + 0.1 itself
    offset_err = abs(l1 - np.mean(np.abs((a + 0.1) - a)))
    smooth0 = smoothness_loss(np.full((10, 12), 4.2), a)
    _, sn = random_snippet(4)
    poses = [perturb_pose(p, 0.05, 0.01, 40 + i) for i, p in enumerate(sn.true_poses)]
    rep = snippet_loss(sn.frames, sn.depth_center, poses, sn.K)
    total_err = abs(rep.total - (0.15 * rep.recon + 0.85 * rep.ssim + 0.001 * rep.smooth))
    ok = worst_self < 1e-12 and offset_err == 0.0 and abs(l1 - 0.1) < 1e-15 and smooth0 == 0.0 and total_err < 1e-10
    record_criterion(
        4, ok, "loss closed forms",
        f"|ssim(x,x)-1| {worst_self:.1e}, L1 offset {l1!r}, smoothness {smooth0}, total residual {total_err:.1e}",
    )
    assert ok


def test_criterion_5_metric_closed_forms():
    gt = np.random.default_rng(5).uniform(1.0, 40.0, (30, 40))
    r = depth_metrics(2 * gt, gt, DepthEvalConfig(median_scaling=False))
    rs = depth_metrics(2 * gt, gt)
    ref = [Se3Transform(euler_to_rotation([0, -0.1 * i, 0]), [3 * math.cos(0.1 * i), 0.0, 3 * math.sin(0.1 * i)]) for i in range(50)]
    shifted = [Se3Transform(p.R, p.t + [0.3, 0.0, 0.4]) for p in ref]
    scaled = [Se3Transform(p.R, 2.0 * p.t) for p in ref]
    a_off = ate(Trajectory(shifted), Trajectory(ref), "none")[0]
    a_sc = ate(Trajectory(scaled), Trajectory(ref), "scale_only")[0]
    ok = (
        abs(r.ard - 1.0) < 1e-12
        and abs(r.rmse_log - math.log(2)) < 1e-12
        and (r.a1, r.a2, r.a3) == (0.0, 0.0, 0.0)
        and max(rs.ard, rs.srd, rs.rmse, rs.rmse_log) == 0.0
        and (rs.a1, rs.a2, rs.a3) == (1.0, 1.0, 1.0)
        and abs(a_off - 0.5) < 1e-12
        and a_sc < 1e-9
    )
    record_criterion(5, ok, "metric closed forms", f"ARD {r.ard!r}, RMSE_log-ln2 {r.rmse_log - math.log(2):.1e}, ATE offset {a_off!r}, scaled ATE {a_sc:.1e}")
    assert ok


def test_criterion_6_scale_invariance():
    worst_photo = 0.0
    for seed in range(5):
        _, sn = random_snippet(600 + seed)
        poses = [perturb_pose(p, 0.05, 0.01, seed * 2 + i) for i, p in enumerate(sn.true_poses)]
        base = snippet_loss(sn.frames, sn.depth_center, poses, sn.K)
        for s in (0.1, 0.5, 2.0, 7.3):
            scaled = [PoseVector(t=s * p.t, r=p.r) for p in poses]
            rep = snippet_loss(sn.frames, s * sn.depth_center, scaled, sn.K)
            worst_photo = max(worst_photo, abs(rep.recon - base.recon), abs(rep.ssim - base.ssim))
    rng = np.random.default_rng(6)
    gt = rng.uniform(1, 80, (40, 50))
    pred = gt * np.exp(rng.normal(0, 0.2, gt.shape))
    ref = depth_metrics(pred, gt).as_dict()
    worst_depth = max(abs(depth_metrics(s * pred, gt).as_dict()[k] - v) for s in (1e-3, 0.37, 4.0, 250.0) for k, v in ref.items())
    ok = worst_photo < 1e-10 and worst_depth < 1e-10
    record_criterion(6, ok, "scale-ambiguity invariance", f"photometric {worst_photo:.1e}, depth metrics {worst_depth:.1e}")
    assert ok


# -- criterion 7: independent scorer --------------------------------------------------------


def _read_pfm_plain(path):
    """Minimal PFM reader written against the file layout, independent of the storage module."""
    with open(path, "rb") as f:
        data = f.read()
    head, pos = [], 0
    while len(head) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos : pos + 1].isspace():
            pos += 1
        head.append(data[start:pos].decode("ascii"))
    pos += 1
    assert head[0] == "Pf"
    w, h, scale = int(head[1]), int(head[2]), float(head[3])
    vals = struct.unpack(("<" if scale < 0 else ">") + "f" * (w * h), data[pos : pos + 4 * w * h])
    rows = [list(vals[r * w : (r + 1) * w]) for r in range(h)]
    return rows[::-1]


def _median(xs):
    s = sorted(xs)
    n = len(s)
    return s[n // 2] if n % 2 else 0.5 * (s[n // 2 - 1] + s[n // 2])


def _score_plain(pred_rows, gt_rows, cap=80.0, lo=1e-3):
    pairs = [(p, g) for pr, gr in zip(pred_rows, gt_rows) for p, g in zip(pr, gr) if lo <= g <= cap]
    if not pairs:
        return None
    k = _median([g for _, g in pairs]) / _median([p for p, _ in pairs])
    n = len(pairs)
    acc = dict(ard=0.0, srd=0.0, sq=0.0, sqlog=0.0, a1=0, a2=0, a3=0)
    for p, g in pairs:
        p = min(max(p * k, lo), cap)
        acc["ard"] += abs(p - g) / g
        acc["srd"] += (p - g) ** 2 / g
        acc["sq"] += (p - g) ** 2
        acc["sqlog"] += (math.log(p) - math.log(g)) ** 2
        d = max(p / g, g / p)
        acc["a1"] += d < 1.25
        acc["a2"] += d < 1.25**2
        acc["a3"] += d < 1.25**3
    return {
        "ard": acc["ard"] / n, "srd": acc["srd"] / n, "rmse": math.sqrt(acc["sq"] / n), "rmse_log": math.sqrt(acc["sqlog"] / n),
        "a1": acc["a1"] / n, "a2": acc["a2"] / n, "a3": acc["a3"] / n,
    }


def test_criterion_7_protocol_fidelity(capsys, fixtures_dir):
    gt_dir, pred_dir = os.path.join(fixtures_dir, "depth_gt"), os.path.join(fixtures_dir, "depth_pred")
    per_image = []
    for name in sorted(os.listdir(gt_dir)):
        s = _score_plain(_read_pfm_plain(os.path.join(pred_dir, name)), _read_pfm_plain(os.path.join(gt_dir, name)))
        if s is not None:
            per_image.append(s)
    expected = {k: sum(s[k] for s in per_image) / len(per_image) for k in per_image[0]}
    capsys.readouterr()
    code = main(["eval-depth", "--pred", pred_dir, "--gt", gt_dir, "--cap", "80", "--median-scaling"])
    out = capsys.readouterr().out
    got = dict(line.split(" = ", 1) for line in out.strip().splitlines())
    worst = max(abs(float(got[k]) - v) for k, v in expected.items())
    ok = code == 0 and int(got["images"]) == len(per_image) and worst < 1e-9
    record_criterion(7, ok, "protocol fidelity", f"{len(per_image)} images, max deviation from brute-force scorer {worst:.1e} < 1e-9")
    assert ok


def test_criterion_8_format_robustness():
    counts, crashes = {}, 0
    for kind in sorted(_fuzz.PARSERS):
        accepted, rejected, bad = _fuzz.run(kind, 10_000, seed=8)
        counts[kind] = accepted + rejected + len(bad)
        crashes += len(bad)
    rng = np.random.default_rng(8)
    img = rng.uniform(size=(17, 23, 3))
    img_dev = float(np.abs(storage.parse_ppm(storage.format_ppm(img)) - img).max())
    depth = rng.uniform(0.1, 100, (17, 23)).astype(np.float32).astype(np.float64)
    depth_exact = bool(np.array_equal(storage.parse_pfm(storage.format_pfm(depth)), depth))
    poses = [Se3Transform(euler_to_rotation(rng.uniform(-3, 3, 3)), rng.normal(0, 30, 3)) for _ in range(100)]
    back = storage.parse_trajectory(storage.format_trajectory(Trajectory(poses))).poses
    traj_dev = max(max(np.abs(a.R - b.R).max(), np.abs(a.t - b.t).max()) for a, b in zip(poses, back))
    K = CameraIntrinsics(123.25, 120.5, 63.75, 47.5)
    ok = (
        crashes == 0
        and min(counts.values()) >= 10_000
        and img_dev <= 0.5 / 255
        and depth_exact
        and traj_dev < 1e-9
        and storage.parse_intrinsics(storage.format_intrinsics(K)) == K
    )
    record_criterion(
        8, ok, "format robustness",
        f"{sum(counts.values())} fuzz inputs over {len(counts)} parsers, {crashes} crashes; image dev {img_dev:.2e}, depth exact {depth_exact}, trajectory dev {traj_dev:.1e}",
    )
    assert ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
