"""Command line entry point: ``python -m vosynth <command>``.

Every command prints a ``key = value`` report (or JSON with ``--json``).
Exit codes: 0 success, 1 failed check, 2 usage or I/O error, 3 empty
evaluation. Paths written as ``@name`` resolve inside the fixture directory,
which defaults to the repository's ``fixtures/`` and can be moved with the
``VOSYNTH_FIXTURES`` environment variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import CameraIntrinsics, PoseVector, invert, pose_to_transform, transform_to_pose
from .gradcheck import run_gradcheck
from .imaging import warp_image
from .losses import EmptyMaskWarning, LossWeights, reconstruction_loss, snippet_loss
from .metrics import DepthEvalConfig, EmptyEvaluationError, PoseSnippet, ate, depth_metrics, snippet_ate
from .optimizer import OptimizerConfig, estimate_pose
from .oracle import read_scene, render_motion
from . import storage

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_EMPTY = 0, 1, 2, 3
FIXTURE_ENV = "VOSYNTH_FIXTURES"


class UsageError(Exception):
    pass


def fixture_dir() -> Path:
    env = os.environ.get(FIXTURE_ENV)
    if env:
        return Path(env)
    return Path(__file__).resolve().parents[2] / "fixtures"


def resolve(path: str) -> Path:
    if path.startswith("@"):
        return fixture_dir() / path[1:]
    return Path(path)


# -- report formatting ---------------------------------------------------------


def _plain(v):
    """Convert a report value into JSON-compatible Python types."""
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_plain(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return float(v)
    return v


def _text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, list):
        return " ".join(_text(x) for x in v)
    return str(v)


def format_report(report: dict, as_json=False) -> str:
    report = _plain(report)
    if as_json:
        return json.dumps(report, indent=2)
    lines = []

    def walk(prefix, d):
        for k, v in d.items():
            key = f"{prefix}{k}"
            if isinstance(v, dict):
                walk(key + ".", v)
            else:
                lines.append(f"{key} = {_text(v)}")

    walk("", report)
    return "\n".join(lines)


def _base(command) -> dict:
    return {"command": command, "version": __version__}


# -- argument helpers ------------------------------------------------------------


def _pose_arg(text: str) -> PoseVector:
    try:
        return storage.parse_pose_vector(text)
    except storage.StorageError as e:
        raise UsageError(f"bad pose {text!r}: {e}") from None


def _size_arg(text: str):
    parts = text.lower().split("x")
    try:
        w, h = (int(p) for p in parts)
    except ValueError:
        raise UsageError(f"size must look like WxH, got {text!r}") from None
    if w < 2 or h < 2:
        raise UsageError("size must be at least 2x2")
    return w, h


def _pose_dict(u: PoseVector) -> dict:
    return {"t": u.t.tolist(), "r": u.r.tolist()}


# -- commands --------------------------------------------------------------------


def cmd_warp(args) -> tuple:
    src = storage.read_image(resolve(args.src))
    depth = storage.read_depth(resolve(args.depth))
    K = storage.read_intrinsics(resolve(args.intrinsics))
    T = pose_to_transform(_pose_arg(args.pose))
    recon, mask = warp_image(src, depth, T, K)
    out = resolve(args.out)
    mask_out = resolve(args.mask_out) if args.mask_out else out.with_name(out.stem + ".mask.ppm")
    storage.write_image(out, recon)
    storage.write_image(mask_out, np.repeat(mask[..., None].astype(np.float64), 3, axis=2))
    report = _base("warp")
    report.update(output=str(out), mask=str(mask_out), valid_pixels=int(mask.sum()))
    if args.target:
        target = storage.read_image(resolve(args.target))
        if target.shape != recon.shape:
            raise UsageError(f"target shape {target.shape} differs from reconstruction {recon.shape}")
        if not mask.any():
            raise EmptyEvaluationError("no pixel reprojects inside the source image")
        report["loss"] = reconstruction_loss(recon, target, mask)
    return report, EXIT_OK


def cmd_loss(args) -> tuple:
    frames = [storage.read_image(resolve(p)) for p in args.snippet]
    depth = storage.read_depth(resolve(args.depth))
    poses = storage.read_pose_vectors(resolve(args.poses))
    if len(poses) != 2:
        raise UsageError(f"pose file must hold 2 poses (previous, next), got {len(poses)}")
    K = storage.read_intrinsics(resolve(args.intrinsics))
    weights = LossWeights(args.l1, args.ssim, args.smooth)
    with warnings.catch_warnings():
        warnings.simplefilter("error", EmptyMaskWarning)
        try:
            rep = snippet_loss(frames, depth, poses, K, weights)
        except EmptyMaskWarning as e:
            raise EmptyEvaluationError(str(e)) from None
    report = _base("loss")
    report["weights"] = dataclasses.asdict(weights)
    report.update(
        recon=rep.recon,
        ssim=rep.ssim,
        smooth=rep.smooth,
        total=rep.total,
        valid_pixels=int(rep.valid.sum()),
        automask_fraction=float(rep.automask.sum() / max(int(rep.valid.sum()), 1)),
    )
    return report, EXIT_OK


def _load_config(path) -> OptimizerConfig:
    if path is None:
        return OptimizerConfig()
    try:
        data = json.loads(resolve(path).read_text(encoding="utf-8"))
    except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise UsageError(f"cannot read optimizer config {path}: {e}") from None
    if not isinstance(data, dict):
        raise UsageError("optimizer config must be a JSON object")
    known = {f.name for f in dataclasses.fields(OptimizerConfig)}
    unknown = set(data) - known
    if unknown:
        raise UsageError(f"unknown optimizer settings: {', '.join(sorted(unknown))}")
    try:
        return OptimizerConfig(**data)
    except (TypeError, ValueError) as e:
        raise UsageError(f"invalid optimizer config: {e}") from None


def cmd_estimate_pose(args) -> tuple:
    cfg = _load_config(args.config)
    frames = [storage.read_image(resolve(p)) for p in args.snippet]
    depth = storage.read_depth(resolve(args.depth))
    K = storage.read_intrinsics(resolve(args.intrinsics))
    res = estimate_pose(frames, depth, K, cfg)
    if args.out:
        storage.write_pose_vectors(resolve(args.out), res.poses)
    report = _base("estimate-pose")
    report["config"] = dataclasses.asdict(cfg)
    report["pose_prev"] = _pose_dict(res.poses[0])
    report["pose_next"] = _pose_dict(res.poses[1])
    report.update(
        total=res.report.total,
        iterations=res.iterations,
        converged=res.converged,
        stop_reason=res.stop_reason,
    )
    return report, EXIT_OK


def cmd_eval_traj(args) -> tuple:
    est = storage.read_trajectory(resolve(args.est))
    ref = storage.read_trajectory(resolve(args.ref))
    report = _base("eval-traj")
    if args.mode == "full":
        align = args.align or "none"
        value, errors = ate(est, ref, "scale_only" if align == "scale" else "none")
        report.update(mode="full", align=align, poses=len(ref), ate=value, max_error=float(errors.max()))
        return report, EXIT_OK
    if args.align == "none":
        raise UsageError("snippet mode always aligns scale; drop --align none")
    if len(est) != len(ref):
        raise UsageError(f"trajectories differ in length: {len(est)} vs {len(ref)}")
    if len(ref) < 5:
        raise EmptyEvaluationError("snippet mode needs at least 5 poses")
    snippets = []
    for s in range(0, len(ref) - 4, args.stride):
        rel = [est.poses[s + k] for k in range(5)]
        snippets.append(PoseSnippet(s, [invert(rel[k]) @ rel[k + 1] for k in range(4)]))
    mean, std = snippet_ate(snippets, ref)
    report.update(mode="snippet", align="scale", snippets=len(snippets), ate_mean=mean, ate_std=std)
    return report, EXIT_OK


def _depth_pairs(pred_dir: Path, gt_dir: Path):
    if not pred_dir.is_dir() or not gt_dir.is_dir():
        raise UsageError("--pred and --gt must be directories")
    names = sorted(p.name for p in gt_dir.glob("*.pfm"))
    if not names:
        raise EmptyEvaluationError(f"no .pfm files in {gt_dir}")
    missing = [n for n in names if not (pred_dir / n).is_file()]
    if missing:
        raise UsageError(f"predictions missing for: {', '.join(missing[:5])}")
    return names


def evaluate_depth_dirs(pred_dir, gt_dir, cfg: DepthEvalConfig):
    """Mean of per-image metrics over every ground-truth ``.pfm`` with a matching prediction.

    Images without any ground truth inside the evaluation range are skipped.
    Returns ``(means, evaluated, skipped, pixels)``.
    """
    names = _depth_pairs(Path(pred_dir), Path(gt_dir))
    reports, skipped = [], []
    for n in names:
        gt = storage.read_depth(Path(gt_dir) / n)
        pred = storage.read_depth(Path(pred_dir) / n)
        try:
            reports.append(depth_metrics(pred, gt, cfg))
        except EmptyEvaluationError:
            skipped.append(n)
    if not reports:
        raise EmptyEvaluationError("no image has ground truth inside the evaluation range")
    means = {k: float(np.mean([getattr(r, k) for r in reports])) for k in reports[0].FIELDS}
    return means, len(reports), skipped, int(sum(r.count for r in reports))


def cmd_eval_depth(args) -> tuple:
    try:
        cfg = DepthEvalConfig(cap=args.cap, min=args.min, median_scaling=args.median_scaling)
    except ValueError as e:
        raise UsageError(str(e)) from None
    means, n, skipped, pixels = evaluate_depth_dirs(resolve(args.pred), resolve(args.gt), cfg)
    report = _base("eval-depth")
    report["config"] = dataclasses.asdict(cfg)
    report.update(images=n, skipped=len(skipped), pixels=pixels)
    report.update(means)
    return report, EXIT_OK


def cmd_render(args) -> tuple:
    scene = read_scene(resolve(args.scene))
    w, h = _size_arg(args.size)
    K = storage.read_intrinsics(resolve(args.intrinsics)) if args.intrinsics else CameraIntrinsics.default_for(w, h)
    u_next = _pose_arg(args.motion)
    u_prev = transform_to_pose(invert(pose_to_transform(u_next)))
    sn = render_motion(scene, K, [u_prev, u_next], (w, h))
    out = resolve(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in zip(("prev", "center", "next"), sn.frames):
        storage.write_image(out / f"{name}.ppm", img)
    storage.write_depth(out / "depth.pfm", sn.depth_center)
    storage.write_pose_vectors(out / "poses.txt", sn.true_poses)
    storage.write_intrinsics(out / "intrinsics.txt", K)
    report = _base("render")
    report.update(
        out=str(out),
        size=[w, h],
        pose_prev=_pose_dict(sn.true_poses[0]),
        pose_next=_pose_dict(sn.true_poses[1]),
        depth_min=float(sn.depth_center[sn.depth_center > 0].min()) if np.any(sn.depth_center > 0) else 0.0,
        depth_max=float(sn.depth_center.max()),
    )
    return report, EXIT_OK


def cmd_gradcheck(args) -> tuple:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    if not args.fd_step > 0 or not args.tol > 0:
        raise UsageError("--fd-step and --tol must be positive")
    res = run_gradcheck(args.seed, args.trials, args.fd_step, _size_arg(args.size))
    ok = res.passed(args.tol)
    report = _base("gradcheck")
    report.update(
        seed=args.seed,
        trials=res.trials,
        fd_step=args.fd_step,
        tol=args.tol,
        max_rel_error=res.max_rel_error,
        worst_trial=res.worst_trial,
        passed=ok,
    )
    return report, EXIT_OK if ok else EXIT_CHECK


# -- parser ------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print the report as JSON")
    common.add_argument("--timing", action="store_true", help="add wall-clock seconds to the report")

    p = argparse.ArgumentParser(prog="vosynth", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("warp", parents=[common], help="inverse-warp a source image into the target view")
    s.add_argument("--src", required=True)
    s.add_argument("--depth", required=True, help="target depth map (PFM)")
    s.add_argument("--pose", required=True, help='"tx ty tz rx ry rz", target to source')
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--out", required=True, help="reconstruction (PPM)")
    s.add_argument("--mask-out", help="validity mask (PPM); default <out>.mask.ppm")
    s.add_argument("--target", help="image to compare the reconstruction against")
    s.set_defaults(func=cmd_warp)

    s = sub.add_parser("loss", parents=[common], help="evaluate the snippet loss")
    s.add_argument("--snippet", nargs=3, required=True, metavar=("PREV", "CENTER", "NEXT"))
    s.add_argument("--depth", required=True)
    s.add_argument("--poses", required=True, help="pose file with 2 lines: previous, next")
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--l1", type=float, default=LossWeights.recon)
    s.add_argument("--ssim", type=float, default=LossWeights.ssim)
    s.add_argument("--smooth", type=float, default=LossWeights.smooth)
    s.set_defaults(func=cmd_loss)

    s = sub.add_parser("estimate-pose", parents=[common], help="estimate both snippet poses from zero")
    s.add_argument("--snippet", nargs=3, required=True, metavar=("PREV", "CENTER", "NEXT"))
    s.add_argument("--depth", required=True)
    s.add_argument("--intrinsics", required=True)
    s.add_argument("--config", help="JSON object of optimizer settings")
    s.add_argument("--out", help="write the estimated poses here")
    s.set_defaults(func=cmd_estimate_pose)

    s = sub.add_parser("eval-traj", parents=[common], help="absolute trajectory error")
    s.add_argument("--est", required=True)
    s.add_argument("--ref", required=True)
    s.add_argument("--mode", choices=("full", "snippet"), default="full")
    s.add_argument("--align", choices=("none", "scale"), help="default: none (full), scale (snippet)")
    s.add_argument("--stride", type=int, default=1, help="snippet start spacing")
    s.set_defaults(func=cmd_eval_traj)

    s = sub.add_parser("eval-depth", parents=[common], help="depth metrics over matching PFM files")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--cap", type=float, default=80.0)
    s.add_argument("--min", type=float, default=1e-3)
    s.add_argument("--median-scaling", action=argparse.BooleanOptionalAction, default=True)
    s.set_defaults(func=cmd_eval_depth)

    s = sub.add_parser("render", parents=[common], help="render a synthetic snippet")
    s.add_argument("--scene", required=True)
    s.add_argument("--motion", required=True, help='"tx ty tz rx ry rz" of u_{t,t+1}')
    s.add_argument("--size", default="128x96")
    s.add_argument("--intrinsics", help="default: 90 degree horizontal field of view")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_render)

    s = sub.add_parser("gradcheck", parents=[common], help="compare analytic and numeric pose gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--trials", type=int, default=100)
    s.add_argument("--fd-step", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.add_argument("--size", default="128x96")
    s.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else EXIT_OK
    if getattr(args, "stride", 1) < 1:
        print("error: --stride must be at least 1", file=sys.stderr)
        return EXIT_USAGE
    t0 = time.perf_counter()
    try:
        report, code = args.func(args)
    except EmptyEvaluationError as e:
        print(f"error: empty evaluation: {e}", file=sys.stderr)
        return EXIT_EMPTY
    except (UsageError, OSError, ValueError, TypeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    if args.timing:
        report["seconds"] = time.perf_counter() - t0
    print(format_report(report, args.json))
    return code


if __name__ == "__main__":
    sys.exit(main())
