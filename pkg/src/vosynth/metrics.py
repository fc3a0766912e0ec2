"""Trajectory and depth evaluation.

Trajectory error is the root mean square position error, optionally after a
least-squares scale fit of the estimate. Depth metrics follow the usual
monocular protocol: ground truth is capped, predictions are median scaled
and clamped, then ARD, SRD, RMSE, RMSE_log (natural log) and the three
ratio thresholds are averaged over valid pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Se3Transform, compose, invert


class EmptyEvaluationError(ValueError):
    """No pixel or pose survived the evaluation filters."""


@dataclass
class Trajectory:
    """Ordered camera-to-world poses, optionally time stamped."""

    poses: list
    timestamps: list | None = None

    def __post_init__(self):
        self.poses = list(self.poses)
        if not self.poses:
            raise ValueError("a trajectory needs at least one pose")
        for p in self.poses:
            if not isinstance(p, Se3Transform):
                raise TypeError(f"trajectory entries must be Se3Transform, got {type(p).__name__}")
        if self.timestamps is not None and len(self.timestamps) != len(self.poses):
            raise ValueError("timestamps and poses differ in length")

    def __len__(self):
        return len(self.poses)

    def positions(self) -> np.ndarray:
        return np.array([p.t for p in self.poses])


def _positions(traj) -> np.ndarray:
    if isinstance(traj, Trajectory):
        return traj.positions()
    return np.array([p.t for p in traj]).reshape(-1, 3)


def _aligned_errors(pe: np.ndarray, pr: np.ndarray, alignment: str) -> np.ndarray:
    if alignment == "scale_only":
        denom = float(np.sum(pe * pe))
        s = float(np.sum(pe * pr)) / denom if denom > 0 else 1.0
        pe = s * pe
    elif alignment != "none":
        raise ValueError(f"alignment must be 'none' or 'scale_only', got {alignment!r}")
    return np.linalg.norm(pe - pr, axis=1)


def ate(estimate, reference, alignment: str = "none"):
    """Absolute trajectory error; returns ``(ate, per_step_errors)``.

    ``scale_only`` multiplies estimated positions by the scalar that minimizes
    the squared position error before measuring.
    """
    pe, pr = _positions(estimate), _positions(reference)
    if len(pe) != len(pr):
        raise ValueError(f"trajectory lengths differ: {len(pe)} vs {len(pr)}")
    if len(pe) == 0:
        raise ValueError("trajectories are empty")
    err = _aligned_errors(pe, pr, alignment)
    return float(np.sqrt(np.mean(err**2))), err


@dataclass
class PoseSnippet:
    """Five consecutive frames starting at reference index ``start``.

    ``relative[k]`` maps camera coordinates of frame ``k+1`` into frame ``k``.
    """

    start: int
    relative: tuple = field(default_factory=tuple)

    def __post_init__(self):
        self.relative = tuple(self.relative)
        if len(self.relative) != 4:
            raise ValueError(f"a snippet holds 4 relative transforms, got {len(self.relative)}")
        if int(self.start) != self.start:
            raise ValueError("snippet start must be an integer index")
        self.start = int(self.start)

    def local_poses(self) -> list:
        """Poses of the five frames in the coordinates of the first one."""
        poses = [Se3Transform.identity()]
        for rel in self.relative:
            poses.append(compose(poses[-1], rel))
        return poses


def snippet_ate(snippets, reference) -> tuple:
    """Mean and (population) standard deviation of per-snippet, scale-aligned ATE."""
    ref = reference.poses if isinstance(reference, Trajectory) else list(reference)
    if not snippets:
        raise EmptyEvaluationError("no snippets to evaluate")
    values = []
    for sn in snippets:
        if sn.start < 0 or sn.start + 4 >= len(ref):
            raise IndexError(f"snippet starting at {sn.start} exceeds reference of length {len(ref)}")
        base = invert(ref[sn.start])
        local_ref = [compose(base, ref[sn.start + j]) for j in range(5)]
        value, _ = ate(sn.local_poses(), local_ref, "scale_only")
        values.append(value)
    v = np.array(values)
    return float(v.mean()), float(v.std())


@dataclass(frozen=True)
class DepthEvalConfig:
    cap: float = 80.0
    min: float = 1e-3
    median_scaling: bool = True

    def __post_init__(self):
        if not (np.isfinite(self.cap) and 0 < self.min < self.cap):
            raise ValueError(f"need 0 < min < cap, got min={self.min}, cap={self.cap}")


@dataclass
class DepthMetricsReport:
    ard: float
    srd: float
    rmse: float
    rmse_log: float
    a1: float
    a2: float
    a3: float
    count: int

    FIELDS = ("ard", "srd", "rmse", "rmse_log", "a1", "a2", "a3")

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in (*self.FIELDS, "count")}


def depth_metrics(pred, gt, cfg: DepthEvalConfig = DepthEvalConfig()) -> DepthMetricsReport:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} differs from ground truth {gt.shape}")
    valid = np.isfinite(gt) & (gt >= cfg.min) & (gt <= cfg.cap)
    if not valid.any():
        raise EmptyEvaluationError("no ground-truth pixel inside the evaluation range")
    g = gt[valid]
    p = pred[valid]
    if not np.all(np.isfinite(p)):
        raise ValueError("prediction has non-finite values at evaluated pixels")
    if cfg.median_scaling:
        mp = np.median(p)
        if not mp > 0:
            raise ValueError(f"median prediction must be positive for median scaling, got {mp}")
        p = p * (np.median(g) / mp)
    p = np.clip(p, cfg.min, cfg.cap)
    diff = p - g
    ratio = np.maximum(g / p, p / g)
    return DepthMetricsReport(
        ard=float(np.mean(np.abs(diff) / g)),
        srd=float(np.mean(diff**2 / g)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(p) - np.log(g)) ** 2))),
        a1=float(np.mean(ratio < 1.25)),
        a2=float(np.mean(ratio < 1.25**2)),
        a3=float(np.mean(ratio < 1.25**3)),
        count=int(valid.sum()),
    )
