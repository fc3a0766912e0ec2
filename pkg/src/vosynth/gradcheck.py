"""Finite-difference audit of the analytic pose gradients."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import PoseVector, wrap_angle
from .losses import SnippetProblem
from .oracle import perturb_pose, random_snippet


@dataclass
class GradcheckReport:
    trials: int
    max_rel_error: float
    worst_trial: int
    per_trial: list = field(default_factory=list)
    seconds: float = 0.0

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def relative_errors(analytic, numeric) -> np.ndarray:
    """Per-component ``|a - n| / max(|a|, |n|)``; components that are both zero score 0."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.abs(a), np.abs(n))
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.abs(a - n) / den
    return np.where(den > 0, r, 0.0)


def check_snippet(problem: SnippetProblem, depth, poses, step=1e-5):
    """Analytic and central-difference gradients at ``poses`` as two 12-vectors.

    Differences are taken on the smooth piece selected at ``poses`` (auto-mask,
    min selection, L1 signs and bilinear cells frozen), which is the function
    the analytic gradient differentiates.
    """
    ev = problem.evaluate(depth, poses)
    grads, _ = problem.gradients(ev, poses)
    frozen = ev.report.frozen
    x0 = np.concatenate([p.as_array() for p in poses])

    def f(x):
        ps = [PoseVector(t=v[:3], r=wrap_angle(v[3:])) for v in x.reshape(2, 6)]
        return problem.evaluate(depth, ps, frozen=frozen).report.total

    numeric = np.empty(12)
    for i in range(12):
        e = np.zeros(12)
        e[i] = step
        numeric[i] = (f(x0 + e) - f(x0 - e)) / (2.0 * step)
    return np.concatenate(grads), numeric


def run_gradcheck(seed=0, trials=100, step=1e-5, size=(128, 96), sigma_t=0.05, sigma_r=0.01) -> GradcheckReport:
    """Check gradients on ``trials`` random oracle snippets at perturbed poses."""
    if trials < 1:
        raise ValueError("need at least one trial")
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    rng = np.random.default_rng(seed)
    t0 = time.perf_counter()
    per_trial = []
    for _ in range(trials):
        scene_seed = int(rng.integers(0, 2**31))
        _, sn = random_snippet(scene_seed, size)
        poses = [perturb_pose(p, sigma_t, sigma_r, int(rng.integers(0, 2**31))) for p in sn.true_poses]
        problem = SnippetProblem(sn.frames, sn.K)
        analytic, numeric = check_snippet(problem, sn.depth_center, poses, step)
        per_trial.append(float(relative_errors(analytic, numeric).max()))
    worst = int(np.argmax(per_trial))
    return GradcheckReport(trials, per_trial[worst], worst, per_trial, time.perf_counter() - t0)
