"""Direct minimization of the snippet loss over poses and a coarse depth grid.

Every accepted step satisfies an Armijo decrease on the true snippet loss,
so loss traces are monotone. Gradients use the frozen-selection surrogate at
the current iterate; the selection is refreshed at every outer iteration.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraIntrinsics, PoseVector, wrap_angle
from .imaging import InverseDepthMap, resolve_depth
from .losses import LossOptions, LossWeights, SnippetLossReport, SnippetProblem, SsimConstants


class NonFiniteLossError(ValueError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings for the line-search descent.

    ``scaling`` multiplies pose components before optimization (per meter for
    translation, per radian for rotation). ``method`` is ``"bfgs"`` (quasi-Newton
    direction from gradient history) or ``"gd"`` (plain steepest descent).
    """

    max_iters: int = 200
    initial_step: float = 1.0
    tol: float = 1e-7
    backtrack: float = 0.5
    scaling: tuple = (1.0, 1.0, 1.0, 5.0, 5.0, 5.0)
    method: str = "bfgs"
    armijo: float = 1e-4
    min_step: float = 1e-10
    max_step_norm: float = 0.25
    pyramid_levels: int = 1
    ftol: float = 1e-4
    patience: int = 5

    def __post_init__(self):
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be an integer >= 1, got {self.max_iters}")
        if not (self.initial_step > 0 and self.tol > 0 and self.min_step > 0 and self.max_step_norm > 0):
            raise ValueError("step sizes and tolerances must be positive")
        if not 0 < self.backtrack < 1:
            raise ValueError(f"backtrack factor must lie in (0, 1), got {self.backtrack}")
        if not 0 < self.armijo < 1:
            raise ValueError("armijo constant must lie in (0, 1)")
        sc = np.asarray(self.scaling, dtype=np.float64)
        if sc.shape != (6,) or np.any(sc <= 0):
            raise ValueError("scaling needs 6 positive entries")
        if not self.ftol >= 0 or int(self.patience) != self.patience or self.patience < 1:
            raise ValueError("ftol must be >= 0 and patience an integer >= 1")
        if int(self.pyramid_levels) != self.pyramid_levels or self.pyramid_levels < 1:
            raise ValueError(f"pyramid_levels must be an integer >= 1, got {self.pyramid_levels}")
        if self.method not in ("bfgs", "gd"):
            raise ValueError(f"method must be 'bfgs' or 'gd', got {self.method!r}")
        object.__setattr__(self, "scaling", tuple(float(x) for x in sc))


@dataclass
class EstimationResult:
    poses: list
    report: SnippetLossReport
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)
    stop_reason: str = ""


@dataclass
class _Minimum:
    x: np.ndarray
    state: object
    iterations: int
    converged: bool
    trace: list
    stop_reason: str
    inverse_hessian: np.ndarray = None


def _minimize(evaluate, x0, config: OptimizerConfig, history=None, H0=None) -> _Minimum:
    """Monotone descent with backtracking.

    ``evaluate(x)`` returns ``(f, state)`` and ``state.grad()`` the gradient
    at that point, computed lazily so rejected trial points stay cheap.
    ``H0`` optionally seeds the BFGS inverse-Hessian estimate.
    """
    x = np.asarray(x0, dtype=np.float64).copy()
    f, state = evaluate(x)
    trace = [f]
    g = state.grad()
    H = None if H0 is None else np.array(H0, dtype=np.float64)
    step0 = config.initial_step
    reason = "max_iters"
    it = 0
    for it in range(1, config.max_iters + 1):
        gnorm = np.linalg.norm(g)
        if gnorm < config.tol:
            reason = "gradient"
            it -= 1
            break
        if config.method == "bfgs" and H is not None:
            d = -H @ g
            if g @ d >= 0:
                H = None
                d = -g * step0
        else:
            d = -g * step0
        dnorm = np.linalg.norm(d)
        alpha = min(1.0, config.max_step_norm / dnorm) if dnorm > 0 else 1.0
        slope = g @ d
        accepted = False
        while alpha * dnorm >= config.min_step:
            x_new = x + alpha * d
            f_new, state_new = evaluate(x_new)
            if np.isfinite(f_new) and f_new <= f + config.armijo * alpha * slope:
                accepted = True
                break
            alpha *= config.backtrack
        if not accepted:
            reason = "stalled"
            it -= 1
            break
        g_new = state_new.grad()
        s = x_new - x
        y = g_new - g
        if config.method == "bfgs":
            sy = s @ y
            if sy > 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
                if H is None:
                    H = np.eye(len(x)) * (sy / (y @ y))
                rho = 1.0 / sy
                V = np.eye(len(x)) - rho * np.outer(s, y)
                H = V @ H @ V.T + rho * np.outer(s, s)
        else:
            # let plain descent grow its step when the full step was taken
            step0 = step0 * alpha * 2.0 if alpha < 1.0 else step0 * 2.0
        x, f, g, state = x_new, f_new, g_new, state_new
        trace.append(f)
        if history is not None:
            history.append(x.copy())
        k = config.patience
        if len(trace) > k and trace[-k - 1] - f <= config.ftol * abs(trace[-k - 1]):
            reason = "flat"
            break
    converged = reason in ("gradient", "stalled", "flat")
    return _Minimum(x, state, it, converged, trace, reason, H)


class _LazyGrad:
    def __init__(self, fn):
        self._fn = fn
        self._g = None
        self.payload = None

    def grad(self):
        if self._g is None:
            self._g = self._fn()
        return self._g


def _check_finite(report: SnippetLossReport):
    for name in ("recon", "ssim", "smooth", "total"):
        v = getattr(report, name)
        if not np.isfinite(v):
            raise NonFiniteLossError(f"loss component {name!r} is not finite ({v}) at initialization")


def _poses_from(x, scaling):
    u = (x / scaling).reshape(2, 6)
    return [PoseVector(t=v[:3], r=wrap_angle(v[3:])) for v in u]


def estimate_pose(
    snippet,
    depth_center,
    K: CameraIntrinsics,
    config: OptimizerConfig = OptimizerConfig(),
    weights: LossWeights = LossWeights(),
    consts: SsimConstants = SsimConstants(),
    options: LossOptions = LossOptions(),
) -> EstimationResult:
    """Estimate ``(u_{t,t-1}, u_{t,t+1})`` from zero by minimizing the snippet loss."""
    depth = resolve_depth(depth_center)
    if not np.any(depth > 0):
        raise ValueError("center depth has no positive value")
    scaling = np.tile(np.asarray(config.scaling), 2)
    levels = _pyramid(list(snippet), depth, K, config.pyramid_levels)

    full = SnippetProblem(levels[0][0], K, weights, consts, options)
    objective = _pose_objective(full, depth, scaling)
    x0 = np.zeros(12)
    f0, st0 = objective(x0)
    _check_finite(st0.payload[1])

    # Under the min over sources a well-fit source hides the other one, whose
    # pose then sits on a flat plateau. Each pose is therefore first fitted
    # against its own source alone, then both are refined on the full loss.
    x = x0
    iterations = 0
    # curvature learned by each single-source stage seeds its block of the joint run
    H_joint = np.eye(12)
    learned = [False, False]
    for active in ((0,), (1,)):
        for frames, d, Kl in reversed(levels[1:] if len(levels) > 1 else levels):
            problem = SnippetProblem(frames, Kl, weights, consts, options, active=active)
            res = _minimize(_pose_objective(problem, d, scaling), x, config)
            x = res.x
            iterations += res.iterations
        k = active[0]
        if res.inverse_hessian is not None:
            block = slice(6 * k, 6 * k + 6)
            H_joint[block, block] = res.inverse_hessian[block, block]
            learned[k] = True
    trace = []
    H0 = H_joint if all(learned) else None
    if np.any(x != x0):
        f1, _ = objective(x)
        if f1 <= f0:
            trace = [f0]
        else:
            x, H0 = x0, None
    res = _minimize(objective, x, config, H0=H0)
    poses, report = res.state.payload
    return EstimationResult(
        poses, report, iterations + res.iterations, res.converged, trace + res.trace, res.stop_reason
    )


def _pose_objective(problem: SnippetProblem, depth, scaling):
    def evaluate(x):
        poses = _poses_from(x, scaling)
        ev = problem.evaluate(depth, poses, ties_to_warped=True)

        def grad():
            grads, _ = problem.gradients(ev, poses)
            return np.concatenate(grads) / scaling

        st = _LazyGrad(grad)
        st.payload = (poses, ev.report)
        return ev.report.total, st

    return evaluate


def _half(img):
    h, w = img.shape[:2]
    a = img[: h - h % 2, : w - w % 2]
    return 0.25 * (a[0::2, 0::2] + a[1::2, 0::2] + a[0::2, 1::2] + a[1::2, 1::2])


def _pyramid(frames, depth, K: CameraIntrinsics, n_levels):
    """Coarse-to-fine copies of the snippet; level 0 is the input itself.

    Depth is averaged only over pixels that have depth, and a coarse pixel
    whose block has any hole gets none. Levels stop before an image side
    would drop under 16 pixels.
    """
    levels = [(frames, depth, K)]
    for _ in range(n_levels - 1):
        f, d, k = levels[-1]
        h, w = d.shape
        if h // 2 < 16 or w // 2 < 16:
            break
        holes = _half((d <= 0).astype(np.float64)) > 0
        dc = np.where(holes, 0.0, _half(d))
        kc = CameraIntrinsics(k.fx / 2, k.fy / 2, (k.cx - 0.5) / 2, (k.cy - 0.5) / 2)
        levels.append(([_half(np.asarray(im, dtype=np.float64)) for im in f], dc, kc))
    return levels


def _upsample_matrix(n_out, n_grid):
    """Linear interpolation weights ``(n_out, n_grid)`` with grid nodes at both ends."""
    if n_grid == 1:
        return np.ones((n_out, 1))
    pos = np.arange(n_out) * (n_grid - 1) / max(n_out - 1, 1)
    i0 = np.clip(np.floor(pos).astype(int), 0, n_grid - 2)
    a = pos - i0
    M = np.zeros((n_out, n_grid))
    M[np.arange(n_out), i0] = 1 - a
    M[np.arange(n_out), i0 + 1] += a
    return M


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def refine_depth(
    snippet,
    inv_depth_init: InverseDepthMap,
    poses,
    K: CameraIntrinsics,
    config: OptimizerConfig = OptimizerConfig(),
    grid=(4, 3),
    weights: LossWeights = LossWeights(),
    consts: SsimConstants = SsimConstants(),
    options: LossOptions = LossOptions(),
) -> InverseDepthMap:
    """Refine the center inverse depth with poses held fixed.

    The refinement is a smooth offset in logit space, ``d = sigmoid(logit(d0) + up(Z))``,
    where ``Z`` is a ``gh x gw`` control grid bilinearly upsampled to full
    resolution and initialized at zero, so the starting map is reproduced exactly.
    """
    gw, gh = (int(g) for g in grid)
    if gw < 1 or gh < 1 or gw * gh > 1024:
        raise ValueError(f"grid must be at least 1x1 with at most 1024 nodes, got {gw}x{gh}")
    if not isinstance(inv_depth_init, InverseDepthMap):
        raise TypeError("refine_depth needs an InverseDepthMap")
    problem = SnippetProblem(snippet, K, weights, consts, options)
    h, w = problem.shape
    if inv_depth_init.shape != (h, w):
        raise ValueError(f"inverse depth shape {inv_depth_init.shape} does not match frames {(h, w)}")
    lo, hi = 1.0 / inv_depth_init.depth_max, 1.0 / inv_depth_init.depth_min
    base = np.log(inv_depth_init.data) - np.log1p(-inv_depth_init.data)
    Uy = _upsample_matrix(h, gh)
    Ux = _upsample_matrix(w, gw)
    eps = 1e-12

    def decode(x):
        d = np.clip(_sigmoid(base + Uy @ x.reshape(gh, gw) @ Ux.T), eps, 1 - eps)
        return InverseDepthMap(d, inv_depth_init.depth_min, inv_depth_init.depth_max)

    def evaluate(x):
        inv = decode(x)
        depth = inv.to_depth()
        ev = problem.evaluate(depth, poses)

        def grad():
            _, g_depth = problem.gradients(ev, poses, with_depth=True)
            g_logit = g_depth * (-(hi - lo) * depth**2) * inv.data * (1 - inv.data)
            return (Uy.T @ g_logit @ Ux).reshape(-1)

        st = _LazyGrad(grad)
        st.payload = inv
        return ev.report.total, st

    x0 = np.zeros(gw * gh)
    f0, _ = evaluate(x0)
    if not np.isfinite(f0):
        raise NonFiniteLossError(f"snippet loss is not finite ({f0}) at initialization")
    if f0 <= 0:
        return decode(x0)
    # photometric losses near an optimum are tiny; working on f / f0 keeps the
    # first steps (taken before any curvature estimate exists) a useful size

    def relative(x):
        f, st = evaluate(x)
        inner = st.grad
        st.grad = lambda: inner() / f0
        return f / f0, st

    res = _minimize(relative, x0, config)
    return res.state.payload
