"""Photometric training losses and their analytic gradients.

The snippet objective combines an L1 reconstruction term, a 3x3 SSIM term
and an edge-aware depth smoothness term::

    total = w.recon * recon + w.ssim * ssim + w.smooth * smooth

Reconstruction and SSIM terms go through per-pixel minimum reprojection over
the two source frames, with auto-masking against the unwarped sources.
Auto-masked pixels keep their (pose-independent) unwarped error, so they
contribute nothing to the pose gradient.

SSIM uses the standard definition with covariance and variances (population
statistics over a uniform 3x3 window). The per-pixel SSIM term is
``(1 - SSIM) / 2`` by default (``ssim_half=False`` drops the halving).
Reductions are means by default; ``reduction="sum"`` sums instead.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .geometry import (
    CameraIntrinsics,
    PoseVector,
    Se3Transform,
    euler_jacobian,
    pose_to_transform,
    reproject,
)
from .imaging import as_image, image_gradients, resolve_depth, sample_image


class EmptyMaskWarning(RuntimeWarning):
    """A loss was requested over a mask without any valid pixel."""


@dataclass(frozen=True)
class LossWeights:
    recon: float = 0.15
    ssim: float = 0.85
    smooth: float = 0.001

    def __post_init__(self):
        for name in ("recon", "ssim", "smooth"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be a non-negative number, got {v}")


@dataclass(frozen=True)
class SsimConstants:
    c1: float = 0.01**2
    c2: float = 0.03**2

    def __post_init__(self):
        if not (self.c1 > 0 and self.c2 > 0):
            raise ValueError("SSIM constants must be positive")


@dataclass(frozen=True)
class LossOptions:
    ssim_half: bool = True
    reduction: str = "mean"
    normalize_depth: bool = True

    def __post_init__(self):
        if self.reduction not in ("mean", "sum"):
            raise ValueError(f"reduction must be 'mean' or 'sum', got {self.reduction!r}")


@dataclass
class SnippetLossReport:
    recon: float
    ssim: float
    smooth: float
    total: float
    per_pixel_min_error: np.ndarray
    automask: np.ndarray
    valid: np.ndarray = field(repr=False)
    frozen: "FrozenSelection" = field(repr=False, default=None)
    warped_valid: list = field(repr=False, default_factory=list)


def _check_same_shape(a, b, what):
    if a.shape != b.shape:
        raise ValueError(f"{what}: shape mismatch {a.shape} vs {b.shape}")


def _reduce(total, count, reduction):
    if reduction == "sum":
        return float(total)
    return float(total / count) if count else 0.0


def reconstruction_loss(recon, target, mask, reduction="mean") -> float:
    """Mean absolute difference over valid pixels and channels.

    Returns 0 and emits :class:`EmptyMaskWarning` when the mask is empty.
    """
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    _check_same_shape(recon, target, "reconstruction_loss")
    if mask.shape != recon.shape[:2]:
        raise ValueError(f"reconstruction_loss mask: shape mismatch {mask.shape} vs {recon.shape[:2]}")
    diff = np.abs(recon - target)[mask]
    if diff.size == 0:
        warnings.warn("reconstruction loss over an empty mask", EmptyMaskWarning, stacklevel=2)
        return 0.0
    return _reduce(diff.sum(), diff.size, reduction)


def ssim(x, y, c: SsimConstants = SsimConstants()) -> float:
    """SSIM of two equally shaped patches with population statistics."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    _check_same_shape(x, y, "ssim")
    mx, my = x.mean(), y.mean()
    vx = ((x - mx) ** 2).mean()
    vy = ((y - my) ** 2).mean()
    cxy = ((x - mx) * (y - my)).mean()
    num = (2 * mx * my + c.c1) * (2 * cxy + c.c2)
    den = (mx * mx + my * my + c.c1) * (vx + vy + c.c2)
    return float(num / den)


def _box3(x):
    """3x3 box sum with zero padding, same shape as ``x`` (first two axes spatial)."""
    rows = x.copy()
    rows[1:] += x[:-1]
    rows[:-1] += x[1:]
    out = rows.copy()
    out[:, 1:] += rows[:, :-1]
    out[:, :-1] += rows[:, 1:]
    return out


def _interior(h, w):
    m = np.zeros((h, w), dtype=bool)
    m[1:-1, 1:-1] = True
    return m


def _erode3(mask):
    """Pixels whose full 3x3 neighborhood is inside the image and valid."""
    h, w = mask.shape
    out = np.zeros_like(mask)
    if h < 3 or w < 3:
        return out
    acc = np.ones((h - 2, w - 2), dtype=bool)
    for di in range(3):
        for dj in range(3):
            acc &= mask[di : di + h - 2, dj : dj + w - 2]
    out[1:-1, 1:-1] = acc
    return out


@dataclass
class _SsimParts:
    S: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    mx: np.ndarray
    my: np.ndarray


def _ssim_map(x, y, c: SsimConstants) -> _SsimParts:
    """Per-pixel SSIM on 3x3 windows; values on the one-pixel border are meaningless."""
    stats = _box3(np.stack([x, y, x * x, y * y, x * y], axis=-1)) / 9.0
    mx, my, sxx, syy, sxy = (stats[..., k] for k in range(5))
    vx = sxx - mx * mx
    vy = syy - my * my
    cxy = sxy - mx * my
    A = 2 * mx * my + c.c1
    B = 2 * cxy + c.c2
    C = mx * mx + my * my + c.c1
    D = vx + vy + c.c2
    return _SsimParts(A * B / (C * D), A, B, C, D, mx, my)


def ssim_loss(recon, target, mask, c: SsimConstants = SsimConstants(), half=True, reduction="mean") -> float:
    """Mean of ``(1 - SSIM) / 2`` over interior pixels whose whole 3x3 patch is valid."""
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    _check_same_shape(recon, target, "ssim_loss")
    h, w = recon.shape[:2]
    if h < 3 or w < 3:
        raise ValueError(f"SSIM loss needs images of at least 3x3 pixels, got {w}x{h}")
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (h, w):
        raise ValueError(f"ssim_loss mask: shape mismatch {mask.shape} vs {(h, w)}")
    pvalid = _erode3(mask)
    term = (1.0 - _ssim_map(recon, target, c).S) * (0.5 if half else 1.0)
    vals = term[pvalid]
    if vals.size == 0:
        warnings.warn("SSIM loss over an empty mask", EmptyMaskWarning, stacklevel=2)
        return 0.0
    return _reduce(vals.sum(), vals.size, reduction)


def _smoothness_weights(img):
    gx, gy = image_gradients(img)
    if gx.ndim == 3:
        gx = np.abs(gx).mean(axis=2)
        gy = np.abs(gy).mean(axis=2)
    return np.exp(-np.abs(gx)), np.exp(-np.abs(gy))


def smoothness_loss(depth, img, normalize=True, reduction="mean") -> float:
    """Edge-aware smoothness: ``|dx D| exp(-|dx I|) + |dy D| exp(-|dy I|)``, averaged.

    With ``normalize`` the depth is divided by its mean first, making the loss
    invariant to the global depth scale. Image gradient magnitudes are
    averaged over channels.
    """
    d = resolve_depth(depth)
    img = np.asarray(img, dtype=np.float64)
    if img.shape[:2] != d.shape:
        raise ValueError(f"smoothness_loss: depth {d.shape} vs image {img.shape[:2]}")
    if normalize:
        d = d / d.mean()
    dx, dy = image_gradients(d)
    wx, wy = _smoothness_weights(img)
    per_pixel = np.abs(dx) * wx + np.abs(dy) * wy
    return _reduce(per_pixel.sum(), per_pixel.size, reduction)


def _smoothness_depth_grad(depth, img, normalize=True, reduction="mean"):
    """Gradient of :func:`smoothness_loss` with respect to metric depth."""
    d = np.asarray(depth, dtype=np.float64)
    m = d.mean() if normalize else 1.0
    dn = d / m
    dx, dy = image_gradients(dn)
    wx, wy = _smoothness_weights(img)
    scale = 1.0 if reduction == "sum" else 1.0 / d.size
    ex = np.sign(dx) * wx * scale
    ey = np.sign(dy) * wy * scale
    ex[:, -1] = 0.0
    ey[-1, :] = 0.0
    g = -ex - ey
    g[:, 1:] += ex[:, :-1]
    g[1:, :] += ey[:-1, :]
    if normalize:
        g = (g - np.sum(g * dn) / d.size) / m
    return g


def min_reprojection_automask(errors_per_source, unwarped_errors):
    """Per-pixel minimum over warped errors and the auto-mask.

    The mask is true where the best warped error is strictly below the best
    unwarped error. Invalid warped pixels should carry ``inf``.
    """
    if len(errors_per_source) == 0:
        raise ValueError("min reprojection needs at least one source")
    warped = np.stack([np.asarray(e, dtype=np.float64) for e in errors_per_source])
    if len(unwarped_errors) == 0:
        raise ValueError("auto-masking needs at least one unwarped error buffer")
    unwarped = np.stack([np.asarray(e, dtype=np.float64) for e in unwarped_errors])
    if warped.shape[1:] != unwarped.shape[1:]:
        raise ValueError("error buffers must all have the same shape")
    min_warped = warped.min(axis=0)
    return min_warped, min_warped < unwarped.min(axis=0)


# -- snippet objective -------------------------------------------------------


def _as_transform(p) -> Se3Transform:
    if isinstance(p, Se3Transform):
        return p
    if isinstance(p, PoseVector):
        return pose_to_transform(p)
    return pose_to_transform(PoseVector.from_array(p))


@dataclass
class _Comparison:
    l1: np.ndarray
    term: np.ndarray
    sign: np.ndarray
    parts: _SsimParts


def _compare(recon, target, c, half, sign=None):
    diff = recon - target
    if sign is None:
        sign = np.sign(diff)
    parts = _ssim_map(recon, target, c)
    term = ((1.0 - parts.S) * (0.5 if half else 1.0)).mean(axis=2)
    return _Comparison((sign * diff).mean(axis=2), term, sign, parts)


@dataclass
class FrozenSelection:
    """Every piecewise choice of the objective at one evaluation point.

    ``selection`` holds the per-pixel candidate (-1 excluded, ``0..S-1``
    warped source, ``S..2S-1`` unwarped source); ``signs`` the L1 residual
    signs and ``cells`` the bilinear base cells of each warped source.
    Evaluating with a frozen selection gives the smooth piece of the loss
    that contains the evaluation point, which is what the analytic gradient
    differentiates.
    """

    selection: np.ndarray
    signs: list
    cells: list


@dataclass
class _Warped:
    transform: Se3Transform
    proj: object
    samples: object
    recon: np.ndarray
    patch_valid: np.ndarray
    cmp: _Comparison


def _warp_source(src, target, depth, T, K, c, half, sign=None, cells=None):
    proj = reproject(depth, T, K)
    s = sample_image(src, proj.u, proj.v, proj.valid, cells)
    recon = s.values
    return _Warped(T, proj, s, recon, _erode3(s.valid), _compare(recon, target, c, half, sign))


def _pose_euler(p):
    if isinstance(p, PoseVector):
        return p.r
    if isinstance(p, Se3Transform):
        raise TypeError("pose gradients need pose vectors, not transforms")
    return PoseVector.from_array(p).r


def _coord_jacobians(proj, K, depth, T: Se3Transform, r):
    """Derivatives of source pixel coordinates w.r.t. ``(t, r)`` and target depth.

    Returns ``(Ju, Jv)`` each ``(7, H, W)``: six pose components then depth.
    """
    q = proj.q
    qz = np.where(proj.valid, q[2], 1.0)
    d = np.where(depth > 0, depth, 1.0)
    du_dq = (K.fx / qz, -K.fx * q[0] / qz**2)
    dv_dq = (K.fy / qz, -K.fy * q[1] / qz**2)
    dq = [np.eye(3)[j][:, None, None] / d for j in range(3)]
    dR = euler_jacobian(r)
    dq += [np.einsum("ij,jhw->ihw", dR[k], proj.ray) for k in range(3)]
    dq.append(-T.t[:, None, None] / d**2)
    Ju = np.stack([du_dq[0] * g[0] + du_dq[1] * g[2] for g in dq])
    Jv = np.stack([dv_dq[0] * g[1] + dv_dq[1] * g[2] for g in dq])
    return Ju, Jv


@dataclass
class _Evaluation:
    report: SnippetLossReport
    warped: list
    count: float
    depth: np.ndarray


class SnippetProblem:
    """Snippet objective with the pose-independent parts computed once.

    ``snippet`` is ``(I_{t-1}, I_t, I_{t+1})``. Evaluations take the center
    depth (metric array or :class:`InverseDepthMap`) and the two relative
    poses ``(u_{t,t-1}, u_{t,t+1})``.

    ``active`` restricts the objective to a subset of the two sources
    (0 = previous, 1 = next). Poses of inactive sources are ignored and get
    zero gradient.
    """

    def __init__(
        self,
        snippet,
        K: CameraIntrinsics,
        weights=LossWeights(),
        consts=SsimConstants(),
        options=LossOptions(),
        active=(0, 1),
    ):
        if len(snippet) != 3:
            raise ValueError(f"a snippet has 3 frames, got {len(snippet)}")
        frames = [as_image(f, f"frame {i}") for i, f in enumerate(snippet)]
        for f in frames[1:]:
            _check_same_shape(f, frames[0], "snippet frames")
        h, w = frames[0].shape[:2]
        if h < 3 or w < 3:
            raise ValueError("snippet frames must be at least 3x3 pixels")
        self.frames = frames
        self.K = K
        self.weights = weights
        self.consts = consts
        self.options = options
        self.target = frames[1]
        self.active = tuple(sorted(set(int(a) for a in active)))
        if not self.active or any(a not in (0, 1) for a in self.active):
            raise ValueError(f"active sources must be a non-empty subset of (0, 1), got {active}")
        self.sources = [(frames[0], frames[2])[a] for a in self.active]
        half = options.ssim_half
        unwarped = [_compare(src, self.target, consts, half) for src in self.sources]
        self._u_l1 = [u.l1 for u in unwarped]
        self._u_term = [u.term for u in unwarped]
        self._interior = _interior(h, w)
        self._smooth_cache = (None, None)
        self._warp_cache = {}

    @property
    def shape(self):
        return self.target.shape[:2]

    def _depth(self, depth):
        d = resolve_depth(depth)
        if d.shape != self.shape:
            raise ValueError(f"depth shape {d.shape} does not match frames {self.shape}")
        return d

    def _smoothness(self, d):
        key, val = self._smooth_cache
        if key is not d:
            val = smoothness_loss(d, self.target, self.options.normalize_depth, self.options.reduction)
            self._smooth_cache = (d, val)
        return val

    def _warp(self, k, d, T, frozen):
        # one-entry memo per source: finite differencing moves one pose at a time
        key = (T.R.tobytes(), T.t.tobytes())
        hit = self._warp_cache.get(k)
        if hit is not None and hit[0] is d and hit[1] is frozen and hit[2] == key:
            return hit[3]
        c, half = self.consts, self.options.ssim_half
        if frozen is None:
            wp = _warp_source(self.sources[k], self.target, d, T, self.K, c, half)
        else:
            wp = _warp_source(self.sources[k], self.target, d, T, self.K, c, half, frozen.signs[k], frozen.cells[k])
        self._warp_cache[k] = (d, frozen, key, wp)
        return wp

    def evaluate(self, depth, poses, frozen=None, ties_to_warped=False) -> _Evaluation:
        """Evaluate the objective.

        ``frozen`` replays every piecewise choice of an earlier evaluation.
        ``ties_to_warped`` sends exact warped/unwarped ties to the warped
        candidate, which keeps a descent direction when all poses are zero.
        """
        if len(poses) != 2:
            raise ValueError(f"a snippet needs 2 poses, got {len(poses)}")
        d = self._depth(depth)
        transforms = [_as_transform(poses[a]) for a in self.active]
        w = self.weights
        ns = len(self.sources)
        warped = [self._warp(k, d, T, frozen) for k, T in enumerate(transforms)]

        l1 = np.stack([wp.cmp.l1 for wp in warped] + self._u_l1)
        term = np.stack([wp.cmp.term for wp in warped] + self._u_term)
        err = w.recon * l1 + w.ssim * term

        if frozen is None:
            w_err = np.where(np.stack([wp.patch_valid for wp in warped]), err[:ns], np.inf)
            u_err = np.where(self._interior, err[ns:], np.inf)
            min_w, automask = min_reprojection_automask(list(w_err), list(u_err))
            if ties_to_warped:
                automask = min_w <= u_err.min(axis=0)
            domain = np.isfinite(min_w)
            automask &= domain
            selection = np.where(automask, np.argmin(w_err, axis=0), ns + np.argmin(u_err, axis=0))
            selection = np.where(domain, selection, -1)
            frozen = FrozenSelection(selection, [wp.cmp.sign for wp in warped], [wp.samples.cells for wp in warped])
        else:
            selection = np.asarray(frozen.selection)
            automask = (selection >= 0) & (selection < ns)
            domain = selection >= 0

        idx = np.where(domain, selection, 0)[None]
        sel_l1 = np.take_along_axis(l1, idx, axis=0)[0]
        sel_term = np.take_along_axis(term, idx, axis=0)[0]
        count = int(domain.sum())
        if count == 0:
            warnings.warn("snippet has no pixel with a valid reprojection", EmptyMaskWarning, stacklevel=3)
        recon_v = _reduce(sel_l1[domain].sum(), count, self.options.reduction)
        ssim_v = _reduce(sel_term[domain].sum(), count, self.options.reduction)
        smooth_v = self._smoothness(d)
        total = w.recon * recon_v + w.ssim * ssim_v + w.smooth * smooth_v
        per_pixel = np.where(domain, np.take_along_axis(err, idx, axis=0)[0], np.nan)
        report = SnippetLossReport(
            recon=recon_v,
            ssim=ssim_v,
            smooth=smooth_v,
            total=float(total),
            per_pixel_min_error=per_pixel,
            automask=automask,
            valid=domain,
            frozen=frozen,
            warped_valid=[wp.samples.valid for wp in warped],
        )
        norm = 1.0 if self.options.reduction == "sum" else float(count)
        return _Evaluation(report, warped, norm, d)

    def loss(self, depth, poses, frozen=None) -> SnippetLossReport:
        return self.evaluate(depth, poses, frozen).report

    def _pixel_grads(self, ev: _Evaluation):
        """Loss gradient w.r.t. each source's sampled coordinates ``(u, v)``."""
        w = self.weights
        half = 0.5 if self.options.ssim_half else 1.0
        out = []
        for s, wp in enumerate(ev.warped):
            chosen = (ev.report.frozen.selection == s).astype(np.float64)
            if ev.count == 0 or not chosen.any():
                out.append((np.zeros(chosen.shape), np.zeros(chosen.shape)))
                continue
            G = (w.recon / ev.count / 3.0) * chosen[..., None] * wp.cmp.sign
            p = wp.cmp.parts
            Wp = ((-half * w.ssim / ev.count / 3.0) * chosen)[..., None]
            nine_cd = 9.0 * p.C * p.D
            alpha = 2 * p.my * (p.B - p.A) / nine_cd - 2 * p.S * p.mx * (1.0 / p.C - 1.0 / p.D) / 9.0
            beta = 2 * p.A / nine_cd
            gamma = 2 * p.S / (9.0 * p.D)
            sums = _box3(np.concatenate([Wp * alpha, Wp * beta, Wp * gamma], axis=2))
            G += sums[..., 0:3] + self.target * sums[..., 3:6] - wp.recon * sums[..., 6:9]
            out.append((np.sum(G * wp.samples.du, axis=2), np.sum(G * wp.samples.dv, axis=2)))
        return out

    def gradients(self, ev: _Evaluation, poses, with_depth=False):
        """Pose gradients (two 6-vectors) and, optionally, the metric-depth gradient."""
        grads = [np.zeros(6), np.zeros(6)]
        depth_grad = np.zeros_like(ev.depth) if with_depth else None
        for (au, av), wp, a in zip(self._pixel_grads(ev), ev.warped, self.active):
            Ju, Jv = _coord_jacobians(wp.proj, self.K, ev.depth, wp.transform, _pose_euler(poses[a]))
            contrib = au[None] * Ju + av[None] * Jv
            grads[a] = contrib[:6].reshape(6, -1).sum(axis=1)
            if with_depth:
                depth_grad += contrib[6]
        if with_depth:
            depth_grad += self.weights.smooth * _smoothness_depth_grad(
                ev.depth, self.target, self.options.normalize_depth, self.options.reduction
            )
        return grads, depth_grad

    def loss_and_gradients(self, depth, poses, frozen=None, ties_to_warped=False, with_depth=False):
        ev = self.evaluate(depth, poses, frozen, ties_to_warped)
        grads, depth_grad = self.gradients(ev, poses, with_depth)
        if with_depth:
            return ev.report, grads, depth_grad
        return ev.report, grads


def snippet_loss(
    snippet,
    depth_center,
    poses,
    K: CameraIntrinsics,
    weights: LossWeights = LossWeights(),
    consts: SsimConstants = SsimConstants(),
    options: LossOptions = LossOptions(),
    frozen=None,
) -> SnippetLossReport:
    """Total loss of a 3-frame snippet ``(I_{t-1}, I_t, I_{t+1})``.

    ``depth_center`` is a metric depth map or an :class:`InverseDepthMap` for
    the center frame; ``poses`` are ``(u_{t,t-1}, u_{t,t+1})`` as pose vectors
    or transforms mapping center-frame points into each source frame.
    Passing ``frozen`` (a previous report's ``frozen``) evaluates the smooth
    piece of the objective selected at that earlier point.
    """
    return SnippetProblem(snippet, K, weights, consts, options).loss(depth_center, poses, frozen)


def grad_snippet_loss_pose(
    snippet,
    depth_center,
    poses,
    K: CameraIntrinsics,
    weights: LossWeights = LossWeights(),
    consts: SsimConstants = SsimConstants(),
    options: LossOptions = LossOptions(),
    frozen=None,
):
    """Analytic gradient of the snippet total w.r.t. both pose vectors.

    Auto-mask, min-reprojection choice, validity, L1 residual signs and
    sampling cells are held fixed at the evaluation point (or taken from
    ``frozen``). Returns two arrays ordered ``(tx, ty, tz, rx, ry, rz)``.
    """
    problem = SnippetProblem(snippet, K, weights, consts, options)
    _, grads = problem.loss_and_gradients(depth_center, poses, frozen)
    return grads[0], grads[1]
