"""Image and depth containers, bilinear sampling and inverse warping.

Images are ``float64`` arrays of shape ``(H, W, 3)`` with values in
``[0, 1]``. Depth maps are ``(H, W)`` arrays in meters where 0 marks a pixel
without depth. Validity masks are boolean ``(H, W)`` arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, PixelCoord, Se3Transform, reproject

DEPTH_MIN = 0.1
DEPTH_MAX = 100.0


def as_image(img, name="image") -> np.ndarray:
    """Validate and return an ``(H, W, 3)`` float64 image."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3:
        raise ValueError(f"{name} must have shape (H, W, 3), got {a.shape}")
    if a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} is empty")
    if not np.all((a >= 0.0) & (a <= 1.0)):
        raise ValueError(f"{name} values must lie in [0, 1]")
    return a


def as_depth(depth, name="depth") -> np.ndarray:
    """Validate and return an ``(H, W)`` float64 depth map (values > 0 or the sentinel 0)."""
    a = np.asarray(depth, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"{name} must have shape (H, W), got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError(f"{name} values must be finite and non-negative")
    return a


@dataclass
class InverseDepthMap:
    """Bounded inverse-depth parameterization with values strictly inside ``(0, 1)``.

    ``depth = 1 / (1/depth_max + d * (1/depth_min - 1/depth_max))``
    """

    data: np.ndarray
    depth_min: float = DEPTH_MIN
    depth_max: float = DEPTH_MAX

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"inverse depth must have shape (H, W), got {self.data.shape}")
        if not (0 < self.depth_min < self.depth_max):
            raise ValueError("need 0 < depth_min < depth_max")
        if not np.all((self.data > 0) & (self.data < 1)):
            raise ValueError("inverse depth values must lie strictly inside (0, 1)")

    @property
    def shape(self):
        return self.data.shape

    def to_depth(self) -> np.ndarray:
        lo, hi = 1.0 / self.depth_max, 1.0 / self.depth_min
        return 1.0 / (lo + self.data * (hi - lo))

    @classmethod
    def from_depth(cls, depth, depth_min=DEPTH_MIN, depth_max=DEPTH_MAX) -> "InverseDepthMap":
        depth = np.asarray(depth, dtype=np.float64)
        lo, hi = 1.0 / depth_max, 1.0 / depth_min
        d = (1.0 / depth - lo) / (hi - lo)
        eps = 1e-12
        return cls(np.clip(d, eps, 1.0 - eps), depth_min, depth_max)


def resolve_depth(depth) -> np.ndarray:
    """Accept a depth array or an :class:`InverseDepthMap`; return metric depth."""
    if isinstance(depth, InverseDepthMap):
        return depth.to_depth()
    return as_depth(depth)


@dataclass
class Samples:
    """Vectorized bilinear samples plus their spatial derivatives."""

    values: np.ndarray
    valid: np.ndarray
    du: np.ndarray
    dv: np.ndarray
    cells: tuple


def sample_image(img, u, v, valid=None, cells=None) -> Samples:
    """Bilinearly sample ``img`` (``(H, W)`` or ``(H, W, C)``) at coordinates ``u, v``.

    The base cell index is clamped to the image, so positions slightly outside
    the domain are linearly extrapolated from the border cell. Callers decide
    validity from the returned ``valid`` flags (inside ``[0, W-1] x [0, H-1]``).
    ``cells`` pins the base cell ``(x0, y0)``, turning the sampler into one
    smooth bilinear polynomial per pixel.
    """
    img = np.asarray(img, dtype=np.float64)
    h, w = img.shape[:2]
    if h < 2 or w < 2:
        raise ValueError("bilinear sampling needs an image of at least 2x2 pixels")
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    inside = np.isfinite(u) & np.isfinite(v)
    inside &= (u >= 0) & (u <= w - 1) & (v >= 0) & (v <= h - 1)
    if valid is not None:
        inside &= valid
    uc = np.where(np.isfinite(u), np.clip(u, -1.0, w), 0.0)
    vc = np.where(np.isfinite(v), np.clip(v, -1.0, h), 0.0)
    if cells is None:
        x0 = np.clip(np.floor(uc), 0, w - 2).astype(np.intp)
        y0 = np.clip(np.floor(vc), 0, h - 2).astype(np.intp)
    else:
        x0, y0 = cells
    a = uc - x0
    b = vc - y0
    flat = img.reshape(h * w, -1) if img.ndim == 3 else img.reshape(h * w)
    base = y0 * w + x0
    i00 = flat[base]
    i01 = flat[base + 1]
    i10 = flat[base + w]
    i11 = flat[base + w + 1]
    if img.ndim == 3:
        a = a[..., None]
        b = b[..., None]
    values = (1 - a) * (1 - b) * i00 + a * (1 - b) * i01 + (1 - a) * b * i10 + a * b * i11
    du = (1 - b) * (i01 - i00) + b * (i11 - i10)
    dv = (1 - a) * (i10 - i00) + a * (i11 - i01)
    return Samples(values, inside, du, dv, (x0, y0))


def bilinear_sample(img, p: PixelCoord):
    """Sample ``img`` at a continuous pixel position.

    Returns ``(value, valid)``; ``value`` is zero when ``p`` falls outside
    ``[0, W-1] x [0, H-1]``.
    """
    s = sample_image(img, np.array([p.u]), np.array([p.v]))
    value = s.values[0] if s.valid[0] else np.zeros_like(s.values[0])
    return value, bool(s.valid[0])


def image_gradients(img):
    """Forward differences along x and y; the last column/row is zero."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim < 2 or a.shape[0] < 2 or a.shape[1] < 2:
        raise ValueError(f"gradients need at least 2x2 pixels, got shape {a.shape}")
    gx = np.zeros_like(a)
    gy = np.zeros_like(a)
    gx[:, :-1] = a[:, 1:] - a[:, :-1]
    gy[:-1, :] = a[1:, :] - a[:-1, :]
    return gx, gy


def warp_image(src, depth_target, T: Se3Transform, K: CameraIntrinsics):
    """Reconstruct the target view by sampling ``src`` at reprojected positions.

    ``T`` maps target-frame points into the source frame. Returns the
    reconstruction (zero at invalid pixels) and the validity mask.
    """
    src = as_image(src, "source image")
    depth = resolve_depth(depth_target)
    if depth.shape != src.shape[:2]:
        raise ValueError(f"depth shape {depth.shape} does not match image shape {src.shape[:2]}")
    proj = reproject(depth, T, K)
    s = sample_image(src, proj.u, proj.v, proj.valid)
    recon = np.where(s.valid[..., None], s.values, 0.0)
    return recon, s.valid
