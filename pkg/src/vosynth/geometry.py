"""Rigid-body motion and pinhole reprojection.

Conventions used throughout the package:

* Euler angles ``r = (rx, ry, rz)`` are rotations about the camera x, y and z
  axes, composed as ``R = Rz(rz) @ Ry(ry) @ Rx(rx)`` acting on column vectors.
* A relative pose ``T_{t,n}`` maps points expressed in the target (center)
  camera frame into the source camera frame ``n``. Warping the source image
  onto the target grid consumes exactly this transform.
* Pixel coordinates are ``(u, v) = (column, row)`` with the origin at the
  center of the top-left pixel.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_PROJECTED_DEPTH = 1e-6


class BehindCameraError(ValueError):
    """Raised when a point lands at or behind the source camera plane."""


def _finite_vec3(x, name):
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    if a.shape != (3,):
        raise ValueError(f"{name} must have 3 components, got {a.shape}")
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} must be finite, got {a}")
    return a


def wrap_angle(a):
    """Wrap angles into ``(-pi, pi]``; angles already in range come back unchanged."""
    a = np.asarray(a, dtype=np.float64)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return np.where((a > -np.pi) & (a <= np.pi), a, w)


@dataclass(frozen=True)
class PoseVector:
    """6-DoF ego-motion: translation ``t`` in meters, Euler angles ``r`` in radians."""

    t: np.ndarray = field(default_factory=lambda: np.zeros(3))
    r: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        t = _finite_vec3(self.t, "translation")
        r = _finite_vec3(self.r, "rotation")
        if np.any(r <= -np.pi) or np.any(r > np.pi):
            raise ValueError(f"rotation components must lie in (-pi, pi], got {r}")
        t.flags.writeable = False
        r.flags.writeable = False
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "r", r)

    @classmethod
    def from_array(cls, x) -> "PoseVector":
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.shape != (6,):
            raise ValueError(f"pose vector needs 6 values, got {x.shape}")
        return cls(t=x[:3], r=x[3:])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.t, self.r])

    def __repr__(self):
        return f"PoseVector(t={self.t.tolist()}, r={self.r.tolist()})"


@dataclass(frozen=True)
class Se3Transform:
    """Rigid transform ``x -> R @ x + t``."""

    R: np.ndarray = field(default_factory=lambda: np.eye(3))
    t: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.R, dtype=np.float64)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)):
            raise ValueError("rotation must be finite")
        t = _finite_vec3(self.t, "translation").copy()
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Se3Transform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m) -> "Se3Transform":
        m = np.asarray(m, dtype=np.float64)
        if m.shape not in ((4, 4), (3, 4)):
            raise ValueError(f"expected a 3x4 or 4x4 matrix, got {m.shape}")
        return cls(m[:3, :3], m[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.R
        m[:3, 3] = self.t
        return m

    def is_valid(self, tol=1e-9) -> bool:
        ortho = np.max(np.abs(self.R.T @ self.R - np.eye(3)))
        return bool(ortho <= tol and abs(np.linalg.det(self.R) - 1.0) <= tol)

    def apply(self, points) -> np.ndarray:
        """Transform points of shape ``(..., 3)``."""
        return np.asarray(points) @ self.R.T + self.t

    def __matmul__(self, other: "Se3Transform") -> "Se3Transform":
        return compose(self, other)


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        vals = (self.fx, self.fy, self.cx, self.cy)
        if not all(np.isfinite(v) for v in vals):
            raise ValueError("intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @classmethod
    def default_for(cls, width, height) -> "CameraIntrinsics":
        """Intrinsics with a 90 degree horizontal field of view, principal point at the center."""
        f = width / 2.0
        return cls(f, f, width / 2.0, height / 2.0)


@dataclass(frozen=True)
class PixelCoord:
    u: float
    v: float

    def __post_init__(self):
        if not (np.isfinite(self.u) and np.isfinite(self.v)):
            raise ValueError(f"pixel coordinate must be finite, got ({self.u}, {self.v})")


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def euler_to_rotation(r) -> np.ndarray:
    """Rotation matrix ``Rz(rz) @ Ry(ry) @ Rx(rx)`` for Euler angles ``r``."""
    rx, ry, rz = _finite_vec3(r, "euler angles")
    return _rz(rz) @ _ry(ry) @ _rx(rx)


def euler_jacobian(r) -> np.ndarray:
    """Partial derivatives of :func:`euler_to_rotation`, shape ``(3, 3, 3)``.

    ``out[k]`` is ``dR / dr[k]``.
    """
    rx, ry, rz = _finite_vec3(r, "euler angles")
    Rx, Ry, Rz = _rx(rx), _ry(ry), _rz(rz)
    return np.stack([Rz @ Ry @ _drx(rx), Rz @ _dry(ry) @ Rx, _drz(rz) @ Ry @ Rx])


def rotation_to_euler(R) -> np.ndarray:
    """Inverse of :func:`euler_to_rotation` (pitch kept in ``[-pi/2, pi/2]``)."""
    R = np.asarray(R, dtype=np.float64)
    rx = np.arctan2(R[2, 1], R[2, 2])
    ry = np.arctan2(-R[2, 0], np.hypot(R[2, 1], R[2, 2]))
    rz = np.arctan2(R[1, 0], R[0, 0])
    return wrap_angle(np.array([rx, ry, rz]))


def nearest_rotation(M) -> np.ndarray:
    """Project a 3x3 matrix onto SO(3) in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=np.float64))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def pose_to_transform(u: PoseVector) -> Se3Transform:
    return Se3Transform(euler_to_rotation(u.r), u.t)


def transform_to_pose(T: Se3Transform) -> PoseVector:
    return PoseVector(t=T.t, r=rotation_to_euler(T.R))


def compose(a: Se3Transform, b: Se3Transform) -> Se3Transform:
    """Apply ``b`` first, then ``a``."""
    return Se3Transform(a.R @ b.R, a.R @ b.t + a.t)


def invert(T: Se3Transform) -> Se3Transform:
    Rt = T.R.T
    return Se3Transform(Rt, -(Rt @ T.t))


def pixel_rays(width, height, K: CameraIntrinsics):
    """Normalized rays ``((u - cx) / fx, (v - cy) / fy)`` on the pixel grid, each ``(H, W)``."""
    u = np.arange(width, dtype=np.float64)
    v = np.arange(height, dtype=np.float64)
    xn = np.broadcast_to((u - K.cx) / K.fx, (height, width))
    yn = np.broadcast_to(((v - K.cy) / K.fy)[:, None], (height, width))
    return xn, yn


@dataclass
class Reprojection:
    """Dense reprojection of a target depth map into a source view.

    ``q`` is the transformed point divided by its target depth, ``(3, H, W)``;
    the source-view depth is ``depth * q[2]``.
    """

    u: np.ndarray
    v: np.ndarray
    depth: np.ndarray
    q: np.ndarray
    ray: np.ndarray
    valid: np.ndarray


def reproject(depth, T: Se3Transform, K: CameraIntrinsics) -> Reprojection:
    """Reproject every target pixel with positive depth into the source view.

    Pixel positions are computed as ``u + fx * (q_x / q_z - x_n)`` which equals
    ``fx * q_x / q_z + cx`` but is exact under the identity transform.
    Pixels with non-positive depth or with source depth ``<= 1e-6`` m are
    flagged invalid; their coordinates are set to 0.
    """
    depth = np.asarray(depth, dtype=np.float64)
    h, w = depth.shape
    xn, yn = pixel_rays(w, h, K)
    ray = np.stack([xn, yn, np.ones_like(xn)])
    has_depth = depth > 0
    safe_d = np.where(has_depth, depth, 1.0)
    q = np.einsum("ij,jhw->ihw", T.R, ray) + T.t[:, None, None] / safe_d
    z = safe_d * q[2]
    valid = has_depth & (z > MIN_PROJECTED_DEPTH)
    qz = np.where(valid, q[2], 1.0)
    uu = np.arange(w, dtype=np.float64)[None, :] + K.fx * (q[0] / qz - xn)
    vv = np.arange(h, dtype=np.float64)[:, None] + K.fy * (q[1] / qz - yn)
    valid &= np.isfinite(uu) & np.isfinite(vv)
    uu = np.where(valid, uu, 0.0)
    vv = np.where(valid, vv, 0.0)
    return Reprojection(uu, vv, np.where(valid, z, 0.0), q, ray, valid)


def project_pixel(p: PixelCoord, depth: float, T: Se3Transform, K: CameraIntrinsics):
    """Back-project ``p`` at ``depth``, move it by ``T`` and project it through ``K``.

    Returns ``(PixelCoord, source_depth)``. Raises :class:`BehindCameraError`
    when the transformed point has ``z <= 1e-6`` m.
    """
    if not (np.isfinite(depth) and depth > 0):
        raise ValueError(f"depth must be positive, got {depth}")
    xn = (p.u - K.cx) / K.fx
    yn = (p.v - K.cy) / K.fy
    q = T.R @ np.array([xn, yn, 1.0]) + T.t / depth
    z = depth * q[2]
    if not z > MIN_PROJECTED_DEPTH:
        raise BehindCameraError(f"projected depth {z} is behind the camera")
    u = p.u + K.fx * (q[0] / q[2] - xn)
    v = p.v + K.fy * (q[1] / q[2] - yn)
    return PixelCoord(float(u), float(v)), float(z)
