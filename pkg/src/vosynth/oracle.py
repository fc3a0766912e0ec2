"""Synthetic ground-truth renderer.

Scenes are sets of textured planes ``n . X = d`` in world coordinates. Each
pixel ray is intersected with every plane and the nearest hit wins. Textures
are smooth functions of the world position of the hit point (sums of cosine
products), so every view of a surface point sees exactly the same intensity.

A texture's ``scale`` is its shortest wavelength in meters. To keep bilinear
interpolation accurate choose ``scale >= 8 * depth / fx`` for the farthest
visible depth.

Scene files are line oriented::

    # comment
    background 0.2 0.2 0.2
    plane nx ny nz d texture_id scale
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import (
    CameraIntrinsics,
    PoseVector,
    Se3Transform,
    compose,
    invert,
    pixel_rays,
    pose_to_transform,
    transform_to_pose,
    wrap_angle,
)
from .imaging import DEPTH_MAX, DEPTH_MIN


class SceneFormatError(ValueError):
    pass


@dataclass(frozen=True)
class Plane:
    normal: tuple
    offset: float
    texture_id: int = 0
    scale: float = 1.0

    def __post_init__(self):
        n = np.asarray(self.normal, dtype=np.float64)
        if n.shape != (3,) or not np.all(np.isfinite(n)) or np.linalg.norm(n) == 0:
            raise ValueError(f"plane normal must be a finite non-zero 3-vector, got {self.normal}")
        if not np.isfinite(self.offset):
            raise ValueError("plane offset must be finite")
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ValueError(f"texture scale must be positive, got {self.scale}")
        norm = np.linalg.norm(n)
        object.__setattr__(self, "normal", tuple(float(x) for x in n / norm))
        object.__setattr__(self, "offset", float(self.offset) / norm)
        object.__setattr__(self, "texture_id", int(self.texture_id))


@dataclass(frozen=True)
class SyntheticScene:
    planes: tuple
    background: tuple = (0.5, 0.5, 0.5)

    def __post_init__(self):
        object.__setattr__(self, "planes", tuple(self.planes))
        if not self.planes:
            raise ValueError("a scene needs at least one plane")
        bg = np.asarray(self.background, dtype=np.float64)
        if bg.shape != (3,) or np.any(bg < 0) or np.any(bg > 1):
            raise ValueError("background must be 3 intensities in [0, 1]")
        object.__setattr__(self, "background", tuple(float(x) for x in bg))


@dataclass
class RenderedSnippet:
    frames: list
    depth_center: np.ndarray
    true_poses: list
    K: CameraIntrinsics
    cameras: list = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class _Texture:
    dir1: np.ndarray
    dir2: np.ndarray
    freq1: np.ndarray
    freq2: np.ndarray
    phase1: np.ndarray
    phase2: np.ndarray
    amp: np.ndarray


def _texture(texture_id: int, scale: float) -> _Texture:
    rng = np.random.default_rng(texture_id)
    n = int(rng.integers(3, 9))

    def unit(k):
        v = rng.normal(size=(k, 3))
        return v / np.linalg.norm(v, axis=1, keepdims=True)

    d1, d2 = unit(n), unit(n)
    wl1 = scale * rng.uniform(1.0, 4.0, n)
    wl2 = scale * rng.uniform(1.0, 4.0, n)
    ph1 = rng.uniform(0, 2 * np.pi, n)
    ph2 = rng.uniform(0, 2 * np.pi, n)
    # longer wavelengths get more energy
    amp = rng.uniform(0.3, 1.0, (n, 3)) * np.sqrt(np.minimum(wl1, wl2) / scale)[:, None]
    amp *= 0.45 / amp.sum(axis=0, keepdims=True)
    return _Texture(d1, d2, 2 * np.pi / wl1, 2 * np.pi / wl2, ph1, ph2, amp)


def texture_value(texture_id: int, scale: float, points) -> np.ndarray:
    """Intensity of a texture at world points ``(..., 3)``; returns ``(..., 3)`` in ``[0.05, 0.95]``."""
    tex = _texture(texture_id, scale)
    X = np.asarray(points, dtype=np.float64)
    a = np.cos((X @ tex.dir1.T) * tex.freq1 + tex.phase1)
    b = np.cos((X @ tex.dir2.T) * tex.freq2 + tex.phase2)
    return 0.5 + (a * b) @ tex.amp


def render_view(scene: SyntheticScene, K: CameraIntrinsics, camera: Se3Transform, size, depth_min=DEPTH_MIN, depth_max=DEPTH_MAX):
    """Render one view; ``camera`` maps camera coordinates to world coordinates.

    Returns ``(image, depth, hit)``; pixels without a hit get the background
    intensity and depth 0.
    """
    w, h = size
    xn, yn = pixel_rays(w, h, K)
    ray_cam = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    dirs = ray_cam @ camera.R.T
    origin = camera.t
    best = np.full((h, w), np.inf)
    owner = np.full((h, w), -1)
    for i, pl in enumerate(scene.planes):
        n = np.asarray(pl.normal)
        denom = dirs @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            s = (pl.offset - n @ origin) / denom
        ok = np.isfinite(s) & (s >= depth_min) & (s <= depth_max) & (s < best)
        best = np.where(ok, s, best)
        owner = np.where(ok, i, owner)
    hit = owner >= 0
    img = np.empty((h, w, 3))
    img[:] = scene.background
    depth = np.where(hit, best, 0.0)
    points = origin + depth[..., None] * dirs
    for i, pl in enumerate(scene.planes):
        m = owner == i
        if m.any():
            img[m] = texture_value(pl.texture_id, pl.scale, points[m])
    return np.clip(img, 0.0, 1.0), depth, hit


def render(scene: SyntheticScene, K: CameraIntrinsics, center_pose: Se3Transform, neighbor_poses, size) -> RenderedSnippet:
    """Render ``(I_{t-1}, I_t, I_{t+1})`` with exact center depth.

    Poses are camera-to-world transforms; ``neighbor_poses`` is
    ``(previous, next)``. ``true_poses`` hold ``u_{t,t-1}`` and ``u_{t,t+1}``,
    each mapping center-frame points into the neighbor frame.
    """
    if len(neighbor_poses) != 2:
        raise ValueError("render needs exactly two neighbor poses")
    cams = [neighbor_poses[0], center_pose, neighbor_poses[1]]
    frames = []
    depth_center = None
    for k, cam in enumerate(cams):
        img, depth, hit = render_view(scene, K, cam, size)
        if not hit.any():
            raise ValueError(f"frame {k} does not see any plane of the scene")
        frames.append(img)
        if k == 1:
            depth_center = depth
    rel = [transform_to_pose(compose(invert(c), center_pose)) for c in (cams[0], cams[2])]
    return RenderedSnippet(frames, depth_center, rel, K, cams)


def render_motion(scene, K, poses, size, center_pose=None) -> RenderedSnippet:
    """Render a snippet whose relative poses ``(u_{t,t-1}, u_{t,t+1})`` are given directly."""
    C = Se3Transform.identity() if center_pose is None else center_pose
    neighbors = [compose(C, invert(pose_to_transform(u))) for u in poses]
    return render(scene, K, C, neighbors, size)


def perturb_pose(u: PoseVector, sigma_t: float, sigma_r: float, seed: int) -> PoseVector:
    """Add seeded Gaussian noise to a pose vector."""
    if sigma_t < 0 or sigma_r < 0:
        raise ValueError("perturbation scales must be non-negative")
    rng = np.random.default_rng(seed)
    dt = rng.normal(0.0, 1.0, 3) * sigma_t
    dr = rng.normal(0.0, 1.0, 3) * sigma_r
    return PoseVector(t=u.t + dt, r=wrap_angle(u.r + dr))


def ridge_scene(distance=6.0, yaw=0.4, tilt=(0.1, -0.1), texture_id=0, scale=1.5, background=(0.5, 0.5, 0.5)):
    """Two planes meeting along a vertical ridge at ``(0, 0, distance)``.

    The ridge points at the camera so both faces are visible with continuous
    depth and texture across the crease.
    """
    planes = []
    for sign, b in zip((1.0, -1.0), tilt):
        n = np.array([sign * np.sin(yaw), b, np.cos(yaw)])
        n /= np.linalg.norm(n)
        planes.append(Plane(tuple(n), n[2] * distance, texture_id, scale))
    return SyntheticScene(tuple(planes), background)


def random_scene(rng: np.random.Generator) -> SyntheticScene:
    return ridge_scene(
        distance=rng.uniform(2.0, 4.0),
        yaw=rng.uniform(0.2, 0.6),
        tilt=tuple(rng.uniform(-0.3, 0.3, 2)),
        texture_id=int(rng.integers(0, 2**31)),
        scale=rng.uniform(3.0, 5.0),
    )


def random_motion(rng: np.random.Generator, t_range=(0.1, 0.5), r_max=0.05) -> PoseVector:
    """Pose vector with ``|t|`` uniform in ``t_range`` and ``r`` uniform in the ball of radius ``r_max``."""
    d = rng.normal(size=3)
    t = d / np.linalg.norm(d) * rng.uniform(*t_range)
    while True:
        r = rng.uniform(-r_max, r_max, 3)
        if np.linalg.norm(r) <= r_max:
            return PoseVector(t=t, r=r)


def random_snippet(seed: int, size=(128, 96), t_range=(0.1, 0.5), r_max=0.05) -> tuple:
    """Seeded ridge scene plus two random relative motions; returns ``(scene, snippet)``."""
    rng = np.random.default_rng(seed)
    scene = random_scene(rng)
    K = CameraIntrinsics.default_for(*size)
    poses = [random_motion(rng, t_range, r_max) for _ in range(2)]
    return scene, render_motion(scene, K, poses, size)


# -- scene files -----------------------------------------------------------


def parse_scene(text: str) -> SyntheticScene:
    planes = []
    background = (0.5, 0.5, 0.5)
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        try:
            if parts[0] == "plane":
                if len(parts) != 7:
                    raise SceneFormatError(f"line {lineno}: 'plane' takes 6 values, got {len(parts) - 1}")
                nx, ny, nz, d = (float(x) for x in parts[1:5])
                planes.append(Plane((nx, ny, nz), d, int(parts[5]), float(parts[6])))
            elif parts[0] == "background":
                if len(parts) != 4:
                    raise SceneFormatError(f"line {lineno}: 'background' takes 3 values")
                background = tuple(float(x) for x in parts[1:])
            else:
                raise SceneFormatError(f"line {lineno}: unknown keyword {parts[0]!r}")
        except SceneFormatError:
            raise
        except ValueError as e:
            raise SceneFormatError(f"line {lineno}: {e}") from None
    try:
        return SyntheticScene(tuple(planes), background)
    except ValueError as e:
        raise SceneFormatError(str(e)) from None


def format_scene(scene: SyntheticScene) -> str:
    lines = ["background " + " ".join(repr(x) for x in scene.background)]
    for p in scene.planes:
        vals = [*p.normal, p.offset]
        lines.append("plane " + " ".join(repr(float(x)) for x in vals) + f" {p.texture_id} {p.scale!r}")
    return "\n".join(lines) + "\n"


def read_scene(path) -> SyntheticScene:
    return parse_scene(Path(path).read_text(encoding="ascii"))


def write_scene(path, scene: SyntheticScene):
    Path(path).write_text(format_scene(scene), encoding="ascii")
