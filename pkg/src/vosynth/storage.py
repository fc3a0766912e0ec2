"""Readers and writers for the on-disk formats.

* images: binary PPM (``P6``, maxval 255)
* depth maps: grayscale PFM (``Pf``), float32
* trajectories: 12 numbers per line, row-major ``[R | t]``
* intrinsics: one line ``fx fy cx cy``
* pose vectors: 6 numbers per line, ``tx ty tz rx ry rz``

Each format has a ``parse_*`` function working on bytes and a ``read_*``
wrapper taking a path. Every malformed input raises a subclass of
:class:`StorageError`; nothing else escapes the parsers. The byte-level
layouts are written up in ``docs/formats.md``.
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .geometry import CameraIntrinsics, PoseVector, Se3Transform, nearest_rotation
from .metrics import Trajectory


class StorageError(ValueError):
    """Base class of every format error."""


class ImageFormatError(StorageError):
    pass


class MalformedHeaderError(ImageFormatError):
    pass


class TruncatedPayloadError(ImageFormatError):
    pass


class UnsupportedFormatError(ImageFormatError):
    pass


class UnsupportedMaxvalError(ImageFormatError):
    pass


class DepthFormatError(StorageError):
    pass


class TrajectoryFormatError(StorageError):
    pass


class IntrinsicsFormatError(StorageError):
    pass


class PoseFileError(StorageError):
    pass


_WS = b" \t\n\r\v\f"
# refuse headers that promise absurd sizes before touching the payload
MAX_PIXELS = 1 << 26
ORTHO_TOL = 1e-6


def _header_tokens(data: bytes, count: int, err):
    """Split ``count`` whitespace-separated header tokens; ``#`` starts a comment.

    Returns the tokens and the payload offset (one whitespace byte after the
    last token).
    """
    tokens = []
    i, n = 0, len(data)
    while len(tokens) < count:
        while i < n and (data[i] in _WS or data[i] == ord("#")):
            if data[i] == ord("#"):
                while i < n and data[i] not in b"\r\n":
                    i += 1
            else:
                i += 1
        start = i
        while i < n and data[i] not in _WS and data[i] != ord("#"):
            i += 1
        if start == i:
            raise err(f"header ended after {len(tokens)} of {count} fields")
        tokens.append(data[start:i])
    if i >= n or data[i] not in _WS:
        raise err("header must end with a single whitespace byte")
    return tokens, i + 1


def _header_int(tok: bytes, what: str, err) -> int:
    if not re.fullmatch(rb"[0-9]{1,10}", tok):
        raise err(f"{what} is not a decimal integer: {tok[:20]!r}")
    v = int(tok)
    if v < 1:
        raise err(f"{what} must be positive, got {v}")
    return v


# -- PPM ---------------------------------------------------------------------


def parse_ppm(data: bytes) -> np.ndarray:
    """Decode a binary PPM into an ``(H, W, 3)`` float64 image in ``[0, 1]``."""
    data = bytes(data)
    if len(data) < 2:
        raise MalformedHeaderError("file too short for a PPM magic number")
    if data[:2] != b"P6":
        raise UnsupportedFormatError(f"unsupported image format {data[:2]!r}, expected b'P6'")
    if len(data) > 2 and data[2] not in _WS and data[2] != ord("#"):
        raise UnsupportedFormatError(f"unsupported image format {data[:3]!r}")
    (w_tok, h_tok, m_tok), off = _header_tokens(data[2:], 3, MalformedHeaderError)
    off += 2
    w = _header_int(w_tok, "width", MalformedHeaderError)
    h = _header_int(h_tok, "height", MalformedHeaderError)
    maxval = _header_int(m_tok, "maxval", MalformedHeaderError)
    if maxval != 255:
        raise UnsupportedMaxvalError(f"only maxval 255 is supported, got {maxval}")
    if w * h > MAX_PIXELS:
        raise MalformedHeaderError(f"image of {w}x{h} pixels exceeds the supported size")
    size = w * h * 3
    payload = data[off:]
    if len(payload) < size:
        raise TruncatedPayloadError(f"payload has {len(payload)} bytes, header promises {size}")
    if len(payload) > size:
        raise ImageFormatError(f"{len(payload) - size} trailing bytes after the pixel data")
    pixels = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)
    return pixels.astype(np.float64) / 255.0


def format_ppm(img) -> bytes:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 3 or a.shape[2] != 3 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"image must have shape (H, W, 3), got {a.shape}")
    if not np.all((a >= 0) & (a <= 1)):
        raise ValueError("image values must lie in [0, 1]")
    q = np.floor(a * 255.0 + 0.5).astype(np.uint8)
    h, w = a.shape[:2]
    return b"P6\n%d %d\n255\n" % (w, h) + q.tobytes()


def read_image(path) -> np.ndarray:
    return parse_ppm(_read_bytes(path))


def write_image(path, img):
    Path(path).write_bytes(format_ppm(img))


# -- PFM ---------------------------------------------------------------------


def parse_pfm(data: bytes) -> np.ndarray:
    """Decode a grayscale PFM into an ``(H, W)`` float64 depth map (top row first)."""
    data = bytes(data)
    if len(data) < 3 or data[:2] != b"Pf" or data[2] not in _WS:
        raise DepthFormatError(f"expected grayscale PFM magic b'Pf', got {data[:3]!r}")
    (w_tok, h_tok, s_tok), off = _header_tokens(data[2:], 3, DepthFormatError)
    off += 2
    w = _header_int(w_tok, "width", DepthFormatError)
    h = _header_int(h_tok, "height", DepthFormatError)
    if not re.fullmatch(rb"[+-]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][+-]?[0-9]+)?", s_tok):
        raise DepthFormatError(f"scale is not a number: {s_tok[:20]!r}")
    scale = float(s_tok)
    if scale == 0 or not np.isfinite(scale):
        raise DepthFormatError("scale must be finite and non-zero")
    if w * h > MAX_PIXELS:
        raise DepthFormatError(f"depth map of {w}x{h} pixels exceeds the supported size")
    size = w * h * 4
    payload = data[off:]
    if len(payload) != size:
        raise DepthFormatError(f"payload has {len(payload)} bytes, header promises {size}")
    dtype = "<f4" if scale < 0 else ">f4"
    rows = np.frombuffer(payload, dtype=dtype).reshape(h, w)
    depth = rows[::-1].astype(np.float64)
    if not np.all(np.isfinite(depth)):
        raise DepthFormatError("depth payload contains NaN or infinite values")
    if np.any(depth < 0):
        raise DepthFormatError("depth payload contains negative values")
    return depth


def format_pfm(depth) -> bytes:
    """Encode as little-endian float32; values must be finite and non-negative."""
    a = np.asarray(depth, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"depth must have shape (H, W), got {a.shape}")
    if not np.all(np.isfinite(a)) or np.any(a < 0):
        raise ValueError("depth values must be finite and non-negative")
    h, w = a.shape
    return b"Pf\n%d %d\n-1.0\n" % (w, h) + a[::-1].astype("<f4").tobytes()


def read_depth(path) -> np.ndarray:
    return parse_pfm(_read_bytes(path))


def write_depth(path, depth):
    Path(path).write_bytes(format_pfm(depth))


# -- text formats --------------------------------------------------------------

_NUMBER = re.compile(r"[+-]?(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?")


def _text_lines(data, err):
    if isinstance(data, str):
        text = data
    else:
        try:
            text = bytes(data).decode("ascii")
        except UnicodeDecodeError:
            raise err("file is not ASCII text") from None
    return text.splitlines()


def _numbers(line: str, lineno: int, count: int, err) -> list:
    fields = line.split()
    if len(fields) != count:
        raise err(f"line {lineno}: expected {count} fields, got {len(fields)}")
    out = []
    for f in fields:
        if not _NUMBER.fullmatch(f):
            raise err(f"line {lineno}: {f[:20]!r} is not a number")
        v = float(f)
        if not np.isfinite(v):
            raise err(f"line {lineno}: value {f[:20]!r} is not finite")
        out.append(v)
    return out


def _records(data, count, err):
    """Yield ``(lineno, values)`` for every non-blank line."""
    for lineno, line in enumerate(_text_lines(data, err), 1):
        if line.strip():
            yield lineno, _numbers(line, lineno, count, err)


def parse_trajectory(data) -> Trajectory:
    poses = []
    for lineno, vals in _records(data, 12, TrajectoryFormatError):
        m = np.array(vals).reshape(3, 4)
        R = m[:, :3]
        # entries of a rotation never exceed 1; checking first keeps the products finite
        bad = np.max(np.abs(R)) > 1.0 + ORTHO_TOL
        if bad or np.max(np.abs(R.T @ R - np.eye(3))) > ORTHO_TOL or abs(np.linalg.det(R) - 1.0) > ORTHO_TOL:
            raise TrajectoryFormatError(f"line {lineno}: rotation is not orthonormal within {ORTHO_TOL}")
        poses.append(Se3Transform(nearest_rotation(R), m[:, 3]))
    if not poses:
        raise TrajectoryFormatError("trajectory file has no poses")
    return Trajectory(poses)


def format_trajectory(traj) -> str:
    poses = traj.poses if isinstance(traj, Trajectory) else list(traj)
    lines = []
    for p in poses:
        m = np.hstack([p.R, p.t[:, None]]).reshape(-1)
        lines.append(" ".join(format(float(x), ".17g") for x in m))
    return "\n".join(lines) + "\n"


def read_trajectory(path) -> Trajectory:
    return parse_trajectory(_read_bytes(path))


def write_trajectory(path, traj):
    Path(path).write_text(format_trajectory(traj), encoding="ascii")


def parse_intrinsics(data) -> CameraIntrinsics:
    recs = list(_records(data, 4, IntrinsicsFormatError))
    if len(recs) != 1:
        raise IntrinsicsFormatError(f"expected exactly one line 'fx fy cx cy', got {len(recs)}")
    lineno, (fx, fy, cx, cy) = recs[0]
    if fx <= 0 or fy <= 0:
        raise IntrinsicsFormatError(f"line {lineno}: focal lengths must be positive")
    return CameraIntrinsics(fx, fy, cx, cy)


def format_intrinsics(K: CameraIntrinsics) -> str:
    return " ".join(format(float(x), ".17g") for x in (K.fx, K.fy, K.cx, K.cy)) + "\n"


def read_intrinsics(path) -> CameraIntrinsics:
    return parse_intrinsics(_read_bytes(path))


def write_intrinsics(path, K: CameraIntrinsics):
    Path(path).write_text(format_intrinsics(K), encoding="ascii")


def parse_pose_vector(text: str, lineno: int = 1) -> PoseVector:
    vals = _numbers(text, lineno, 6, PoseFileError)
    try:
        return PoseVector.from_array(vals)
    except ValueError as e:
        raise PoseFileError(f"line {lineno}: {e}") from None


def parse_pose_vectors(data) -> list:
    out = []
    for lineno, line in enumerate(_text_lines(data, PoseFileError), 1):
        if line.strip():
            out.append(parse_pose_vector(line, lineno))
    return out


def format_pose_vectors(poses) -> str:
    return "".join(" ".join(format(float(x), ".17g") for x in p.as_array()) + "\n" for p in poses)


def read_pose_vectors(path) -> list:
    return parse_pose_vectors(_read_bytes(path))


def write_pose_vectors(path, poses):
    Path(path).write_text(format_pose_vectors(poses), encoding="ascii")


def _read_bytes(path) -> bytes:
    return Path(path).read_bytes()
