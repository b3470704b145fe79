"""2D and 9-DoF 3D boxes, rotations, and oriented 3D IoU.

Euler convention: ``(yaw, pitch, roll)`` are intrinsic rotations about Z, then
Y, then X, so ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``. Angles are kept in
(-pi, pi].
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .camera import DomainError, Point3D

# Corner sign lattice in Gray-code order over bits (x, y, z): consecutive
# corners differ in exactly one sign.
CORNER_SIGNS = np.array(
    [
        [-1, -1, -1],
        [+1, -1, -1],
        [+1, +1, -1],
        [-1, +1, -1],
        [-1, +1, +1],
        [+1, +1, +1],
        [+1, -1, +1],
        [-1, -1, +1],
    ],
    dtype=np.float64,
)

# Faces as cyclic corner-index loops, listed as (axis, sign) = (-x, +x, -y, +y, -z, +z).
FACES = np.array(
    [
        [0, 3, 4, 7],
        [1, 2, 5, 6],
        [0, 1, 6, 7],
        [3, 2, 5, 4],
        [0, 1, 2, 3],
        [7, 6, 5, 4],
    ],
    dtype=np.int64,
)
_FACE_AXES = ((0, -1.0), (0, 1.0), (1, -1.0), (1, 1.0), (2, -1.0), (2, 1.0))


def canonical_angle(a: float) -> float:
    """Wrap an angle into (-pi, pi]; values already inside are returned unchanged."""
    a = float(a)
    if not math.isfinite(a):
        raise DomainError(f"angle must be finite, got {a!r}")
    if -math.pi < a <= math.pi:
        return a
    r = math.remainder(a, 2 * math.pi)
    if r <= -math.pi:
        r += 2 * math.pi
    return r


def rotation_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def euler_from_matrix(R: np.ndarray) -> tuple[float, float, float]:
    """Inverse of :func:`rotation_matrix` (away from gimbal lock)."""
    pitch = math.asin(max(-1.0, min(1.0, -R[2, 0])))
    if abs(R[2, 0]) < 1.0 - 1e-12:
        yaw = math.atan2(R[1, 0], R[0, 0])
        roll = math.atan2(R[2, 1], R[2, 2])
    else:
        yaw = math.atan2(-R[0, 1], R[1, 1])
        roll = 0.0
    return canonical_angle(yaw), canonical_angle(pitch), canonical_angle(roll)


@dataclass(frozen=True)
class Box2D:
    u_min: int
    v_min: int
    u_max: int
    v_max: int

    def __post_init__(self) -> None:
        for name in ("u_min", "v_min", "u_max", "v_max"):
            v = getattr(self, name)
            if isinstance(v, bool) or not math.isfinite(v) or int(v) != v:
                raise DomainError(f"Box2D.{name} must be an integer pixel, got {v!r}")
            object.__setattr__(self, name, int(v))
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise DomainError(f"Box2D min exceeds max: {self.to_list()}")

    def to_list(self) -> list[int]:
        return [self.u_min, self.v_min, self.u_max, self.v_max]

    @classmethod
    def from_list(cls, xs) -> Box2D:
        if len(xs) != 4:
            raise DomainError(f"Box2D needs 4 values, got {len(xs)}")
        return cls(*xs)

    @property
    def area(self) -> int:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.u_min and 0 <= self.v_min and self.u_max <= width and self.v_max <= height

    def scaled(self, s: float) -> Box2D:
        """Scale pixel coordinates by ``s``; only exact for ``s`` mapping integers to integers."""
        vals = [x * s for x in self.to_list()]
        if any(v != int(v) for v in vals):
            raise DomainError(f"scaling {self.to_list()} by {s} leaves the pixel lattice")
        return Box2D(*(int(v) for v in vals))


@dataclass(frozen=True)
class Box3D:
    """Oriented box: center (x, y, z), extents (l, w, h) along local x, y, z, Euler angles."""

    x: float
    y: float
    z: float
    l: float
    w: float
    h: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    def __post_init__(self) -> None:
        for name in ("x", "y", "z", "l", "w", "h"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"Box3D.{name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise DomainError(f"Box3D extents must be positive, got ({self.l}, {self.w}, {self.h})")
        for name in ("yaw", "pitch", "roll"):
            object.__setattr__(self, name, canonical_angle(getattr(self, name)))

    def to_list(self) -> list[float]:
        return [self.x, self.y, self.z, self.l, self.w, self.h, self.yaw, self.pitch, self.roll]

    @classmethod
    def from_list(cls, xs) -> Box3D:
        if len(xs) != 9:
            raise DomainError(f"Box3D needs 9 values, got {len(xs)}")
        return cls(*xs)

    @property
    def center(self) -> Point3D:
        return Point3D(self.x, self.y, self.z)

    @property
    def dims(self) -> np.ndarray:
        return np.array([self.l, self.w, self.h])

    @property
    def volume(self) -> float:
        return self.l * self.w * self.h

    def rotation(self) -> np.ndarray:
        return rotation_matrix(self.yaw, self.pitch, self.roll)

    def yaw_only(self) -> Box3D:
        return Box3D(self.x, self.y, self.z, self.l, self.w, self.h, self.yaw, 0.0, 0.0)


@dataclass(frozen=True)
class IoUResult:
    iou: float
    intersection_volume: float
    union_volume: float


def box2d_center(b: Box2D) -> tuple[float, float]:
    return (b.u_min + b.u_max) / 2, (b.v_min + b.v_max) / 2


def box3d_corners(b: Box3D) -> np.ndarray:
    """The eight corners as an (8, 3) array, in :data:`CORNER_SIGNS` order."""
    local = CORNER_SIGNS * (b.dims / 2)
    return local @ b.rotation().T + np.array([b.x, b.y, b.z])


def _half_spaces(b: Box3D, origin: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    R = b.rotation()
    c = np.array([b.x, b.y, b.z]) - origin
    half = b.dims / 2
    corners = CORNER_SIGNS * half @ R.T + c
    normals = np.empty((6, 3))
    offsets = np.empty(6)
    for f, (axis, sign) in enumerate(_FACE_AXES):
        n = sign * R[:, axis]
        normals[f] = n
        offsets[f] = n @ c + half[axis]
    return corners, normals, offsets


def _canonical_pair(a: Box3D, b: Box3D) -> tuple[Box3D, Box3D]:
    # fixed argument order makes iou_3d(a, b) == iou_3d(b, a) bit for bit
    return (a, b) if a.to_list() <= b.to_list() else (b, a)


def intersection_volume(a: Box3D, b: Box3D) -> float:
    """Exact volume of ``a`` and ``b``'s overlap.

    The boundary of the overlap is the part of each box's surface lying inside
    the other box, so each face is clipped against the other box's six
    half-spaces and the volume follows from the divergence theorem.
    """
    a, b = _canonical_pair(a, b)
    origin = np.array([a.x, a.y, a.z])
    ca, na, da = _half_spaces(a, origin)
    cb, nb, db = _half_spaces(b, origin)
    scale = 1.0 + float(np.abs(ca).max() + np.abs(cb).max())
    tol = 1e-12 * scale
    return float(_kernels.intersection_volume(ca, na, da, cb, nb, db, FACES, tol))


def iou_3d(a: Box3D, b: Box3D, yaw_only: bool = False) -> IoUResult:
    if yaw_only:
        a, b = a.yaw_only(), b.yaw_only()
    if a == b:
        return IoUResult(1.0, a.volume, a.volume)
    inter = intersection_volume(a, b)
    inter = min(inter, a.volume, b.volume)
    union = a.volume + b.volume - inter
    iou = inter / union if union > 0 else 0.0
    return IoUResult(min(max(iou, 0.0), 1.0), inter, union)


def iou_3d_mc_oracle(
    a: Box3D, b: Box3D, n_samples: int = 1_000_000, seed: int = 0, chunk: int = 1 << 18
) -> IoUResult:
    """Monte-Carlo IoU estimate by uniform sampling of the joint bounding box."""
    if n_samples < 1:
        raise DomainError(f"n_samples must be >= 1, got {n_samples}")
    pts = np.vstack([box3d_corners(a), box3d_corners(b)])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    bound_vol = float(np.prod(hi - lo))
    ra, rb = a.rotation(), b.rotation()
    ca, cb = np.array([a.x, a.y, a.z]), np.array([b.x, b.y, b.z])
    ha, hb = a.dims / 2, b.dims / 2
    rng = np.random.default_rng(seed)
    both = either = 0
    remaining = n_samples
    while remaining:
        m = min(chunk, remaining)
        sample = lo + (hi - lo) * rng.random((m, 3))
        nb_, ne_ = _kernels.count_inside(sample, ca, ra, ha, cb, rb, hb)
        both += nb_
        either += ne_
        remaining -= m
    inter = bound_vol * both / n_samples
    union = bound_vol * either / n_samples
    return IoUResult(both / either if either else 0.0, inter, union)


def iou_2d(a: Box2D, b: Box2D) -> float:
    iw = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    ih = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    inter = max(iw, 0) * max(ih, 0)
    union = a.area + b.area - inter
    return inter / union if union > 0 else 0.0


def transform_box(b: Box3D, R: np.ndarray, t) -> Box3D:
    """Apply the rigid motion ``p -> R p + t`` to a box."""
    c = R @ np.array([b.x, b.y, b.z]) + np.asarray(t, dtype=float)
    yaw, pitch, roll = euler_from_matrix(R @ b.rotation())
    return Box3D(c[0], c[1], c[2], b.l, b.w, b.h, yaw, pitch, roll)
