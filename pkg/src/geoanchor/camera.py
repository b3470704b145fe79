"""Pinhole camera model: intrinsics, pixel conversions, projection and back-projection.

Camera frame convention: +X right, +Y down, +Z forward. All arithmetic is
float64.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from .numfmt import round_half_away

#: Rescale grid used by the robustness sweep (0.5x ... 1.5x).
RESCALE_FACTORS: tuple[float, ...] = tuple(round(0.5 + 0.1 * i, 1) for i in range(11))

NORMALIZED_RANGE = 1000


class DomainError(ValueError):
    """An argument lies outside the domain of the operation."""


class BehindCameraError(DomainError):
    """A point with Z <= 0 cannot be projected."""


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self) -> None:
        for name in ("fx", "fy", "cx", "cy"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise DomainError(f"intrinsic {name} must be finite, got {v!r}")
            object.__setattr__(self, name, v)
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def to_dict(self) -> dict[str, float]:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}

    @classmethod
    def from_dict(cls, d: dict) -> CameraIntrinsics:
        return cls(d["fx"], d["fy"], d["cx"], d["cy"])


@dataclass(frozen=True)
class ImageMeta:
    width: int
    height: int

    def __post_init__(self) -> None:
        for name in ("width", "height"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise DomainError(f"image {name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    def to_dict(self) -> dict[str, int]:
        return {"width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> ImageMeta:
        return cls(d["width"], d["height"])


class Point3D(NamedTuple):
    x: float
    y: float
    z: float


def _check_factor(s: float) -> float:
    s = float(s)
    if not (math.isfinite(s) and s > 0):
        raise DomainError(f"rescale factor must be positive and finite, got {s!r}")
    return s


def rescale_intrinsics(
    K: CameraIntrinsics, meta: ImageMeta, s: float
) -> tuple[CameraIntrinsics, ImageMeta]:
    """Scale all four intrinsics by ``s`` and resize the image to match.

    Metric depth and 3D geometry are untouched, so the underlying scene is the
    same one seen through a resized image.
    """
    s = _check_factor(s)
    K2 = CameraIntrinsics(K.fx * s, K.fy * s, K.cx * s, K.cy * s)
    meta2 = ImageMeta(max(1, round_half_away(meta.width * s)), max(1, round_half_away(meta.height * s)))
    return K2, meta2


def normalized_to_absolute(u_norm: float, v_norm: float, meta: ImageMeta) -> tuple[int, int]:
    """Per-mille normalized coordinates to absolute pixels, rounding half away from zero."""
    for name, v in (("u_norm", u_norm), ("v_norm", v_norm)):
        if not (0 <= v <= NORMALIZED_RANGE):
            raise DomainError(f"{name}={v!r} outside [0, {NORMALIZED_RANGE}]")
    u = round_half_away(u_norm / NORMALIZED_RANGE * meta.width)
    v = round_half_away(v_norm / NORMALIZED_RANGE * meta.height)
    return u, v


def absolute_to_normalized(u: float, v: float, meta: ImageMeta) -> tuple[int, int]:
    """Inverse of :func:`normalized_to_absolute` up to rounding; clamps into [0, 1000]."""
    un = round_half_away(u / meta.width * NORMALIZED_RANGE)
    vn = round_half_away(v / meta.height * NORMALIZED_RANGE)
    return min(max(un, 0), NORMALIZED_RANGE), min(max(vn, 0), NORMALIZED_RANGE)


def back_project(u_c: float, v_c: float, z_bar: float, K: CameraIntrinsics) -> Point3D:
    """Lift a pixel and a metric depth to a camera-frame point."""
    if not (z_bar > 0 and math.isfinite(z_bar)):
        raise DomainError(f"depth must be positive, got {z_bar!r}")
    x = (u_c - K.cx) * z_bar / K.fx
    y = (v_c - K.cy) * z_bar / K.fy
    return Point3D(x, y, float(z_bar))


def project_point(p: Point3D, K: CameraIntrinsics) -> tuple[float, float]:
    x, y, z = p
    if not z > 0:
        raise BehindCameraError(f"point has Z={z!r}; cannot project")
    return K.fx * x / z + K.cx, K.fy * y / z + K.cy
