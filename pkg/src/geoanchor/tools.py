"""The camera-intrinsic tool and the multi-point depth sampling tool.

Masks and depth come from pluggable providers. The bundled providers read the
ground-truth rasters stored in a scene bundle; neural backends would implement
the same two methods.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple, Protocol, Sequence

import numpy as np

from .camera import CameraIntrinsics, DomainError
from .geometry import Box2D
from .numfmt import quantize
from .scene import SceneRecord

DEFAULT_N_POINTS = 5
DEFAULT_MIN_DEPTH = 0.1


class ProviderError(RuntimeError):
    def __init__(self, message: str, query_index: int):
        super().__init__(f"query {query_index}: {message}")
        self.query_index = query_index


class DepthSample(NamedTuple):
    u: int
    v: int
    z: float

    def to_list(self, decimals: int | None = None) -> list:
        return [self.u, self.v, self.z if decimals is None else quantize(self.z, decimals)]


@dataclass(frozen=True)
class DepthQuery:
    category: str
    bbox2d: Box2D

    def to_dict(self) -> dict:
        return {"category": self.category, "bbox_2d": self.bbox2d.to_list()}

    @classmethod
    def from_dict(cls, d: dict) -> DepthQuery:
        return cls(str(d["category"]), Box2D.from_list(d["bbox_2d"]))


@dataclass(frozen=True)
class SamplingConfig:
    n_points: int = DEFAULT_N_POINTS
    min_depth: float = DEFAULT_MIN_DEPTH
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_points < 1:
            raise DomainError(f"n_points must be >= 1, got {self.n_points}")
        if not self.min_depth >= 0:
            raise DomainError(f"min_depth must be >= 0, got {self.min_depth}")

    def to_dict(self) -> dict:
        return {"n_points": self.n_points, "min_depth": self.min_depth, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> SamplingConfig:
        return cls(int(d["n_points"]), float(d["min_depth"]), int(d["seed"]))


class MaskProvider(Protocol):
    def mask(self, scene: SceneRecord, query: DepthQuery) -> np.ndarray:
        """(H, W) array, nonzero inside the object prompted by ``query``."""


class DepthProvider(Protocol):
    def depth(self, scene: SceneRecord) -> np.ndarray:
        """(H, W) metric depth in meters; 0 marks invalid pixels."""


class GTDepthProvider:
    def depth(self, scene: SceneRecord) -> np.ndarray:
        return scene.depth


class GTMaskProvider:
    """Picks the stored instance mask of the query's category that best fills the box.

    Ties go to the lower instance id. A category absent from the scene yields
    an empty mask.
    """

    def mask(self, scene: SceneRecord, query: DepthQuery) -> np.ndarray:
        b = query.bbox2d
        best, best_count = None, 0
        for inst in sorted(scene.instances, key=lambda i: i.instance_id):
            if inst.category != query.category or inst.instance_id not in scene.masks:
                continue
            m = scene.masks[inst.instance_id]
            count = int(np.count_nonzero(m[b.v_min:b.v_max, b.u_min:b.u_max]))
            if count > best_count:
                best, best_count = m, count
        if best is None:
            return np.zeros((scene.meta.height, scene.meta.width), dtype=np.uint8)
        return best


class BoxMaskProvider:
    """Treats the whole query box as the object (no segmentation)."""

    def mask(self, scene: SceneRecord, query: DepthQuery) -> np.ndarray:
        m = np.zeros((scene.meta.height, scene.meta.width), dtype=np.uint8)
        b = query.bbox2d
        m[b.v_min:b.v_max, b.u_min:b.u_max] = 1
        return m


def camera_intrinsic_tool(scene: SceneRecord) -> CameraIntrinsics:
    return scene.intrinsics


def _query_rng(cfg: SamplingConfig, q: DepthQuery) -> np.random.Generator:
    # seeded from the query itself so results do not depend on query order
    key = [cfg.seed & 0xFFFFFFFFFFFFFFFF, *q.bbox2d.to_list(), zlib.crc32(q.category.encode("utf-8"))]
    return np.random.default_rng(np.random.SeedSequence(key))


def depth_sampling_tool(
    scene: SceneRecord,
    queries: Sequence[DepthQuery],
    cfg: SamplingConfig = SamplingConfig(),
    masks: MaskProvider | None = None,
    depths: DepthProvider | None = None,
) -> list[list[DepthSample]]:
    """Up to ``cfg.n_points`` (u, v, Z) triplets per query, sorted by (v, u).

    Pixels count as inside ``bbox2d`` when ``u_min <= u < u_max`` and
    ``v_min <= v < v_max``. Depths below ``cfg.min_depth`` are discarded.
    """
    masks = masks or GTMaskProvider()
    depths = depths or GTDepthProvider()
    W, H = scene.meta.width, scene.meta.height
    for i, q in enumerate(queries):
        if not q.bbox2d.within(W, H):
            raise DomainError(f"query {i}: box {q.bbox2d.to_list()} outside image {W}x{H}")
    try:
        depth = np.asarray(depths.depth(scene))
    except Exception as exc:
        raise ProviderError(f"depth provider failed: {exc}", -1) from exc
    if depth.shape != (H, W):
        raise ProviderError(f"depth raster shape {depth.shape} != {(H, W)}", -1)

    results = []
    for i, q in enumerate(queries):
        try:
            m = np.asarray(masks.mask(scene, q))
        except Exception as exc:
            raise ProviderError(f"mask provider failed: {exc}", i) from exc
        if m.shape != (H, W):
            raise ProviderError(f"mask shape {m.shape} != {(H, W)}", i)
        b = q.bbox2d
        sub_m = m[b.v_min:b.v_max, b.u_min:b.u_max] != 0
        sub_d = depth[b.v_min:b.v_max, b.u_min:b.u_max]
        valid = sub_m & (sub_d >= cfg.min_depth)
        vs, us = np.nonzero(valid)  # row-major, i.e. already sorted by (v, u)
        if len(vs) > cfg.n_points:
            pick = np.sort(_query_rng(cfg, q).choice(len(vs), size=cfg.n_points, replace=False))
            vs, us = vs[pick], us[pick]
        results.append(
            [DepthSample(int(u) + b.u_min, int(v) + b.v_min, float(sub_d[v, u])) for v, u in zip(vs, us)]
        )
    return results
