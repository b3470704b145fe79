"""Deterministic executor of the five-step geometric chain.

1. normalized 2D anchors -> absolute pixels
2. camera intrinsic tool
3. depth sampling tool (0.1 m floor)
4. 2D center, mean depth, pinhole back-projection
5. the box center is pinned to the back-projected point; extents and angles
   come from a pluggable estimator
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .camera import CameraIntrinsics, DomainError, Point3D, back_project, normalized_to_absolute
from .geometry import Box2D, Box3D, box2d_center
from .numfmt import quantize
from .scene import InstanceGT, SceneRecord
from .tools import (
    DepthProvider,
    DepthQuery,
    DepthSample,
    MaskProvider,
    SamplingConfig,
    camera_intrinsic_tool,
    depth_sampling_tool,
)

log = logging.getLogger(__name__)


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Anchor:
    """One target: a label plus either an absolute or a per-mille normalized 2D box."""

    label: str
    box2d: Box2D | None = None
    norm_box: tuple[float, float, float, float] | None = None
    instance_id: int | None = None

    def __post_init__(self) -> None:
        if (self.box2d is None) == (self.norm_box is None):
            raise DomainError("anchor needs exactly one of box2d / norm_box")

    def absolute(self, scene: SceneRecord) -> Box2D:
        if self.box2d is not None:
            return self.box2d
        u0, v0, u1, v1 = self.norm_box
        a = normalized_to_absolute(u0, v0, scene.meta)
        b = normalized_to_absolute(u1, v1, scene.meta)
        return Box2D(a[0], a[1], b[0], b[1])


@dataclass(frozen=True)
class DimensionEstimate:
    l: float
    w: float
    h: float
    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0
    source: str = "gt_oracle"
    unknown: bool = False

    def __post_init__(self) -> None:
        if not (self.l > 0 and self.w > 0 and self.h > 0):
            raise DomainError(f"extents must be positive, got ({self.l}, {self.w}, {self.h})")


@dataclass(frozen=True)
class DeductionRecord:
    index: int
    label: str
    instance_id: int | None
    box2d: Box2D
    u_c: float
    v_c: float
    samples: tuple[DepthSample, ...]
    z_bar: float | None
    center_hat: Point3D | None
    estimate: DimensionEstimate | None = None

    @property
    def no_depth(self) -> bool:
        return self.z_bar is None

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "label": self.label,
            "instance_id": self.instance_id,
            "bbox_2d": self.box2d.to_list(),
            "u_c": self.u_c,
            "v_c": self.v_c,
            "samples": [s.to_list() for s in self.samples],
            "z_bar": self.z_bar,
            "center_hat": None if self.center_hat is None else list(self.center_hat),
            "no_depth": self.no_depth,
            "dims_source": None if self.estimate is None else self.estimate.source,
        }


class DimensionEstimator(Protocol):
    def __call__(self, scene: SceneRecord, anchor: Anchor) -> DimensionEstimate: ...


class GTOracleEstimator:
    """Extents and angles of the anchor's ground-truth instance."""

    def __call__(self, scene: SceneRecord, anchor: Anchor) -> DimensionEstimate:
        if anchor.instance_id is None:
            raise DomainError("gt_oracle needs anchors carrying an instance_id")
        b = scene.instance(anchor.instance_id).box3d
        return DimensionEstimate(b.l, b.w, b.h, b.yaw, b.pitch, b.roll, "gt_oracle")


@dataclass(frozen=True)
class PriorTable:
    rows: dict[str, tuple[float, float, float]]
    global_median: tuple[float, float, float]

    def to_csv(self, path: Path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["category", "l", "w", "h"])
            for cat in sorted(self.rows):
                w.writerow([cat, *map(repr, self.rows[cat])])

    @classmethod
    def from_csv(cls, path: Path) -> PriorTable:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = {r["category"]: (float(r["l"]), float(r["w"]), float(r["h"])) for r in csv.DictReader(fh)}
        return build_priors_from_rows(rows)


def build_priors_from_rows(rows: dict[str, tuple[float, float, float]]) -> PriorTable:
    if not rows:
        raise ConfigurationError("priors table is empty")
    arr = np.array(list(rows.values()))
    return PriorTable(dict(rows), tuple(float(x) for x in np.median(arr, axis=0)))


def build_priors(instances: Iterable[InstanceGT]) -> PriorTable:
    """Per-category median extents; the global row is the median over all instances."""
    by_cat: dict[str, list[tuple[float, float, float]]] = {}
    for inst in instances:
        by_cat.setdefault(inst.category, []).append((inst.box3d.l, inst.box3d.w, inst.box3d.h))
    if not by_cat:
        raise ConfigurationError("no instances to build priors from")
    rows = {c: tuple(float(x) for x in np.median(np.array(v), axis=0)) for c, v in by_cat.items()}
    everything = np.array([d for v in by_cat.values() for d in v])
    return PriorTable(rows, tuple(float(x) for x in np.median(everything, axis=0)))


def estimate_dims_category_prior(category: str, priors: PriorTable) -> DimensionEstimate:
    if not priors.rows:
        raise ConfigurationError("priors table is empty")
    if category in priors.rows:
        return DimensionEstimate(*priors.rows[category], source="category_prior")
    return DimensionEstimate(*priors.global_median, source="category_prior", unknown=True)


class CategoryPriorEstimator:
    def __init__(self, priors: PriorTable):
        if not priors.rows:
            raise ConfigurationError("priors table is empty")
        self.priors = priors

    def __call__(self, scene: SceneRecord, anchor: Anchor) -> DimensionEstimate:
        return estimate_dims_category_prior(anchor.label, self.priors)


def mean_depth(zs: Sequence[float]) -> float:
    # fsum is exactly rounded, so the mean does not depend on sample order
    return math.fsum(zs) / len(zs)


def run_pipeline(
    scene: SceneRecord,
    anchors: Sequence[Anchor],
    cfg: SamplingConfig,
    estimator: DimensionEstimator,
    masks: MaskProvider | None = None,
    depths: DepthProvider | None = None,
    camera_tool: Callable[[SceneRecord], CameraIntrinsics] = camera_intrinsic_tool,
    depth_decimals: int | None = None,
) -> tuple[list[Box3D], list[DeductionRecord]]:
    """Run the chain on every anchor.

    Targets without a valid depth sample are reported with ``z_bar=None`` and
    left out of the box list. ``depth_decimals`` rounds the sampled depths
    before aggregation, which is how trace generation makes the arithmetic
    match the printed tool response.
    """
    if not anchors:
        raise DomainError("run_pipeline needs at least one anchor")
    boxes2d = [a.absolute(scene) for a in anchors]
    K = camera_tool(scene)
    queries = [DepthQuery(a.label, b) for a, b in zip(anchors, boxes2d)]
    all_samples = depth_sampling_tool(scene, queries, cfg, masks=masks, depths=depths)

    boxes: list[Box3D] = []
    records: list[DeductionRecord] = []
    for i, (anchor, b2, samples) in enumerate(zip(anchors, boxes2d, all_samples)):
        if depth_decimals is not None:
            samples = [DepthSample(s.u, s.v, quantize(s.z, depth_decimals)) for s in samples]
        u_c, v_c = box2d_center(b2)
        if not samples:
            log.warning("target %d (%s): no valid depth sample, skipped", i, anchor.label)
            records.append(DeductionRecord(i, anchor.label, anchor.instance_id, b2, u_c, v_c, (), None, None))
            continue
        z_bar = mean_depth([s.z for s in samples])
        center = back_project(u_c, v_c, z_bar, K)
        est = estimator(scene, anchor)
        box = Box3D(center.x, center.y, center.z, est.l, est.w, est.h, est.yaw, est.pitch, est.roll)
        boxes.append(box)
        records.append(
            DeductionRecord(i, anchor.label, anchor.instance_id, b2, u_c, v_c, tuple(samples), z_bar, center, est)
        )
    return boxes, records


def write_deductions(records: Iterable[DeductionRecord], path: Path, scene_id: str | None = None) -> None:
    with open(path, "a", encoding="utf-8") as fh:
        for r in records:
            d = r.to_json()
            if scene_id is not None:
                d = {"scene_id": scene_id, **d}
            fh.write(json.dumps(d, ensure_ascii=False) + "\n")
