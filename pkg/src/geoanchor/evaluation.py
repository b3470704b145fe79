"""Detection Avg F1 and grounding Acc@IoU at 0.25, plus the camera-rescale sweep."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .camera import RESCALE_FACTORS, CameraIntrinsics, DomainError
from .geometry import Box3D, iou_3d
from .reasoner import Anchor, DeductionRecord, DimensionEstimator, GTOracleEstimator, run_pipeline
from .scene import NotVisibleError, SceneRecord, project_box_to_2d, rescale_scene
from .tools import SamplingConfig, camera_intrinsic_tool

log = logging.getLogger(__name__)

IOU_THRESHOLD = 0.25

Labeled = tuple[str, Box3D]


@dataclass(frozen=True)
class MatchResult:
    pairs: tuple[tuple[int, int, float], ...]
    unmatched_preds: tuple[int, ...]
    unmatched_gts: tuple[int, ...]


@dataclass(frozen=True)
class CategoryScore:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if d else 0.0

    def to_json(self) -> dict:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "precision": self.precision,
                "recall": self.recall, "f1": self.f1}


@dataclass(frozen=True)
class DetectionReport:
    per_category: dict[str, CategoryScore]
    avg_f1: float
    category_set: str
    evaluated: tuple[str, ...]

    def to_json(self) -> dict:
        return {
            "metric": "avg_f1@0.25",
            "avg_f1": self.avg_f1,
            "category_set": self.category_set,
            "evaluated_categories": list(self.evaluated),
            "per_category": {c: s.to_json() for c, s in sorted(self.per_category.items())},
        }


def match_boxes(preds: Sequence[Labeled], gts: Sequence[Labeled], tau: float = IOU_THRESHOLD) -> MatchResult:
    """Greedy one-to-one matching within each category, highest IoU first."""
    if not 0 < tau < 1:
        raise DomainError(f"threshold must lie in (0, 1), got {tau}")
    # IoU ties are broken on box values, not list position, so counts do not depend on input order
    cands = []
    for i, (pc, pb) in enumerate(preds):
        for j, (gc, gb) in enumerate(gts):
            if pc != gc:
                continue
            v = iou_3d(pb, gb).iou
            if v >= tau:
                cands.append((-v, pb.to_list(), gb.to_list(), i, j))
    cands.sort()
    used_p, used_g, pairs = set(), set(), []
    for negv, _, _, i, j in cands:
        if i in used_p or j in used_g:
            continue
        used_p.add(i)
        used_g.add(j)
        pairs.append((i, j, -negv))
    pairs.sort(key=lambda p: (p[0], p[1]))
    return MatchResult(
        tuple(pairs),
        tuple(i for i in range(len(preds)) if i not in used_p),
        tuple(j for j in range(len(gts)) if j not in used_g),
    )


def _is_frame(x) -> bool:
    # a single frame is a list of (category, Box3D) pairs
    return bool(x) and isinstance(x[0], tuple) and len(x[0]) == 2 and isinstance(x[0][1], Box3D)


def _as_frames(preds, gts) -> tuple[list[list[Labeled]], list[list[Labeled]]]:
    # an empty list is ambiguous on its own, so both sides decide together
    if _is_frame(preds) or _is_frame(gts) or (not preds and not gts):
        return [list(preds)], [list(gts)]
    return [list(f) for f in preds], [list(f) for f in gts]


def detection_f1(
    preds,
    gts,
    tau: float = IOU_THRESHOLD,
    category_set: Sequence[str] | None = None,
    set_label: str | None = None,
) -> DetectionReport:
    """Per-category F1 accumulated over all frames, then averaged.

    ``preds`` and ``gts`` are either one frame (a list of ``(category, box)``)
    or a list of frames; matching never crosses frames. A category from
    ``category_set`` enters the average if it has ground truth, or if it has
    predictions but no ground truth (scoring F1 = 0). Without a category set,
    every category with ground truth is evaluated.
    """
    pf, gf = _as_frames(preds, gts)
    if len(pf) != len(gf):
        raise DomainError(f"{len(pf)} prediction frames vs {len(gf)} ground-truth frames")
    counts: dict[str, list[int]] = {}
    for p, g in zip(pf, gf):
        m = match_boxes(p, g, tau)
        for i, _, _ in m.pairs:
            counts.setdefault(p[i][0], [0, 0, 0])[0] += 1
        for i in m.unmatched_preds:
            counts.setdefault(p[i][0], [0, 0, 0])[1] += 1
        for j in m.unmatched_gts:
            counts.setdefault(g[j][0], [0, 0, 0])[2] += 1
    scores = {c: CategoryScore(*v) for c, v in counts.items()}
    if category_set is None:
        evaluated = sorted(c for c, s in scores.items() if s.tp + s.fn > 0)
        label = set_label or "all"
    else:
        if not category_set:
            raise DomainError("category_set is empty")
        evaluated = sorted(c for c in set(category_set) if c in scores)
        label = set_label or str(len(set(category_set)))
    avg = sum(scores[c].f1 for c in evaluated) / len(evaluated) if evaluated else 0.0
    return DetectionReport(scores, avg, label, tuple(evaluated))


def grounding_accuracy(preds: Sequence[Box3D | None], gts: Sequence[Box3D], tau: float = IOU_THRESHOLD) -> float:
    """Fraction of queries whose prediction reaches IoU >= tau; a missing prediction is a miss."""
    if len(preds) != len(gts):
        raise DomainError(f"{len(preds)} predictions for {len(gts)} queries")
    if not gts:
        return 0.0
    hits = sum(1 for p, g in zip(preds, gts) if p is not None and iou_3d(p, g).iou >= tau)
    return hits / len(gts)


def load_category_set(path: Path) -> list[str]:
    """One category per line; blank lines and ``#`` comments are ignored."""
    cats = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            cats.append(line)
    if not cats:
        raise DomainError(f"category set {path} is empty")
    return cats


# -- pipeline runs over a corpus -------------------------------------------------

def gt_anchors(scene: SceneRecord, instance_ids: Iterable[int] | None = None) -> list[Anchor]:
    """Anchors from GT boxes projected into the scene's own image."""
    ids = [i.instance_id for i in scene.instances] if instance_ids is None else list(instance_ids)
    out = []
    for iid in ids:
        inst = scene.instance(iid)
        try:
            b2 = project_box_to_2d(inst.box3d, scene.intrinsics, scene.meta)
        except NotVisibleError:
            continue
        out.append(Anchor(inst.category, box2d=b2, instance_id=iid))
    return out


@dataclass(frozen=True)
class PipelineConfig:
    sampling: SamplingConfig = SamplingConfig()
    estimator: DimensionEstimator = field(default_factory=GTOracleEstimator)
    frozen_intrinsics: bool = False
    tau: float = IOU_THRESHOLD
    category_set: tuple[str, ...] | None = None


def predict_detection(
    scene: SceneRecord, pc: PipelineConfig, camera_tool: Callable[[SceneRecord], CameraIntrinsics] = camera_intrinsic_tool
) -> tuple[list[Labeled], list[DeductionRecord]]:
    anchors = gt_anchors(scene)
    if not anchors:
        return [], []
    boxes, records = run_pipeline(scene, anchors, pc.sampling, pc.estimator, camera_tool=camera_tool)
    live = [r for r in records if not r.no_depth]
    return [(r.label, b) for r, b in zip(live, boxes)], records


def predict_grounding(
    scene: SceneRecord, pc: PipelineConfig, camera_tool: Callable[[SceneRecord], CameraIntrinsics] = camera_intrinsic_tool
) -> tuple[list[Box3D | None], list[Box3D], list[DeductionRecord]]:
    preds, gts, records = [], [], []
    for e in scene.expressions:
        gts.append(scene.instance(e.instance_id).box3d)
        anchors = gt_anchors(scene, [e.instance_id])
        if not anchors:
            preds.append(None)
            continue
        boxes, recs = run_pipeline(scene, anchors, pc.sampling, pc.estimator, camera_tool=camera_tool)
        preds.append(boxes[0] if boxes else None)
        records += recs
    return preds, gts, records


def evaluate_corpus(scenes: Sequence[SceneRecord], task: str, pc: PipelineConfig,
                    camera_for: Callable[[SceneRecord], Callable] | None = None) -> dict:
    """Run the pipeline on every scene and score it. Per-scene failures are counted, not raised."""
    failures: list[dict] = []
    if task == "detection":
        all_p, all_g = [], []
        for sc in scenes:
            tool = camera_for(sc) if camera_for else camera_intrinsic_tool
            try:
                p, _ = predict_detection(sc, pc, tool)
            except Exception as exc:  # recorded per scene, evaluation continues
                failures.append({"scene_id": sc.scene_id, "error": str(exc)})
                p = []
            all_p.append(p)
            all_g.append([(i.category, i.box3d) for i in sc.instances])
        rep = detection_f1(all_p, all_g, pc.tau, pc.category_set)
        return {"metric": rep.avg_f1, "n_scenes": len(scenes), "n_targets": sum(map(len, all_g)),
                "failures": failures, "detail": rep.to_json()}
    if task == "grounding":
        preds, gts = [], []
        for sc in scenes:
            tool = camera_for(sc) if camera_for else camera_intrinsic_tool
            try:
                p, g, _ = predict_grounding(sc, pc, tool)
            except Exception as exc:
                failures.append({"scene_id": sc.scene_id, "error": str(exc)})
                g = [sc.instance(e.instance_id).box3d for e in sc.expressions]
                p = [None] * len(g)
            preds += p
            gts += g
        acc = grounding_accuracy(preds, gts, pc.tau)
        return {"metric": acc, "n_scenes": len(scenes), "n_targets": len(gts), "failures": failures,
                "detail": {"metric": "acc@0.25", "accuracy": acc, "hits": round(acc * len(gts))}}
    raise DomainError(f"unknown task {task!r}")


@dataclass(frozen=True)
class SweepEntry:
    factor: float
    metric: float
    n_scenes: int
    n_targets: int
    n_failures: int

    def to_json(self) -> dict:
        return {"factor": self.factor, "metric": self.metric, "n_scenes": self.n_scenes,
                "n_targets": self.n_targets, "n_failures": self.n_failures}


@dataclass(frozen=True)
class SweepReport:
    task: str
    pipeline: str
    entries: tuple[SweepEntry, ...]

    def to_json(self) -> dict:
        return {"task": self.task, "pipeline": self.pipeline, "entries": [e.to_json() for e in self.entries]}

    def metrics(self) -> list[float]:
        return [e.metric for e in self.entries]

    def table(self, label: str | None = None) -> str:
        """Plain-text table: one header row of factors, one row of metric x 100."""
        label = label or self.pipeline
        heads = ["Method"] + [f"{e.factor:.1f}" for e in self.entries]
        row = [label] + [f"{100 * e.metric:.2f}" for e in self.entries]
        widths = [max(len(h), len(r)) for h, r in zip(heads, row)]
        fmt = lambda cells: "  ".join(c.ljust(w) if k == 0 else c.rjust(w) for k, (c, w) in enumerate(zip(cells, widths)))
        return fmt(heads) + "\n" + fmt(row) + "\n"


def rescale_sweep(
    scenes: Sequence[SceneRecord],
    task: str,
    pc: PipelineConfig = PipelineConfig(),
    factors: Sequence[float] = RESCALE_FACTORS,
) -> SweepReport:
    """Score the pipeline on every scene rescaled by each factor.

    With ``frozen_intrinsics`` the camera tool keeps answering the unscaled
    intrinsics while image, masks and anchors are rescaled, which is the
    ablation of a model that assumes its training camera.
    """
    entries = []
    for s in factors:
        rescaled, failures = [], 0
        for sc in scenes:
            try:
                rescaled.append((sc, rescale_scene(sc, s)))
            except Exception as exc:
                log.warning("%s: rescale %.1f failed: %s", sc.scene_id, s, exc)
                failures += 1
        originals = {id(r): o for o, r in rescaled}
        camera_for = None
        if pc.frozen_intrinsics:
            camera_for = lambda r: (lambda _scene, K=originals[id(r)].intrinsics: K)
        res = evaluate_corpus([r for _, r in rescaled], task, pc, camera_for)
        entries.append(SweepEntry(float(s), res["metric"], res["n_scenes"], res["n_targets"],
                                  failures + len(res["failures"])))
    label = "frozen-intrinsics" if pc.frozen_intrinsics else "equation-anchored"
    return SweepReport(task, label, tuple(entries))
