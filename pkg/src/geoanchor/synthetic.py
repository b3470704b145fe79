"""Synthetic indoor-like scene bundles with exact ground truth.

Each object is rendered as a fronto-parallel billboard at its center depth,
so the GT depth under every mask pixel equals the box center Z. A few mask
pixels are set to invalid (0.0) or noisy (< 0.1 m) depths so the depth filter
has something to discard.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, ImageMeta, project_point
from .geometry import Box3D, box3d_corners
from .scene import Expression, InstanceGT, SceneRecord, project_box_to_2d, save_scene

CATEGORY_DIMS = {
    "chair": (0.55, 0.55, 0.9),
    "table": (1.2, 0.8, 0.75),
    "lamp": (0.3, 0.3, 0.6),
    "sofa": (1.8, 0.9, 0.8),
    "cabinet": (0.8, 0.5, 1.2),
    "monitor": (0.6, 0.2, 0.4),
    "box": (0.45, 0.45, 0.45),
    "trash can": (0.35, 0.35, 0.5),
}
CATEGORIES = tuple(CATEGORY_DIMS)
BACKGROUND_DEPTH = 7.5
_POSITION_WORDS = ("on the far left", "on the left", "in the middle", "on the right", "on the far right")


def _convex_hull(pts: np.ndarray) -> np.ndarray:
    pts = sorted(map(tuple, pts))
    if len(pts) <= 2:
        return np.array(pts)

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                (ax, ay), (bx, by) = out[-2], out[-1]
                if (bx - ax) * (p[1] - ay) - (by - ay) * (p[0] - ax) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower, upper = half(pts), half(reversed(pts))
    return np.array(lower[:-1] + upper[:-1])


def rasterize_box(b: Box3D, K: CameraIntrinsics, meta: ImageMeta) -> np.ndarray:
    """Boolean (H, W) footprint: pixel centers inside the hull of the projected corners."""
    uv = np.array([project_point(tuple(c), K) for c in box3d_corners(b)])
    hull = _convex_hull(uv)
    out = np.zeros((meta.height, meta.width), dtype=bool)
    u0, v0 = np.clip(np.floor(uv.min(axis=0)).astype(int), 0, [meta.width, meta.height])
    u1, v1 = np.clip(np.ceil(uv.max(axis=0)).astype(int), 0, [meta.width, meta.height])
    uu, vv = np.meshgrid(np.arange(u0, u1) + 0.5, np.arange(v0, v1) + 0.5)
    inside = np.ones(uu.shape, dtype=bool)
    for i in range(len(hull)):
        (ax, ay), (bx, by) = hull[i], hull[(i + 1) % len(hull)]
        inside &= (bx - ax) * (vv - ay) - (by - ay) * (uu - ax) >= 0
    out[v0:v1, u0:u1] = inside
    return out


def make_scene(scene_id: str, seed: int, n_objects: int | None = None) -> SceneRecord:
    rng = np.random.default_rng(seed)
    meta = ImageMeta(640, 480)
    f = float(rng.uniform(520.0, 620.0))
    K = CameraIntrinsics(f, f, 319.5 + float(rng.uniform(-4, 4)), 239.5 + float(rng.uniform(-4, 4)))
    n = int(n_objects if n_objects is not None else rng.integers(2, 5))
    slot_width = meta.width / n
    boxes: list[tuple[str, Box3D]] = []
    for k in range(n):
        for _ in range(200):
            cat = CATEGORIES[int(rng.integers(len(CATEGORIES)))]
            base = np.array(CATEGORY_DIMS[cat])
            l, w, h = base * rng.uniform(0.85, 1.15, size=3)
            z = float(rng.uniform(2.5, 5.0))
            u = (k + 0.5) * slot_width + float(rng.uniform(-0.15, 0.15)) * slot_width
            v = float(rng.uniform(180, 300))
            x = (u - K.cx) * z / K.fx
            y = (v - K.cy) * z / K.fy
            yaw = float(rng.uniform(-0.35, 0.35)) if rng.random() < 0.5 else 0.0
            box = Box3D(x, y, z, l, w, h, yaw)
            b2 = project_box_to_2d(box, K, meta)
            lo, hi = k * slot_width, (k + 1) * slot_width
            if b2.u_min >= lo + 2 and b2.u_max <= hi - 2 and b2.v_min >= 4 and b2.v_max <= meta.height - 4:
                boxes.append((cat, box))
                break
        else:  # pragma: no cover - the slot sizes above always admit a fit
            raise RuntimeError(f"could not place object {k} in {scene_id}")

    depth = np.full((meta.height, meta.width), BACKGROUND_DEPTH, dtype=np.float32)
    owner = np.full(depth.shape, -1, dtype=np.int64)
    for idx in sorted(range(n), key=lambda i: -boxes[i][1].z):
        fp = rasterize_box(boxes[idx][1], K, meta)
        depth[fp] = boxes[idx][1].z
        owner[fp] = idx
    instances, masks = [], {}
    for idx, (cat, box) in enumerate(boxes):
        iid = idx + 1
        mask = owner == idx
        pix = np.flatnonzero(mask)
        bad = rng.choice(pix, size=max(1, len(pix) // 40), replace=False)
        flat = depth.reshape(-1)
        flat[bad[: len(bad) // 2]] = 0.0
        flat[bad[len(bad) // 2:]] = 0.05
        masks[iid] = mask.astype(np.uint8)
        instances.append(InstanceGT(iid, cat, box, f"mask_{iid}.raw"))

    order = sorted(range(n), key=lambda i: boxes[i][1].x)
    cats = [c for c, _ in boxes]
    expressions = []
    for rank, idx in enumerate(order):
        cat = cats[idx]
        if cats.count(cat) == 1:
            word = _POSITION_WORDS[min(4, int(round(rank / max(n - 1, 1) * 4)))]
            expressions.append(Expression(idx + 1, f"the {cat} {word}"))
    if not expressions:
        idx = order[0]
        expressions.append(Expression(idx + 1, f"the leftmost {cats[idx]}"))
    return SceneRecord(scene_id, meta, K, depth, tuple(instances), masks, tuple(expressions))


def make_corpus(n_scenes: int, seed: int = 0) -> list[SceneRecord]:
    return [make_scene(f"synth_{i:04d}", seed * 100_003 + i) for i in range(n_scenes)]


def write_corpus(root: Path, n_scenes: int, seed: int = 0) -> list[Path]:
    root = Path(root)
    return [save_scene(r, root / r.scene_id) for r in make_corpus(n_scenes, seed)]
