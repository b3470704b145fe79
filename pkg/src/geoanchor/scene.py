"""Per-frame scene bundles: on-disk format, validation, rescaling and GT projection.

A bundle is a directory holding ``scene.json`` plus raw rasters::

    <scene_id>/
        scene.json       metadata, intrinsics, instances, expressions
        depth.raw        float32 metric depth, 0.0 = invalid
        mask_<id>.raw    uint8 instance mask, nonzero = inside

Raster files start with a 16-byte little-endian header: magic ``b"GAR1"``,
u32 width, u32 height, u32 element kind (1 = float32, 2 = uint8), followed by
row-major pixel data.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, DomainError, ImageMeta, project_point, rescale_intrinsics
from .geometry import Box2D, Box3D, box3d_corners

RASTER_MAGIC = b"GAR1"
KIND_FLOAT32 = 1
KIND_UINT8 = 2
_HEADER = struct.Struct("<4sIII")
_DTYPES = {KIND_FLOAT32: np.dtype("<f4"), KIND_UINT8: np.dtype("u1")}


class SceneError(Exception):
    """Base class for bundle loading failures; ``field`` names the offender."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class MissingFileError(SceneError):
    pass


class MalformedHeaderError(SceneError):
    pass


class DimensionMismatchError(SceneError):
    pass


class ReferentialIntegrityError(SceneError):
    pass


class InvariantViolationError(SceneError):
    pass


class NotVisibleError(DomainError):
    """Every corner of a box lies behind the camera."""


@dataclass(frozen=True)
class InstanceGT:
    instance_id: int
    category: str
    box3d: Box3D
    mask_path: str = ""


@dataclass(frozen=True)
class Expression:
    instance_id: int
    text: str


@dataclass(frozen=True, eq=False)
class SceneRecord:
    scene_id: str
    meta: ImageMeta
    intrinsics: CameraIntrinsics
    depth: np.ndarray  # (H, W) float32 meters
    instances: tuple[InstanceGT, ...]
    masks: dict[int, np.ndarray] = field(default_factory=dict)  # id -> (H, W) uint8
    expressions: tuple[Expression, ...] = ()
    depth_path: str = "depth.raw"

    def __post_init__(self) -> None:
        validate_scene(self)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneRecord):
            return NotImplemented
        return (
            self.scene_id == other.scene_id
            and self.meta == other.meta
            and self.intrinsics == other.intrinsics
            and self.instances == other.instances
            and self.expressions == other.expressions
            and self.depth_path == other.depth_path
            and self.depth.dtype == other.depth.dtype
            and np.array_equal(self.depth, other.depth)
            and self.masks.keys() == other.masks.keys()
            and all(np.array_equal(self.masks[k], other.masks[k]) for k in self.masks)
        )

    __hash__ = None

    def instance(self, instance_id: int) -> InstanceGT:
        for inst in self.instances:
            if inst.instance_id == instance_id:
                return inst
        raise KeyError(instance_id)


def validate_scene(r: SceneRecord) -> None:
    H, W = r.meta.height, r.meta.width
    if not r.scene_id:
        raise InvariantViolationError("scene_id is empty", "scene_id")
    if r.depth.ndim != 2 or r.depth.shape != (H, W):
        raise DimensionMismatchError(
            f"depth raster shape {r.depth.shape} does not match image {W}x{H}", "depth"
        )
    if not np.all(np.isfinite(r.depth)) or np.any(r.depth < 0):
        raise InvariantViolationError("depth values must be finite and >= 0", "depth")
    seen = set()
    for inst in r.instances:
        if inst.instance_id in seen:
            raise InvariantViolationError(f"duplicate instance_id {inst.instance_id}", "instances")
        seen.add(inst.instance_id)
        if not inst.category:
            raise InvariantViolationError(
                f"instance {inst.instance_id} has an empty category", "instances.category"
            )
    for k, m in r.masks.items():
        if k not in seen:
            raise ReferentialIntegrityError(f"mask for unknown instance {k}", "masks")
        if m.shape != (H, W):
            raise DimensionMismatchError(
                f"mask {k} shape {m.shape} does not match image {W}x{H}", f"masks.{k}"
            )
    for e in r.expressions:
        if e.instance_id not in seen:
            raise ReferentialIntegrityError(
                f"expression references absent instance_id {e.instance_id}", "expressions.instance_id"
            )


# -- rasters -----------------------------------------------------------------

def write_raster(path: Path, arr: np.ndarray) -> None:
    if arr.dtype == np.float32:
        kind = KIND_FLOAT32
    elif arr.dtype == np.uint8:
        kind = KIND_UINT8
    else:
        raise TypeError(f"unsupported raster dtype {arr.dtype}")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(RASTER_MAGIC, w, h, kind))
        fh.write(np.ascontiguousarray(arr, dtype=_DTYPES[kind]).tobytes())


def read_raster(path: Path, field_name: str = "raster") -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"raster file not found: {path}", field_name)
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise MalformedHeaderError(f"{path}: truncated header", field_name)
    magic, w, h, kind = _HEADER.unpack_from(data)
    if magic != RASTER_MAGIC:
        raise MalformedHeaderError(f"{path}: bad magic {magic!r}", field_name)
    if kind not in _DTYPES:
        raise MalformedHeaderError(f"{path}: unknown element kind {kind}", field_name)
    dt = _DTYPES[kind]
    body = data[_HEADER.size:]
    if len(body) != w * h * dt.itemsize:
        raise DimensionMismatchError(
            f"{path}: header says {w}x{h} but payload holds {len(body) // dt.itemsize} pixels",
            field_name,
        )
    return np.frombuffer(body, dtype=dt).reshape(h, w).astype(dt.newbyteorder("="))


# -- bundles -----------------------------------------------------------------

def scene_to_json(r: SceneRecord) -> dict:
    return {
        "scene_id": r.scene_id,
        "meta": r.meta.to_dict(),
        "intrinsics": r.intrinsics.to_dict(),
        "depth_path": r.depth_path,
        "instances": [
            {
                "instance_id": i.instance_id,
                "category": i.category,
                "box3d": i.box3d.to_list(),
                "mask_path": i.mask_path,
            }
            for i in r.instances
        ],
        "expressions": [{"instance_id": e.instance_id, "text": e.text} for e in r.expressions],
    }


def save_scene(r: SceneRecord, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_raster(directory / r.depth_path, r.depth.astype(np.float32, copy=False))
    for inst in r.instances:
        if inst.instance_id in r.masks:
            write_raster(directory / inst.mask_path, r.masks[inst.instance_id].astype(np.uint8, copy=False))
    text = json.dumps(scene_to_json(r), indent=2, ensure_ascii=False) + "\n"
    (directory / "scene.json").write_text(text, encoding="utf-8")
    return directory


def _require(d: dict, key: str, where: str):
    if key not in d:
        raise InvariantViolationError(f"missing field {where}{key}", f"{where}{key}")
    return d[key]


def load_scene(path: Path) -> SceneRecord:
    """Load and validate a bundle directory (or its ``scene.json``)."""
    path = Path(path)
    directory = path.parent if path.name == "scene.json" else path
    meta_file = directory / "scene.json"
    if not meta_file.is_file():
        raise MissingFileError(f"scene.json not found in {directory}", "scene.json")
    try:
        doc = json.loads(meta_file.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{meta_file}: {exc}", "scene.json") from exc
    if not isinstance(doc, dict):
        raise MalformedHeaderError(f"{meta_file}: top level must be an object", "scene.json")
    try:
        meta = ImageMeta.from_dict(_require(doc, "meta", ""))
    except (DomainError, KeyError, TypeError) as exc:
        raise InvariantViolationError(f"bad meta: {exc}", "meta") from exc
    try:
        K = CameraIntrinsics.from_dict(_require(doc, "intrinsics", ""))
    except (DomainError, KeyError, TypeError) as exc:
        raise InvariantViolationError(f"bad intrinsics: {exc}", "intrinsics") from exc

    depth_path = doc.get("depth_path", "depth.raw")
    depth = read_raster(directory / depth_path, "depth_path")
    if depth.dtype != np.float32:
        raise MalformedHeaderError("depth raster must hold float32 values", "depth_path")

    instances = []
    masks = {}
    for j, item in enumerate(_require(doc, "instances", "")):
        where = f"instances[{j}]."
        try:
            box = Box3D.from_list(_require(item, "box3d", where))
        except (DomainError, TypeError) as exc:
            raise InvariantViolationError(f"bad {where}box3d: {exc}", f"{where}box3d") from exc
        inst = InstanceGT(
            int(_require(item, "instance_id", where)),
            str(_require(item, "category", where)),
            box,
            str(item.get("mask_path", "")),
        )
        instances.append(inst)
        if inst.mask_path:
            m = read_raster(directory / inst.mask_path, f"{where}mask_path")
            if m.dtype != np.uint8:
                raise MalformedHeaderError("mask raster must hold uint8 values", f"{where}mask_path")
            masks[inst.instance_id] = m
    expressions = tuple(
        Expression(int(_require(e, "instance_id", f"expressions[{j}].")), str(_require(e, "text", f"expressions[{j}].")))
        for j, e in enumerate(doc.get("expressions", []))
    )
    return SceneRecord(
        scene_id=str(_require(doc, "scene_id", "")),
        meta=meta,
        intrinsics=K,
        depth=depth,
        instances=tuple(instances),
        masks=masks,
        expressions=expressions,
        depth_path=depth_path,
    )


def list_scenes(root: Path) -> list[Path]:
    """Bundle directories directly under ``root``, sorted by name."""
    return sorted(p for p in Path(root).iterdir() if (p / "scene.json").is_file())


def load_corpus(root: Path) -> list[SceneRecord]:
    return [load_scene(p) for p in list_scenes(root)]


# -- projection and rescale --------------------------------------------------

PROJECTION_SNAP_PX = 1e-9


def project_box_to_2d(b: Box3D, K: CameraIntrinsics, meta: ImageMeta) -> Box2D:
    """Pixel bound of a box's projected corners, clamped to the image and rounded outward.

    Corners behind the camera are dropped; a box with no corner in front of the
    camera raises :class:`NotVisibleError`.
    """
    corners = box3d_corners(b)
    front = corners[corners[:, 2] > 0]
    if len(front) == 0:
        raise NotVisibleError(f"box at Z={b.z} lies entirely behind the camera")
    uv = np.array([project_point(tuple(c), K) for c in front])
    u0, v0 = uv.min(axis=0)
    u1, v1 = uv.max(axis=0)

    def clamp(x: float, hi: int) -> float:
        x = min(max(x, 0.0), float(hi))
        r = round(x)
        # float noise must not push an exact pixel edge outward
        return float(r) if abs(x - r) <= PROJECTION_SNAP_PX else x

    return Box2D(
        math.floor(clamp(u0, meta.width)),
        math.floor(clamp(v0, meta.height)),
        math.ceil(clamp(u1, meta.width)),
        math.ceil(clamp(v1, meta.height)),
    )


def resample_nearest(arr: np.ndarray, width: int, height: int) -> np.ndarray:
    """Nearest-neighbour resize sampling source pixel centers."""
    h, w = arr.shape
    cols = np.minimum(((np.arange(width) + 0.5) * w / width).astype(np.int64), w - 1)
    rows = np.minimum(((np.arange(height) + 0.5) * h / height).astype(np.int64), h - 1)
    return arr[np.ix_(rows, cols)]


def rescale_scene(r: SceneRecord, s: float) -> SceneRecord:
    """The same 3D scene seen through intrinsics and an image resized by ``s``.

    Depth values and 3D boxes are unchanged; rasters are resampled.
    """
    K2, meta2 = rescale_intrinsics(r.intrinsics, r.meta, s)
    if meta2 == r.meta and K2 == r.intrinsics:
        return r
    depth = resample_nearest(r.depth, meta2.width, meta2.height)
    masks = {k: resample_nearest(m, meta2.width, meta2.height) for k, m in r.masks.items()}
    return replace(r, meta=meta2, intrinsics=K2, depth=depth, masks=masks)


# -- ingest ------------------------------------------------------------------

def ingest_csv(src: Path, dest: Path, frames: list[str] | None = None, rescale: float = 1.0) -> list[Path]:
    """Convert the CSV + ``.npy`` layout into bundles.

    ``src`` must contain:

    * ``frames.csv`` with columns ``scene_id,width,height,fx,fy,cx,cy,depth_file``
    * ``instances.csv`` with columns
      ``scene_id,instance_id,category,x,y,z,l,w,h,yaw,pitch,roll,mask_file``
    * optionally ``expressions.csv`` with columns ``scene_id,instance_id,text``

    ``depth_file`` is an (H, W) ``.npy`` array in meters; ``mask_file`` is an
    (H, W) ``.npy`` array, nonzero inside the instance, or empty for no mask.
    Paths are relative to ``src``. ``frames`` restricts ingestion to the given
    scene ids; no frame selection is done otherwise.
    """
    src, dest = Path(src), Path(dest)
    if not (src / "frames.csv").is_file():
        raise MissingFileError(f"frames.csv not found in {src}", "frames.csv")
    if not (src / "instances.csv").is_file():
        raise MissingFileError(f"instances.csv not found in {src}", "instances.csv")

    def rows(name: str) -> list[dict]:
        p = src / name
        if not p.is_file():
            return []
        with open(p, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))

    inst_rows = rows("instances.csv")
    expr_rows = rows("expressions.csv")
    wanted = set(frames) if frames else None
    written = []
    for fr in rows("frames.csv"):
        sid = fr["scene_id"]
        if wanted is not None and sid not in wanted:
            continue
        meta = ImageMeta(int(fr["width"]), int(fr["height"]))
        K = CameraIntrinsics(float(fr["fx"]), float(fr["fy"]), float(fr["cx"]), float(fr["cy"]))
        depth = np.load(src / fr["depth_file"]).astype(np.float32)
        depth = np.where(np.isfinite(depth) & (depth > 0), depth, 0.0).astype(np.float32)
        instances, masks = [], {}
        for ir in (r for r in inst_rows if r["scene_id"] == sid):
            iid = int(ir["instance_id"])
            box = Box3D(*(float(ir[k]) for k in ("x", "y", "z", "l", "w", "h", "yaw", "pitch", "roll")))
            mask_path = ""
            if ir.get("mask_file"):
                masks[iid] = (np.load(src / ir["mask_file"]) != 0).astype(np.uint8)
                mask_path = f"mask_{iid}.raw"
            instances.append(InstanceGT(iid, ir["category"], box, mask_path))
        exprs = tuple(Expression(int(e["instance_id"]), e["text"]) for e in expr_rows if e["scene_id"] == sid)
        rec = SceneRecord(sid, meta, K, depth, tuple(instances), masks, exprs)
        if rescale != 1.0:
            rec = rescale_scene(rec, rescale)
        written.append(save_scene(rec, dest / sid))
    if wanted is not None:
        missing = wanted - {p.name for p in written}
        if missing:
            raise ReferentialIntegrityError(f"frames not found in frames.csv: {sorted(missing)}", "frames")
    return written
