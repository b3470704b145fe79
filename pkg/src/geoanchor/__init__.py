"""Equation-anchored 3D localization toolkit: pinhole geometry, spatial tools,
tool-call protocol, reasoning traces and camera-rescale evaluation."""

__version__ = "0.1.0"

from .camera import (  # noqa: E402
    CameraIntrinsics,
    ImageMeta,
    Point3D,
    back_project,
    normalized_to_absolute,
    project_point,
    rescale_intrinsics,
)
from .geometry import Box2D, Box3D, box2d_center, box3d_corners, iou_2d, iou_3d, iou_3d_mc_oracle  # noqa: E402

__all__ = [
    "CameraIntrinsics",
    "ImageMeta",
    "Point3D",
    "back_project",
    "normalized_to_absolute",
    "project_point",
    "rescale_intrinsics",
    "Box2D",
    "Box3D",
    "box2d_center",
    "box3d_corners",
    "iou_2d",
    "iou_3d",
    "iou_3d_mc_oracle",
]
