"""LiDAR-camera self-calibration from multi-station scans and stereo images."""

from ._lidarcam import (
    CameraIntrinsics,
    LidarcamError,
    Pose,
    Problem,
    Scene,
    distance_map,
    read_ply,
    relative_cloud_transform,
    write_ply,
)

__all__ = [
    "CameraIntrinsics",
    "LidarcamError",
    "Pose",
    "Problem",
    "Scene",
    "distance_map",
    "read_ply",
    "relative_cloud_transform",
    "write_ply",
]
