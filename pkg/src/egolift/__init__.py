"""Gravity-aligned voxel lifting, 3D box tracking, surface fusion and
benchmark metrics for egocentric capture.

The submodules map onto the pipeline stages:

  geom      SE(3) pose algebra and gravity alignment
  camera    pinhole / fisheye models, rectification
  voxel     local voxel grids, multi-view feature lifting, point masks
  obb       oriented boxes: decoding, exact IoU, suppression
  tracker   sequence-level box persistence
  fusion    TSDF / occupancy fusion and iso-surface extraction
  metrics   surface and detection benchmark scores
  losses    training objectives with checked gradients
  scenegen  deterministic synthetic scenes and rendering
  io        versioned file formats
  cli       the `egolift` command line tool
"""

from . import bvh, camera, fusion, geom, io, losses, metrics, obb, scenegen, tracker, voxel
from .camera import FisheyeCamera, Pixel, PinholeCamera
from .errors import EgoliftError
from .fusion import OccupancyVolume, TriangleMesh, TsdfVolume
from .geom import GravityDir, Pose, Rotation, Tangent
from .metrics import DetectionMetrics, SurfaceMetrics
from .obb import DetectionGrid, Obb3
from .scenegen import Scene, SceneSpec
from .tracker import SceneState, TrackedObject, TrackerConfig
from .voxel import FeatureVolume, MaskVolume, PointCloudWithVisibility, VoxelGrid

__version__ = "0.1.0"

__all__ = [
    "EgoliftError",
    "Rotation", "Pose", "Tangent", "GravityDir",
    "PinholeCamera", "FisheyeCamera", "Pixel",
    "VoxelGrid", "FeatureVolume", "MaskVolume", "PointCloudWithVisibility",
    "Obb3", "DetectionGrid",
    "TrackerConfig", "TrackedObject", "SceneState",
    "TsdfVolume", "OccupancyVolume", "TriangleMesh",
    "SurfaceMetrics", "DetectionMetrics",
    "SceneSpec", "Scene",
    "geom", "camera", "voxel", "obb", "tracker", "fusion",
    "metrics", "losses", "scenegen", "io", "bvh", "cli",
]
