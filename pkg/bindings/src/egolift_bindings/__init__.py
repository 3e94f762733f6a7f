"""In-process bindings for scoring model predictions with the egolift core.

External ML pipelines hold numpy arrays and JSON-like records, not core
dataclasses. This package exposes the persistence and metric operations
behind that boundary: plain records in (mirroring the core's file
schemas), plain records out, with handle objects owning the mutable
state. Results are numerically identical to the CLI on the same inputs.
"""

from egolift.io import FORMAT_VERSION as SCHEMA_VERSION

from .errors import BindingError, ClosedHandleError, CoreError, ShapeError
from .records import box_from_record, box_to_record, camera_from_record, pose_from_record
from .session import OccupancyFusion, TrackerSession, TsdfFusion
from .scoring import average_precision, surface_metrics

__version__ = "0.1.0"

__all__ = [
    "SCHEMA_VERSION",
    "BindingError",
    "ClosedHandleError",
    "CoreError",
    "ShapeError",
    "TrackerSession",
    "TsdfFusion",
    "OccupancyFusion",
    "surface_metrics",
    "average_precision",
    "box_to_record",
    "box_from_record",
    "camera_from_record",
    "pose_from_record",
]
