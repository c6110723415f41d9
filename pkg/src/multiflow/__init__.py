"""Long-term dense point tracking by chaining optical flow across several frame gaps."""

from .core import FlowField, FouTriplet, GridError, PositionMap, ScalarMap, Tracklet, identity_triplet
from .selector import DEFAULT_OCCLUSION_THRESHOLD
from .tracker import DEFAULT_DELTAS, INF, DeltaSet, ProviderError, Tracker, extract_tracklets, track_sequence

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DELTAS",
    "DEFAULT_OCCLUSION_THRESHOLD",
    "INF",
    "DeltaSet",
    "FlowField",
    "FouTriplet",
    "GridError",
    "PositionMap",
    "ProviderError",
    "ScalarMap",
    "Tracker",
    "Tracklet",
    "extract_tracklets",
    "identity_triplet",
    "track_sequence",
]
