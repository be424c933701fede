"""Video dataset curation toolkit.

Turns raw long-form video into an annotated, filterable clip dataset
(cascaded cut detection, keyframe-snapped clipping, optical-flow motion
scores, per-frame similarity/aesthetics/text-area annotation, synthetic
captions) and calibrates filtering thresholds with a bootstrapped-Elo
human preference study system.
"""

from .manifest import (
    Caption,
    ClipRecord,
    DatasetStats,
    FrameScore,
    VideoRecord,
    compute_stats,
    read_manifest,
    write_manifest,
)

__version__ = "0.1.0"

__all__ = [
    "Caption",
    "ClipRecord",
    "DatasetStats",
    "FrameScore",
    "VideoRecord",
    "compute_stats",
    "read_manifest",
    "write_manifest",
    "__version__",
]
