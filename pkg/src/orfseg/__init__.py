"""Patch-based segmentation of partially labelled images.

Overlapped region forecast stitching, flood-fill post-processing,
segmentation metrics and reiterative pseudo-label learning.
"""
__version__ = "0.1.0"

from .imagecore import ManifestEntry, Sample, load_image, load_mask, read_manifest, save_mask
from .metrics import MetricsReport, confusion, evaluate, iou
from .orf import OverlappedRegionForecaster, build_gallery, stitch
from .patching import DatasetKind, PatchSpec, TilingConfig, build_dataset, grid
from .postproc import HoleMode, flood_fill_holes
from .predictor import LogisticPixelModel, OraclePredictor, TrainConfig
from .relearn import ReiterativeLearner, RelearnConfig, run_pipeline
from .synthgen import SynthConfig, generate_dataset, generate_sample

__all__ = [
    "DatasetKind", "HoleMode", "LogisticPixelModel", "ManifestEntry", "MetricsReport",
    "OraclePredictor", "OverlappedRegionForecaster", "PatchSpec", "ReiterativeLearner",
    "RelearnConfig", "Sample", "SynthConfig", "TilingConfig", "TrainConfig", "build_dataset",
    "build_gallery", "confusion", "evaluate", "flood_fill_holes", "generate_dataset",
    "generate_sample", "grid", "iou", "load_image", "load_mask", "read_manifest", "run_pipeline",
    "save_mask", "stitch",
]
