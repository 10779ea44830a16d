"""Batch orchestration: manifests, file formats, synthetic scenes, CLI."""

from .manifest import FrameRecord, PipelineConfig, load_manifest
from .runner import PipelineResult, run_frame, run_pipeline
from .synthetic import MaterialBox, SyntheticSceneSpec, generate_synthetic

__all__ = [
    "FrameRecord",
    "PipelineConfig",
    "load_manifest",
    "PipelineResult",
    "run_frame",
    "run_pipeline",
    "MaterialBox",
    "SyntheticSceneSpec",
    "generate_synthetic",
]
