"""Pipeline orchestration: per-frame refinement and projection, map fusion,
artifact emission (PLY, metrics report, timing summary)."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..crf import (
    LabelDistributionImage,
    build_features,
    mean_field_infer,
    unary_from_probabilities,
)
from ..errors import InputError, VoxcrfError
from ..fusion import VoxelMap, extract_map, integrate_cloud
from ..metrics import (
    ConfusionMatrix,
    EvalFrame,
    FusedEvalResult,
    compute_metrics,
    evaluate_fused_map,
    format_report,
    per_class_rows,
)
from ..projection import SemanticPointCloud, back_project, make_semantic_cloud, transform_cloud
from .formats import load_unary, read_label_image, read_pgm16, read_ppm, write_ply
from .manifest import FrameRecord, PipelineConfig, load_manifest
from .resample import resample_probabilities, resample_rgb


@dataclass
class FrameOutput:
    record: FrameRecord
    q: LabelDistributionImage
    cloud: SemanticPointCloud  # world frame
    depth: np.ndarray
    rgb: np.ndarray


@dataclass
class PipelineResult:
    vmap: VoxelMap
    frame_count: int
    timings: dict[str, float]
    metrics: tuple[float, float, float, float] | None = None
    coverage: float | None = None
    outputs: dict[str, str] = field(default_factory=dict)


def run_frame(record: FrameRecord, config: PipelineConfig) -> FrameOutput:
    """Load one frame, refine its unaries with the CRF, back-project and
    transform the semantic cloud into the world frame."""
    try:
        rgb = read_ppm(record.rgb_path)
        depth = read_pgm16(record.depth_path)
        probs = load_unary(record.unary_path)
        if probs.labels != config.labels:
            raise InputError(
                f"unary has {probs.labels} labels, config expects {config.labels}"
            )
        # geometry is defined by the depth grid; other inputs resample to it
        h, w = depth.shape
        probs = resample_probabilities(probs, h, w)
        rgb = resample_rgb(rgb, h, w)
        unary = unary_from_probabilities(probs)
        features = build_features(rgb, config.crf)
        q, _ = mean_field_infer(unary, features, config.crf, config.backend)
        points, valid = back_project(depth, config.intrinsics)
        cloud = make_semantic_cloud(points, valid, q, rgb, record.frame_id)
        cloud = transform_cloud(cloud, record.pose)
        return FrameOutput(record, q, cloud, depth, rgb)
    except VoxcrfError as e:
        raise type(e)(f"frame {record.frame_id}: {e}") from e
    except OSError as e:
        raise InputError(f"frame {record.frame_id}: {e}") from e


def run_pipeline(
    manifest_path: str | Path,
    overrides: dict | None = None,
    out_dir: str | Path | None = None,
    per_frame_ply: bool = False,
) -> PipelineResult:
    """Process every manifest frame in order, fuse into a global voxel map,
    and emit PLY / metrics / summary artifacts to ``out_dir``."""
    from .manifest import apply_overrides

    records, config = load_manifest(manifest_path)
    if overrides:
        config = apply_overrides(config, overrides)
    if not records:
        raise InputError(f"{manifest_path}: manifest lists no frames")

    out = Path(out_dir) if out_dir is not None else Path(manifest_path).parent / "out"
    out.mkdir(parents=True, exist_ok=True)

    vmap = VoxelMap(config.voxel_resolution, config.labels)
    timings = {"load+crf+project": 0.0, "integrate": 0.0, "evaluate": 0.0, "export": 0.0}
    eval_frames: list[EvalFrame] = []
    outputs: dict[str, str] = {}

    for record in records:
        t0 = time.perf_counter()
        frame = run_frame(record, config)
        t1 = time.perf_counter()
        integrate_cloud(vmap, frame.cloud)
        t2 = time.perf_counter()
        timings["load+crf+project"] += t1 - t0
        timings["integrate"] += t2 - t1
        if record.truth_path is not None:
            truth = read_label_image(record.truth_path)
            eval_frames.append(
                EvalFrame(truth, frame.depth, config.intrinsics, record.pose)
            )
        if per_frame_ply:
            hard, conf = frame.cloud.compact()
            ply = out / f"{record.frame_id}.ply"
            write_ply(ply, frame.cloud.points, frame.cloud.colors, hard, conf)
            outputs[f"ply:{record.frame_id}"] = str(ply)

    metrics_tuple = None
    coverage = None
    if eval_frames:
        t0 = time.perf_counter()
        result: FusedEvalResult = evaluate_fused_map(vmap, eval_frames)
        timings["evaluate"] = time.perf_counter() - t0
        coverage = result.coverage
        if result.cm.counts.sum() > 0:
            metrics_tuple = compute_metrics(result.cm)
            report = format_report(*metrics_tuple, coverage=coverage)
            (out / "metrics.txt").write_text(report)
            (out / "metrics_per_class.csv").write_text(
                per_class_rows(result.cm, config.label_names)
            )
            outputs["metrics"] = str(out / "metrics.txt")
            outputs["metrics_per_class"] = str(out / "metrics_per_class.csv")

    t0 = time.perf_counter()
    rows = extract_map(vmap, config.min_observations, config.min_confidence)
    global_ply = out / "global_map.ply"
    if rows:
        centers = np.array([r[0] for r in rows])
        hard = np.array([r[1] for r in rows])
        conf = np.array([r[2] for r in rows])
        colors = np.clip(np.rint(np.array([r[3] for r in rows])), 0, 255).astype(np.uint8)
    else:
        centers = np.zeros((0, 3))
        hard = np.zeros(0, dtype=np.int64)
        conf = np.zeros(0)
        colors = np.zeros((0, 3), dtype=np.uint8)
    write_ply(global_ply, centers, hard_labels=hard, confidences=conf, colors=colors)
    outputs["global_ply"] = str(global_ply)
    timings["export"] = time.perf_counter() - t0

    summary_lines = [
        f"frames={len(records)}",
        f"voxels={len(vmap)}",
        f"extracted={len(rows)}",
    ]
    summary_lines += [f"time_{k.replace('+', '_')}={v:.3f}s" for k, v in timings.items()]
    if coverage is not None:
        summary_lines.append(f"coverage={coverage:.6f}")
    if metrics_tuple is not None:
        names = ("pixel_accuracy", "mean_accuracy", "mean_iu", "frequency_weighted_iu")
        summary_lines += [f"{n}={v:.6f}" for n, v in zip(names, metrics_tuple)]
    (out / "summary.txt").write_text("\n".join(summary_lines) + "\n")
    outputs["summary"] = str(out / "summary.txt")

    return PipelineResult(vmap, len(records), timings, metrics_tuple, coverage, outputs)


def metrics_from_images(
    pairs: list[tuple[str, str]], labels: int
) -> tuple[tuple[float, float, float, float], ConfusionMatrix]:
    """Accumulate predicted/truth label-image files into one matrix."""
    cm = ConfusionMatrix(labels)
    from ..metrics import accumulate

    for pred_path, truth_path in pairs:
        pred = read_label_image(pred_path)
        truth = read_label_image(truth_path)
        pred.validate(labels)
        accumulate(cm, pred, truth)
    return compute_metrics(cm), cm
