"""Simulation oracle for the quantitative acceptance thresholds.

Runs the two gain scenarios over more seeds than the acceptance suite uses
and prints the observed margins, so the frozen thresholds (CRF denoising
gain >= 5 percentage points; fused accuracy above every per-seed
single-frame mean and above 0.95) are backed by measurement rather than
hope.  Also times the 224x224 lattice inference budget.

Usage: python scripts/calibrate_acceptance.py [--seeds N]
"""

from __future__ import annotations

import argparse
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from voxcrf.crf import (
    CrfParams,
    LabelDistributionImage,
    build_features,
    map_labeling,
    mean_field_infer,
    unary_from_probabilities,
)
from voxcrf.pipeline.cli import run_budget_benchmark
from voxcrf.pipeline.formats import read_label_image
from voxcrf.pipeline.labels import label_palette
from voxcrf.pipeline.manifest import load_manifest
from voxcrf.pipeline.runner import run_frame, run_pipeline
from voxcrf.pipeline.synthetic import (
    MaterialBox,
    SyntheticSceneSpec,
    corrupt_unaries,
    generate_synthetic,
    make_piecewise_labels,
    shade_labels,
)

LABELS = 6


def crf_denoising_gain(seed: int, side: int = 96, noise: float = 0.2, conf: float = 0.6):
    """(unary accuracy, CRF accuracy) on one piecewise-constant 2D scene."""
    rng = np.random.default_rng(seed)
    truth = make_piecewise_labels(side, side, LABELS, rng, num_rects=5)
    rgb = shade_labels(truth, label_palette(LABELS), 10.0, rng)
    probs = corrupt_unaries(truth, LABELS, noise, conf, rng)
    probs_img = LabelDistributionImage(side, side, LABELS, probs)

    flat = truth.reshape(-1)
    unary_acc = float((np.argmax(probs, axis=1) == flat).mean())

    params = CrfParams(iterations=10)
    unary = unary_from_probabilities(probs_img)
    feats = build_features(rgb, params)
    q, _ = mean_field_infer(unary, feats, params, "lattice")
    crf_acc = float((map_labeling(q).data == flat).mean())
    return unary_acc, crf_acc


def fusion_scene_spec(seed: int, noise: float = 0.3, conf: float = 0.6) -> SyntheticSceneSpec:
    boxes = [
        MaterialBox((0.9, 0.9, 0.10), (2.3, 1.7, 0.72), 2),
        MaterialBox((1.2, 2.0, 0.08), (1.9, 2.6, 1.1), 3),
        MaterialBox((0.4, 0.4, 0.06), (0.8, 0.9, 0.5), 4),
        MaterialBox((1.3, 1.1, 0.78), (1.7, 1.5, 1.0), 5),
    ]
    return SyntheticSceneSpec(
        boxes=boxes,
        room_label=0,
        label_count=LABELS,
        width=96,
        height=72,
        frame_count=20,
        noise=noise,
        confidence=conf,
        seed=seed,
    )


# One mean-field iteration: enough smoothing to lift per-frame accuracy to
# ~0.99 without saturating it at 1.0, so the fusion contribution stays
# measurable ("strictly exceeds" has room on every seed).
FUSION_OVERRIDES = {"iterations": 1}


def fusion_gain(seed: int, workdir: Path):
    """(mean single-frame accuracy, fused-map pixel accuracy) for one orbit."""
    from voxcrf.pipeline.manifest import apply_overrides

    spec = fusion_scene_spec(seed)
    scene_dir = workdir / f"scene_{seed}"
    manifest = generate_synthetic(spec, scene_dir)

    records, config = load_manifest(manifest)
    config = apply_overrides(config, FUSION_OVERRIDES)
    frame_accs = []
    for rec in records:
        fo = run_frame(rec, config)
        truth = read_label_image(rec.truth_path)
        pred = map_labeling(fo.q).data
        valid = fo.depth.reshape(-1) > 0
        frame_accs.append(float((pred[valid] == truth.data[valid]).mean()))

    result = run_pipeline(manifest, overrides=FUSION_OVERRIDES, out_dir=scene_dir / "out")
    fused_acc = result.metrics[0]
    return float(np.mean(frame_accs)), fused_acc


def main() -> int:
    ap = argparse.ArgumentParser()
    ap.add_argument("--seeds", type=int, default=12)
    args = ap.parse_args()

    print("== CRF denoising gain (eps=0.2, c=0.6, T=10, lattice) ==")
    gains = []
    for seed in range(args.seeds):
        ua, ca = crf_denoising_gain(seed)
        gains.append(ca - ua)
        print(f"seed {seed:2d}: unary {ua:.4f}  crf {ca:.4f}  gain {ca - ua:+.4f}")
    gains = np.array(gains)
    print(f"gain mean {gains.mean():+.4f}  min {gains.min():+.4f}  (threshold: mean >= +0.05)")

    print("\n== fusion gain (20-frame orbit, eps=0.3, c=0.6, T=1, lattice) ==")
    with tempfile.TemporaryDirectory() as tmp:
        for seed in range(max(5, args.seeds // 2)):
            t0 = time.perf_counter()
            single, fused = fusion_gain(seed, Path(tmp))
            print(
                f"seed {seed:2d}: mean single-frame {single:.4f}  fused {fused:.4f}  "
                f"margin {fused - single:+.4f}  ({time.perf_counter() - t0:.1f}s)"
            )
    print("(thresholds: fused > single on every seed, fused > 0.95)")

    print("\n== performance budget ==")
    elapsed = run_budget_benchmark()
    print(f"224x224, L=23, T=5 lattice inference: {elapsed:.3f}s (threshold: <= 2 s)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
