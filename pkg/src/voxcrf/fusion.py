"""Global sparse voxel map with per-voxel label distributions, fused across
posed semantic point clouds by a recursive Bayesian update.

Each voxel stores its posterior in log space, renormalized after every
update, so long observation sequences cannot underflow; likelihoods are
floored so one confident wrong observation can never zero a label forever.
New voxels start from the uniform prior.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .projection import SemanticPointCloud

LIKELIHOOD_FLOOR = 1e-8


def voxel_index(point: np.ndarray, resolution: float) -> tuple[int, int, int]:
    """Integer voxel index by floor division, deterministic at boundaries."""
    if resolution <= 0:
        raise InputError(f"resolution must be positive, got {resolution}")
    p = np.asarray(point, dtype=np.float64)
    if not np.all(np.isfinite(p)):
        raise InputError("non-finite point")
    idx = np.floor(p / resolution).astype(np.int64)
    return (int(idx[0]), int(idx[1]), int(idx[2]))


def bayes_update(prior: np.ndarray, likelihood: np.ndarray) -> np.ndarray:
    """Posterior = normalized elementwise product, computed in log space."""
    prior = np.asarray(prior, dtype=np.float64)
    likelihood = np.asarray(likelihood, dtype=np.float64)
    if prior.shape != likelihood.shape:
        raise InputError(f"shape mismatch {prior.shape} vs {likelihood.shape}")
    log_post = np.log(np.maximum(prior, LIKELIHOOD_FLOOR)) + np.log(
        np.maximum(likelihood, LIKELIHOOD_FLOOR)
    )
    log_post -= log_post.max()
    post = np.exp(log_post)
    return post / post.sum()


def _normalize_log(log_dist: np.ndarray) -> np.ndarray:
    log_dist = log_dist - log_dist.max()
    log_dist -= np.log(np.exp(log_dist).sum())
    return log_dist


@dataclass
class VoxelCell:
    log_dist: np.ndarray  # (L,) normalized log posterior
    observations: int
    color_sum: np.ndarray  # (3,) float64 accumulated RGB

    @property
    def distribution(self) -> np.ndarray:
        return np.exp(self.log_dist)

    @property
    def mean_color(self) -> np.ndarray:
        return self.color_sum / max(self.observations, 1)


@dataclass
class VoxelMap:
    """Sparse mapping from integer voxel index to fused label evidence."""

    resolution: float = 0.01
    labels: int = 2
    cells: dict[tuple[int, int, int], VoxelCell] = field(default_factory=dict)

    def __post_init__(self):
        if self.resolution <= 0:
            raise InputError(f"resolution must be positive, got {self.resolution}")
        if self.labels < 2:
            raise InputError(f"label count must be >= 2, got {self.labels}")

    def __len__(self) -> int:
        return len(self.cells)

    def distribution(self, index: tuple[int, int, int]) -> np.ndarray | None:
        cell = self.cells.get(index)
        return None if cell is None else cell.distribution


def integrate_cloud(vmap: VoxelMap, cloud: SemanticPointCloud) -> VoxelMap:
    """Fuse a world-frame cloud into the map (in place) and return the map.

    Every point updates its voxel; points of one cloud falling in a shared
    voxel fuse sequentially in point order.  New voxels initialize to the
    uniform prior before their first update.
    """
    if len(cloud) == 0:
        return vmap
    if cloud.labels != vmap.labels:
        raise InputError(f"cloud has {cloud.labels} labels, map has {vmap.labels}")
    idx = np.floor(cloud.points / vmap.resolution).astype(np.int64)
    log_lik = np.log(np.maximum(cloud.label_dists, LIKELIHOOD_FLOOR))
    colors = cloud.colors.astype(np.float64)
    cells = vmap.cells
    for i in range(len(cloud)):
        key = (int(idx[i, 0]), int(idx[i, 1]), int(idx[i, 2]))
        cell = cells.get(key)
        if cell is None:
            # uniform prior contributes a constant absorbed by normalization
            cells[key] = VoxelCell(
                _normalize_log(log_lik[i].copy()), 1, colors[i].copy()
            )
        else:
            cell.log_dist = _normalize_log(cell.log_dist + log_lik[i])
            cell.observations += 1
            cell.color_sum += colors[i]
    return vmap


def merge_maps(a: VoxelMap, b: VoxelMap) -> VoxelMap:
    """Combine maps built from disjoint frame subsets.

    Voxel-wise the accumulated likelihood products multiply (one uniform
    prior divided out, a constant the normalization absorbs), so merging is
    order-invariant and equals sequential integration of all frames.
    """
    if a.resolution != b.resolution or a.labels != b.labels:
        raise InputError("maps disagree on resolution or label count")
    out = VoxelMap(a.resolution, a.labels)
    for key, cell in a.cells.items():
        out.cells[key] = VoxelCell(cell.log_dist.copy(), cell.observations, cell.color_sum.copy())
    for key, cell in b.cells.items():
        mine = out.cells.get(key)
        if mine is None:
            out.cells[key] = VoxelCell(
                cell.log_dist.copy(), cell.observations, cell.color_sum.copy()
            )
        else:
            mine.log_dist = _normalize_log(mine.log_dist + cell.log_dist)
            mine.observations += cell.observations
            mine.color_sum += cell.color_sum
    return out


def extract_map(
    vmap: VoxelMap, min_observations: int = 1, min_confidence: float = 0.0
) -> list[tuple[np.ndarray, int, float, np.ndarray]]:
    """Rows (voxel center, argmax label, confidence, mean color) for voxels
    meeting both thresholds; argmax ties break to the smallest label id."""
    if min_observations < 0 or min_confidence < 0:
        raise InputError("thresholds must be >= 0")
    rows = []
    for key in sorted(vmap.cells):
        cell = vmap.cells[key]
        if cell.observations < min_observations:
            continue
        dist = cell.distribution
        label = int(np.argmax(dist))
        conf = float(dist[label])
        if conf < min_confidence:
            continue
        center = (np.asarray(key, dtype=np.float64) + 0.5) * vmap.resolution
        rows.append((center, label, conf, cell.mean_color))
    return rows
