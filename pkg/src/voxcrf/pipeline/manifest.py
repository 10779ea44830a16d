"""Plain-text run manifests: a key=value config header followed by one line
per frame:

    frame_id rgb depth unary [truth] p00 p01 ... p33

with 16 row-major floats of the camera-to-world pose.  Paths are resolved
relative to the manifest's directory.  Whitespace-separated, ``#`` starts a
comment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..crf import CrfParams
from ..errors import ConfigError, FormatError, InputError
from ..projection import CameraIntrinsics, Pose
from .labels import label_names, label_palette

_POSE_FLOATS = 16

_CONFIG_KEYS = {
    "fx",
    "fy",
    "cx",
    "cy",
    "depth_scale",
    "labels",
    "backend",
    "iterations",
    "w_bilateral",
    "w_spatial",
    "theta_alpha",
    "theta_beta",
    "theta_gamma",
    "voxel_resolution",
    "min_observations",
    "min_confidence",
}


@dataclass
class FrameRecord:
    """One input frame: file paths plus the camera-to-world pose."""

    frame_id: str
    rgb_path: str
    depth_path: str
    unary_path: str
    pose: Pose
    truth_path: str | None = None


@dataclass
class PipelineConfig:
    """Everything a pipeline run needs besides the frames themselves."""

    intrinsics: CameraIntrinsics
    labels: int = 23
    crf: CrfParams = field(default_factory=CrfParams)
    backend: str = "lattice"
    voxel_resolution: float = 0.01
    min_observations: int = 1
    min_confidence: float = 0.0
    label_names: list[str] = None
    label_colors: np.ndarray = None

    def __post_init__(self):
        if self.labels < 2:
            raise ConfigError(f"label count must be >= 2, got {self.labels}")
        if self.backend not in ("exact", "lattice"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.voxel_resolution <= 0:
            raise ConfigError(f"voxel resolution must be positive, got {self.voxel_resolution}")
        if self.min_observations < 0 or self.min_confidence < 0:
            raise ConfigError("extraction thresholds must be >= 0")
        if self.label_names is None:
            self.label_names = label_names(self.labels)
        if self.label_colors is None:
            self.label_colors = label_palette(self.labels)
        self.label_colors = np.ascontiguousarray(self.label_colors, dtype=np.uint8)
        if len(self.label_names) != self.labels or self.label_colors.shape != (self.labels, 3):
            raise ConfigError(
                f"name/color tables must have exactly {self.labels} entries"
            )


def _apply_config_pair(cfg: dict, key: str, value: str, where: str) -> None:
    if key not in _CONFIG_KEYS:
        raise FormatError(f"{where}: unknown config key {key!r}")
    try:
        if key in ("labels", "iterations", "min_observations"):
            cfg[key] = int(value)
        elif key == "backend":
            cfg[key] = value
        else:
            cfg[key] = float(value)
    except ValueError as e:
        raise FormatError(f"{where}: bad value for {key}: {value!r}") from e


def config_from_mapping(cfg: dict) -> PipelineConfig:
    """Build a PipelineConfig from flat manifest/JSON keys."""
    missing = [k for k in ("fx", "fy", "cx", "cy") if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing intrinsics keys: {', '.join(missing)}")
    intr = CameraIntrinsics(
        fx=cfg["fx"],
        fy=cfg["fy"],
        cx=cfg["cx"],
        cy=cfg["cy"],
        depth_scale=cfg.get("depth_scale", 0.001),
    )
    crf = CrfParams(
        kernel_weights=np.array(
            [cfg.get("w_bilateral", 5.0), cfg.get("w_spatial", 3.0)]
        ),
        theta_alpha=cfg.get("theta_alpha", 61.0),
        theta_beta=cfg.get("theta_beta", 11.0),
        theta_gamma=cfg.get("theta_gamma", 3.0),
        iterations=cfg.get("iterations", 5),
    )
    return PipelineConfig(
        intrinsics=intr,
        labels=cfg.get("labels", 23),
        crf=crf,
        backend=cfg.get("backend", "lattice"),
        voxel_resolution=cfg.get("voxel_resolution", 0.01),
        min_observations=cfg.get("min_observations", 1),
        min_confidence=cfg.get("min_confidence", 0.0),
    )


def load_manifest(path: str | Path) -> tuple[list[FrameRecord], PipelineConfig]:
    """Parse a manifest; validates poses and referenced-file presence.

    Frames keep their listed order.  Malformed lines raise FormatError naming
    the line number; missing files raise InputError naming the path.
    """
    path = Path(path)
    base = path.parent
    cfg: dict = {}
    records: list[FrameRecord] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"{path}:{lineno}"
        if "=" in line and len(line.split()) == 1:
            key, value = line.split("=", 1)
            _apply_config_pair(cfg, key.strip(), value.strip(), where)
            continue
        tokens = line.split()
        if len(tokens) == 4 + _POSE_FLOATS:
            frame_id, rgb, depth, unary = tokens[:4]
            truth = None
            pose_tokens = tokens[4:]
        elif len(tokens) == 5 + _POSE_FLOATS:
            frame_id, rgb, depth, unary, truth = tokens[:5]
            pose_tokens = tokens[5:]
        else:
            raise FormatError(
                f"{where}: frame line has {len(tokens)} tokens, expected "
                f"{4 + _POSE_FLOATS} or {5 + _POSE_FLOATS}"
            )
        try:
            pose_vals = np.array([float(t) for t in pose_tokens]).reshape(4, 4)
        except ValueError as e:
            raise FormatError(f"{where}: bad pose float") from e
        try:
            pose = Pose(pose_vals)
        except InputError as e:
            raise FormatError(f"{where}: {e}") from e

        paths = {"rgb": rgb, "depth": depth, "unary": unary}
        if truth is not None:
            paths["truth"] = truth
        resolved = {}
        for kind, rel in paths.items():
            p = base / rel
            if not p.is_file():
                raise InputError(f"{where}: missing {kind} file {p}")
            resolved[kind] = str(p)
        records.append(
            FrameRecord(
                frame_id,
                resolved["rgb"],
                resolved["depth"],
                resolved["unary"],
                pose,
                resolved.get("truth"),
            )
        )
    return records, config_from_mapping(cfg)


def apply_overrides(config: PipelineConfig, overrides: dict) -> PipelineConfig:
    """Return a config with CLI/JSON overrides applied; unknown keys error."""
    cfg = dict(overrides)
    crf = config.crf
    crf_updates = {}
    if "iterations" in cfg:
        crf_updates["iterations"] = int(cfg.pop("iterations"))
    if "w_bilateral" in cfg or "w_spatial" in cfg:
        w = crf.kernel_weights.copy()
        w[0] = cfg.pop("w_bilateral", w[0])
        w[1] = cfg.pop("w_spatial", w[1])
        crf_updates["kernel_weights"] = w
    for key in ("theta_alpha", "theta_beta", "theta_gamma"):
        if key in cfg:
            crf_updates[key] = float(cfg.pop(key))
    if crf_updates:
        crf = replace(crf, **crf_updates)
    known = {"backend", "voxel_resolution", "min_observations", "min_confidence", "labels"}
    bad = set(cfg) - known
    if bad:
        raise ConfigError(f"unknown override keys: {sorted(bad)}")
    return replace(
        config,
        crf=crf,
        backend=cfg.get("backend", config.backend),
        voxel_resolution=float(cfg.get("voxel_resolution", config.voxel_resolution)),
        min_observations=int(cfg.get("min_observations", config.min_observations)),
        min_confidence=float(cfg.get("min_confidence", config.min_confidence)),
        labels=int(cfg.get("labels", config.labels)),
        label_names=None if "labels" in cfg else config.label_names,
        label_colors=None if "labels" in cfg else config.label_colors,
    )


def load_config_overrides(path: str | Path) -> dict:
    """Read a JSON file of override keys (same names as manifest config)."""
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON: {e}") from e
    if not isinstance(data, dict):
        raise FormatError(f"{path}: config JSON must be an object")
    return data
