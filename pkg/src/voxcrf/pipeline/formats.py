"""Binary file formats: PGM/PPM images, the UNRY unary container, ASCII PLY.

Depth images are 16-bit binary PGM (P5, maxval 65535, most-significant byte
first per the Netpbm convention), label images 8-bit PGM with 255 = IGNORE,
color images binary PPM (P6).  Unary probability maps use the UNRY format:
magic bytes ``UNRY``, three little-endian uint32 (height, width, labels),
then height*width*labels little-endian float32, row-major with the label
axis fastest.  Point clouds are ASCII PLY with x/y/z float, red/green/blue
uchar, label uchar and confidence float per vertex.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..crf import LabelDistributionImage, LabelImage
from ..errors import FormatError

UNARY_MAGIC = b"UNRY"
UNARY_SUM_TOLERANCE = 1e-3
_MAX_PIXELS = 1 << 28  # dimension-overflow guard for header-declared sizes

PLY_PROPERTIES = [
    ("float", "x"),
    ("float", "y"),
    ("float", "z"),
    ("uchar", "red"),
    ("uchar", "green"),
    ("uchar", "blue"),
    ("uchar", "label"),
    ("float", "confidence"),
]


# ---------------------------------------------------------------------------
# Netpbm images
# ---------------------------------------------------------------------------


def _read_netpbm_header(data: bytes, magic: bytes, path: str) -> tuple[int, int, int, int]:
    """Parse magic, width, height, maxval; returns them plus the data offset."""
    if not data.startswith(magic):
        raise FormatError(f"{path}: expected {magic.decode()} magic")
    fields: list[int] = []
    pos = 2
    while len(fields) < 3:
        if pos >= len(data):
            raise FormatError(f"{path}: truncated header")
        c = data[pos : pos + 1]
        if c == b"#":
            nl = data.find(b"\n", pos)
            pos = len(data) if nl < 0 else nl + 1
        elif c.isspace():
            pos += 1
        else:
            end = pos
            while end < len(data) and not data[end : end + 1].isspace():
                end += 1
            token = data[pos:end]
            if not token.isdigit():
                raise FormatError(f"{path}: bad header token {token!r}")
            fields.append(int(token))
            pos = end
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if width <= 0 or height <= 0 or width * height > _MAX_PIXELS:
        raise FormatError(f"{path}: bad dimensions {width}x{height}")
    return width, height, maxval, pos


def write_pgm16(path: str | Path, image: np.ndarray) -> None:
    """16-bit grayscale PGM, big-endian sample bytes."""
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"depth image must be 2-D, got shape {img.shape}")
    if img.min() < 0 or img.max() > 65535:
        raise FormatError("depth values outside uint16 range")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n65535\n".encode())
        f.write(img.astype(">u2").tobytes())


def read_pgm16(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, off = _read_netpbm_header(data, b"P5", str(path))
    if maxval != 65535:
        raise FormatError(f"{path}: expected maxval 65535, got {maxval}")
    need = w * h * 2
    if len(data) - off < need:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data[off : off + need], dtype=">u2").reshape(h, w).astype(np.uint16)


def write_pgm8(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 2:
        raise FormatError(f"label image must be 2-D, got shape {img.shape}")
    if img.min() < 0 or img.max() > 255:
        raise FormatError("label values outside uint8 range")
    h, w = img.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode())
        f.write(img.astype(np.uint8).tobytes())


def read_pgm8(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, off = _read_netpbm_header(data, b"P5", str(path))
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    need = w * h
    if len(data) - off < need:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data[off : off + need], dtype=np.uint8).reshape(h, w).copy()


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    img = np.asarray(image)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"color image must be (H, W, 3), got shape {img.shape}")
    if img.min() < 0 or img.max() > 255:
        raise FormatError("color values outside uint8 range")
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode())
        f.write(img.astype(np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, off = _read_netpbm_header(data, b"P6", str(path))
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    need = w * h * 3
    if len(data) - off < need:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data[off : off + need], dtype=np.uint8).reshape(h, w, 3).copy()


def read_label_image(path: str | Path) -> LabelImage:
    img = read_pgm8(path)
    return LabelImage(img.shape[0], img.shape[1], img.reshape(-1))


def write_label_image(path: str | Path, image: LabelImage) -> None:
    write_pgm8(path, image.data.reshape(image.height, image.width))


# ---------------------------------------------------------------------------
# UNRY unary container
# ---------------------------------------------------------------------------


def save_unary(path: str | Path, image: LabelDistributionImage) -> None:
    with open(path, "wb") as f:
        f.write(UNARY_MAGIC)
        f.write(struct.pack("<III", image.height, image.width, image.labels))
        f.write(image.data.astype("<f4").tobytes())


def load_unary(path: str | Path) -> LabelDistributionImage:
    """Read and validate a UNRY file; per-pixel sums within 1e-3 of 1 are
    renormalized to exactly 1, anything worse is rejected."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:4] != UNARY_MAGIC:
        raise FormatError(f"{path}: bad magic, not a UNRY file")
    height, width, labels = struct.unpack("<III", data[4:16])
    if height < 1 or width < 1 or labels < 1 or height * width > _MAX_PIXELS:
        raise FormatError(f"{path}: bad dimensions {height}x{width}x{labels}")
    count = height * width * labels
    if len(data) - 16 != count * 4:
        raise FormatError(
            f"{path}: payload is {len(data) - 16} bytes, header implies {count * 4}"
        )
    values = np.frombuffer(data[16:], dtype="<f4").astype(np.float64).reshape(-1, labels)
    if not np.all(np.isfinite(values)) or np.any(values < 0):
        raise FormatError(f"{path}: negative or non-finite probability")
    sums = values.sum(axis=1)
    worst = np.abs(sums - 1.0).max()
    if worst > UNARY_SUM_TOLERANCE:
        raise FormatError(f"{path}: per-pixel sums deviate from 1 by {worst:.2e}")
    values /= sums[:, None]
    return LabelDistributionImage(height, width, labels, values)


# ---------------------------------------------------------------------------
# PLY point clouds
# ---------------------------------------------------------------------------


def write_ply(
    path: str | Path,
    points: np.ndarray,
    colors: np.ndarray,
    hard_labels: np.ndarray,
    confidences: np.ndarray,
) -> None:
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors).reshape(-1, 3)
    hard_labels = np.asarray(hard_labels).reshape(-1)
    confidences = np.asarray(confidences, dtype=np.float64).reshape(-1)
    n = points.shape[0]
    if not (colors.shape[0] == hard_labels.shape[0] == confidences.shape[0] == n):
        raise FormatError("PLY arrays disagree in length")
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {n}\n")
        for typ, name in PLY_PROPERTIES:
            f.write(f"property {typ} {name}\n")
        f.write("end_header\n")
        for i in range(n):
            f.write(
                "%.9g %.9g %.9g %d %d %d %d %.9g\n"
                % (
                    points[i, 0],
                    points[i, 1],
                    points[i, 2],
                    int(colors[i, 0]),
                    int(colors[i, 1]),
                    int(colors[i, 2]),
                    int(hard_labels[i]),
                    confidences[i],
                )
            )


def read_ply(path: str | Path) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Strict reader for the PLY layout produced by :func:`write_ply`."""
    lines = Path(path).read_text().splitlines()
    if len(lines) < 3 or lines[0] != "ply" or lines[1] != "format ascii 1.0":
        raise FormatError(f"{path}: not an ascii PLY file")
    count = None
    props: list[tuple[str, str]] = []
    body_start = None
    for i, line in enumerate(lines[2:], start=2):
        if line.startswith("element vertex "):
            count = int(line.split()[2])
        elif line.startswith("element "):
            raise FormatError(f"{path}: unexpected element {line!r}")
        elif line.startswith("property "):
            _, typ, name = line.split()
            props.append((typ, name))
        elif line == "end_header":
            body_start = i + 1
            break
        elif line.startswith("comment"):
            continue
    if count is None or body_start is None:
        raise FormatError(f"{path}: incomplete header")
    if props != PLY_PROPERTIES:
        raise FormatError(f"{path}: unexpected vertex properties {props}")
    body = [ln for ln in lines[body_start:] if ln.strip()]
    if len(body) != count:
        raise FormatError(f"{path}: {len(body)} vertex rows, header declares {count}")
    points = np.empty((count, 3))
    colors = np.empty((count, 3), dtype=np.uint8)
    hard = np.empty(count, dtype=np.int64)
    conf = np.empty(count)
    for i, ln in enumerate(body):
        parts = ln.split()
        if len(parts) != 8:
            raise FormatError(f"{path}: vertex row {i} has {len(parts)} fields")
        points[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
        colors[i] = [int(parts[3]), int(parts[4]), int(parts[5])]
        hard[i] = int(parts[6])
        conf[i] = float(parts[7])
    return points, colors, hard, conf
