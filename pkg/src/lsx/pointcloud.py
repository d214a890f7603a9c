"""Point-cloud primitives: normalization, sampling, grouping, and file IO.

Clouds are (n, d) float arrays with d in {2, 3}.  The canonical frame puts
the bounding-box center at the origin and scales the bounding-box diagonal
to exactly 1, so all radii elsewhere in the package are fractions of that
diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class DataError(ValueError):
    """Malformed or out-of-contract input data."""


def check_cloud(points: np.ndarray, name: str = "cloud") -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] not in (2, 3):
        raise DataError(f"{name}: expected (n, 2|3) array, got shape {points.shape}")
    if points.shape[0] < 1:
        raise DataError(f"{name}: empty cloud")
    if not np.isfinite(points).all():
        raise DataError(f"{name}: non-finite coordinates")
    return points


def normalize_transform(points: np.ndarray) -> tuple[np.ndarray, float]:
    """Center and scale such that (p - center) / scale is canonical."""
    points = check_cloud(points)
    if points.shape[0] < 2:
        raise DataError("normalize: need at least 2 points")
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    diag = float(np.sqrt(((hi - lo) ** 2).sum()))
    if diag < 1e-12:
        raise DataError("normalize: degenerate bounding box")
    return (lo + hi) / 2.0, diag


def normalize(points: np.ndarray) -> np.ndarray:
    """Translate the bbox center to the origin, scale the diagonal to 1."""
    center, scale = normalize_transform(points)
    return (np.asarray(points, dtype=np.float64) - center) / scale


def bbox_diagonal(points: np.ndarray) -> float:
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    return float(np.sqrt(((hi - lo) ** 2).sum()))


def centroid(points: np.ndarray) -> np.ndarray:
    return np.asarray(points, dtype=np.float64).mean(axis=0)


def farthest_point_sample(points: np.ndarray, k: int, seed: int = 0, first: int | None = None) -> np.ndarray:
    """Greedy max-min subsampling; distance ties resolve to the lowest index.

    The first pick is drawn uniformly from `seed` unless `first` pins it.
    """
    points = check_cloud(points)
    n = points.shape[0]
    if not 1 <= k <= n:
        raise DataError(f"farthest_point_sample: k={k} out of range for n={n}")
    if first is None:
        first = int(np.random.default_rng(seed).integers(n))
    elif not 0 <= first < n:
        raise DataError(f"farthest_point_sample: first={first} out of range")
    return kernels.fps(np.ascontiguousarray(points), int(k), int(first))


@dataclass(frozen=True)
class GroupingResult:
    """Fixed-size neighborhoods: groups[i, 0] is always center_indices[i],
    remaining slots hold in-radius points nearest-first (ties by index) and
    repeat the center when fewer qualify."""

    center_indices: np.ndarray
    groups: np.ndarray
    radius: float


def ball_query(points: np.ndarray, center_indices: np.ndarray, radius: float, max_group: int) -> GroupingResult:
    points = check_cloud(points)
    center_indices = np.asarray(center_indices, dtype=np.int64)
    if center_indices.ndim != 1 or center_indices.size == 0:
        raise DataError("ball_query: need at least one center")
    if center_indices.min() < 0 or center_indices.max() >= points.shape[0]:
        raise DataError("ball_query: center index out of range")
    if not radius > 0:
        raise DataError("ball_query: radius must be positive")
    if max_group < 1:
        raise DataError("ball_query: max_group must be >= 1")
    groups = kernels.ball_query(np.ascontiguousarray(points), center_indices, float(radius), int(max_group))
    return GroupingResult(center_indices, groups, float(radius))


# ---------------------------------------------------------------------------
# raster masks


def read_pgm(path) -> np.ndarray:
    """Binary (P5) PGM with maxval <= 255."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:2] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {blob[:2]!r})")
    pos = 2
    fields = []
    while len(fields) < 3:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated header")
        fields.append(int(blob[start:pos]))
    pos += 1  # single whitespace after maxval
    width, height, maxval = fields
    if not 0 < maxval <= 255:
        raise DataError(f"{path}: unsupported maxval {maxval}")
    data = np.frombuffer(blob, dtype=np.uint8, count=width * height, offset=pos)
    if data.size != width * height:
        raise DataError(f"{path}: truncated pixel data")
    return data.reshape(height, width).copy()


def write_pgm(path, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{mask.shape[1]} {mask.shape[0]}\n255\n".encode())
        fh.write(mask.tobytes())


def mask_interior(mask: np.ndarray) -> np.ndarray:
    """(m, 2) array of (row, col) pixels counted as inside."""
    return np.argwhere(np.asarray(mask) >= 128)


def mask_bbox_edges(mask: np.ndarray) -> tuple[int, int]:
    """Height and width in pixels of the interior bounding box."""
    inside = mask_interior(mask)
    if inside.size == 0:
        raise DataError("mask has no interior pixels")
    lo = inside.min(axis=0)
    hi = inside.max(axis=0)
    return int(hi[0] - lo[0] + 1), int(hi[1] - lo[1] + 1)


def sample_mask(
    mask: np.ndarray,
    n: int = 2048,
    seed: int = 0,
    stratified: bool = False,
    return_transform: bool = False,
):
    """Sample n points uniformly over the interior pixel area, normalized.

    Pixels with value >= 128 count as interior; each contributes a unit
    square [col, col+1) x [row, row+1) in x-right, y-down coordinates.
    `stratified` spreads counts evenly across pixels (for dense ground
    truth) instead of drawing pixels independently.
    """
    inside = mask_interior(mask)
    if inside.size == 0:
        raise DataError("sample_mask: mask has no interior pixels")
    if n < 2:
        raise DataError("sample_mask: need n >= 2")
    rng = np.random.default_rng(seed)
    npix = inside.shape[0]
    if stratified:
        counts = np.full(npix, n // npix, dtype=np.int64)
        rem = n % npix
        if rem:
            counts[rng.choice(npix, size=rem, replace=False)] += 1
        pick = np.repeat(np.arange(npix), counts)
    else:
        pick = rng.integers(npix, size=n)
    rows = inside[pick, 0].astype(np.float64)
    cols = inside[pick, 1].astype(np.float64)
    offs = rng.random((pick.size, 2))
    raw = np.stack([cols + offs[:, 0], rows + offs[:, 1]], axis=1)
    center, scale = normalize_transform(raw)
    cloud = (raw - center) / scale
    if return_transform:
        return cloud, center, scale
    return cloud


# ---------------------------------------------------------------------------
# cloud text format: header "d n", then n lines of d coordinates


def write_cloud(path, points: np.ndarray) -> None:
    points = check_cloud(points)
    lines = [f"{points.shape[1]} {points.shape[0]}"]
    for row in points:
        lines.append(" ".join(repr(float(v)) for v in row))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_cloud(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise DataError(f"{path}: malformed cloud header")
        d, n = int(header[0]), int(header[1])
        data = np.loadtxt(fh, dtype=np.float64, ndmin=2)
    if data.shape != (n, d):
        raise DataError(f"{path}: expected {(n, d)} values, got {data.shape}")
    return data


def to_frame(points: np.ndarray, size: int = 256, edge: int = 248) -> np.ndarray:
    """Map a cloud into the size x size pixel frame used for rasterization:
    longest bbox edge scaled to `edge` pixels, centered in the frame."""
    points = check_cloud(points)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    longest = float((hi - lo).max())
    if longest < 1e-12:
        raise DataError("to_frame: degenerate bounding box")
    scaled = (points - (lo + hi) / 2.0) * (edge / longest)
    return scaled + size / 2.0
