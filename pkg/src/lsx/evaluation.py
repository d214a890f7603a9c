"""Evaluation metrics: raster MSE/IOU for 2D clouds, Chamfer and EMD/n,
per-dimension code-change profiles, discretized joint-embedding distances,
and a small point-cloud family classifier used by the end-to-end checks.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .pointcloud import check_cloud
from .transport import EXACT_LIMIT, chamfer, emd_approx, emd_exact


# ---------------------------------------------------------------------------
# rasterization


def _hull(points: np.ndarray) -> np.ndarray:
    """Andrew monotone chain; returns hull vertices in counter-clockwise
    order (unique points; degenerate inputs come back as 1 or 2 points)."""
    pts = np.unique(points, axis=0)
    if pts.shape[0] <= 2:
        return pts
    def half(iterable):
        out = []
        for p in iterable:
            while len(out) >= 2:
                o, a = out[-2], out[-1]
                if (a[0] - o[0]) * (p[1] - o[1]) - (a[1] - o[1]) * (p[0] - o[0]) <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out
    lower = half(pts)
    upper = half(pts[::-1])
    return np.array(lower[:-1] + upper[:-1])


def _fill_hull(raster: np.ndarray, hull: np.ndarray) -> None:
    """Scanline fill: a pixel is set when its center lies inside or on the
    hull boundary.  Exact for convex polygons."""
    size = raster.shape[0]
    if hull.shape[0] == 1:
        x, y = int(hull[0, 0]), int(hull[0, 1])
        if 0 <= x < size and 0 <= y < size:
            raster[y, x] = True
        return
    ys = hull[:, 1]
    y_lo = max(int(np.ceil(ys.min() - 0.5)), 0)
    y_hi = min(int(np.floor(ys.max() - 0.5)), size - 1)
    edges = list(zip(hull, np.roll(hull, -1, axis=0)))
    for iy in range(y_lo, y_hi + 1):
        cy = iy + 0.5
        xs = []
        for (x1, y1), (x2, y2) in edges:
            if min(y1, y2) <= cy <= max(y1, y2):
                if y1 == y2:
                    xs.extend((x1, x2))
                else:
                    xs.append(x1 + (cy - y1) * (x2 - x1) / (y2 - y1))
        if not xs:
            continue
        x_lo = max(int(np.ceil(min(xs) - 0.5)), 0)
        x_hi = min(int(np.floor(max(xs) - 0.5)), size - 1)
        if x_lo <= x_hi:
            raster[iy, x_lo : x_hi + 1] = True


def rasterize_cloud(frame_points: np.ndarray, r: float = 10.0, size: int = 256) -> np.ndarray:
    """Binary raster of a cloud already mapped into the size^2 pixel frame.

    Every point marks its own pixel; additionally, for each point, the
    convex hull of its neighborhood (all points within r pixels, the point
    included) is filled.  The result is the union, so adding points can
    only add pixels.
    """
    pts = check_cloud(frame_points, "frame_points")
    if pts.shape[1] != 2:
        raise ValueError("rasterize_cloud expects 2D points")
    raster = np.zeros((size, size), dtype=bool)
    inside = (pts >= 0) & (pts < size)
    for x, y in pts[inside.all(axis=1)]:
        raster[int(y), int(x)] = True
    d2 = ((pts[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2)
    r2 = float(r) * float(r)
    for i in range(pts.shape[0]):
        group = pts[d2[i] <= r2]
        if group.shape[0] >= 2:
            _fill_hull(raster, _hull(group))
    return raster


def mse_iou(pred: np.ndarray, gt: np.ndarray) -> tuple:
    """Mean squared pixel difference and intersection-over-union of two
    binary rasters; two empty rasters count as a perfect match (iou 1)."""
    if pred.shape != gt.shape:
        raise ValueError(f"raster shapes differ: {pred.shape} vs {gt.shape}")
    a = pred.astype(bool)
    b = gt.astype(bool)
    mse = float((a ^ b).mean())
    union = int((a | b).sum())
    if union == 0:
        return mse, 1.0
    return mse, float((a & b).sum() / union)


# ---------------------------------------------------------------------------
# shape metrics


def shape_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple:
    """(chamfer, emd_per_point); the matching is exact up to the oracle
    size limit and a fine-schedule auction beyond it."""
    ch = chamfer(pred, gt)
    n = pred.shape[0]
    if n == gt.shape[0]:
        m = emd_exact(pred, gt) if n <= EXACT_LIMIT else emd_approx(pred, gt)
        return ch, m.cost / n
    raise ValueError(f"emd needs equal counts, got {n} vs {gt.shape[0]}")


# ---------------------------------------------------------------------------
# latent code analyses


@dataclass(frozen=True)
class CodeChangeProfile:
    means: np.ndarray  # per-dimension mean |after - before|
    top: np.ndarray  # indices of the k largest means (sorted ascending)
    bottom: np.ndarray  # indices of the k smallest means (sorted ascending)

    @property
    def k(self) -> int:
        return self.top.size


def code_change_profile(before: np.ndarray, after: np.ndarray, k: int | None = None) -> CodeChangeProfile:
    """Per-dimension mean absolute change over paired codes, with the
    top-k / bottom-k index sets (k defaults to a quarter of the width, the
    64-of-256 convention).  One descending ranking with ties broken toward
    the lower index makes the two sets disjoint by construction."""
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape or before.ndim != 2:
        raise ValueError(f"paired code arrays required, got {before.shape} vs {after.shape}")
    means = np.abs(after - before).mean(axis=0)
    d = means.size
    if k is None:
        k = d // 4
    if not 0 < k <= d // 2:
        raise ValueError(f"k={k} must be in (0, {d // 2}]")
    order = np.lexsort((np.arange(d), -means))  # descending mean, then index
    top = np.sort(order[:k])
    bottom = np.sort(order[d - k :])
    return CodeChangeProfile(means, top, bottom)


def profile_to_csv(profile: CodeChangeProfile, path) -> None:
    sets = np.full(profile.means.size, "mid", dtype=object)
    sets[profile.top] = "top"
    sets[profile.bottom] = "bottom"
    with open(path, "w") as fh:
        fh.write("dim,mean_abs_change,rank_set\n")
        for i, (m, s) in enumerate(zip(profile.means, sets)):
            fh.write(f"{i},{m!r},{s}\n")


def embedding_distances(codes_x: np.ndarray, codes_y: np.ndarray) -> tuple:
    """Discretize codes for joint-embedding inspection.

    Each domain is standardized against its own per-dimension statistics,
    scaled by 3 and rounded to integers; the pairwise Hamming matrix over
    the pooled set comes back with a domain label per row.  A dimension
    with no variance is clamped (stdev floor 1e-8, with a warning) and
    then contributes nothing to any distance.
    """
    discs = []
    labels = []
    for name, codes in (("x", codes_x), ("y", codes_y)):
        codes = np.asarray(codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[0] == 0:
            raise ValueError(f"domain {name}: non-empty 2D code array required")
        sd = codes.std(axis=0)
        flat = sd < 1e-8
        if flat.any():
            warnings.warn(f"domain {name}: {int(flat.sum())} zero-variance code dimensions clamped", stacklevel=2)
            sd = np.where(flat, 1e-8, sd)
        z = (codes - codes.mean(axis=0)) / sd
        discs.append(np.rint(3.0 * z).astype(np.int64))
        labels.extend([name] * codes.shape[0])
    pooled = np.concatenate(discs, axis=0)
    dist = (pooled[:, None, :] != pooled[None, :, :]).sum(axis=2)
    return dist, pooled, labels


def save_distance_matrix(path, dist: np.ndarray) -> None:
    with open(path, "w") as fh:
        fh.write(f"{dist.shape[0]} {dist.shape[1]}\n")
        for row in dist:
            fh.write(" ".join(str(int(v)) for v in row) + "\n")


def save_metrics_csv(path, rows) -> None:
    """rows: iterable of (id, metric, value)."""
    with open(path, "w") as fh:
        fh.write("id,metric,value\n")
        for rid, metric, value in rows:
            fh.write(f"{rid},{metric},{value!r}\n")


# ---------------------------------------------------------------------------
# family classifier (used by the end-to-end translation checks)


def shape_features(cloud: np.ndarray) -> np.ndarray:
    """Position/scale-invariant descriptors of a 2D cloud: normalized
    radial histogram, fourfold-folded angle histogram, radius spread, and
    axis-anisotropy cues."""
    pts = check_cloud(cloud, "cloud")
    centered = pts - pts.mean(axis=0)
    r = np.sqrt((centered**2).sum(axis=1))
    scale = max(float(np.sqrt((r**2).mean())), 1e-12)
    rn = r / scale
    rad_hist, _ = np.histogram(rn, bins=np.linspace(0.0, 2.5, 11))
    rad_hist = rad_hist / pts.shape[0]
    theta = np.arctan2(centered[:, 1], centered[:, 0]) % (np.pi / 2)
    fold = np.minimum(theta, np.pi / 2 - theta)  # fourfold + mirror symmetry
    w = rn + 1e-9
    ang_hist, _ = np.histogram(fold, bins=np.linspace(0.0, np.pi / 4, 7), weights=w)
    ang_hist = ang_hist / w.sum()
    var = centered.var(axis=0)
    aniso = float(var.max() / max(var.min(), 1e-12))
    r2 = rn**2
    spread = float(r2.var())
    inner = float((rn < 0.5).mean())
    return np.concatenate([rad_hist, ang_hist, [np.log(aniso), spread, inner]])


class FamilyClassifier:
    """Logistic regression on shape_features, fit by deterministic
    full-batch gradient descent.  Labels are 0/1 for the two families."""

    def __init__(self, iters: int = 400, lr: float = 0.5):
        self.iters = iters
        self.lr = lr
        self.w: np.ndarray | None = None
        self.b = 0.0
        self.mu: np.ndarray | None = None
        self.sd: np.ndarray | None = None

    def fit(self, clouds: np.ndarray, labels: np.ndarray) -> "FamilyClassifier":
        feats = np.stack([shape_features(c) for c in clouds])
        y = np.asarray(labels, dtype=np.float64)
        if set(np.unique(y)) - {0.0, 1.0}:
            raise ValueError("labels must be 0/1")
        self.mu = feats.mean(axis=0)
        self.sd = np.maximum(feats.std(axis=0), 1e-8)
        x = (feats - self.mu) / self.sd
        w = np.zeros(x.shape[1])
        b = 0.0
        for _ in range(self.iters):
            p = 1.0 / (1.0 + np.exp(-(x @ w + b)))
            g = p - y
            w -= self.lr * (x.T @ g / x.shape[0] + 1e-4 * w)
            b -= self.lr * float(g.mean())
        self.w, self.b = w, b
        return self

    def predict(self, clouds: np.ndarray) -> np.ndarray:
        if self.w is None:
            raise RuntimeError("classifier is not fitted")
        feats = np.stack([shape_features(c) for c in clouds])
        x = (feats - self.mu) / self.sd
        return ((x @ self.w + self.b) > 0).astype(np.int64)

    def accuracy(self, clouds: np.ndarray, labels: np.ndarray) -> float:
        return float((self.predict(clouds) == np.asarray(labels)).mean())
