"""Dataset construction: synthetic unpaired domains, mask ingestion,
manifests, splits, and cached point-cloud files.

Synthetic shapes live in a fixed square canvas whose diagonal is 1, and
are cached exactly as drawn: position and size are the attributes the two
domains share, so caching normalized copies would erase what translation
is supposed to preserve (the manifest records normalized=0).  Clouds
ingested from masks go through bounding-box normalization instead and get
normalized=1.
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field

import numpy as np

from .networks import rng_for
from .pointcloud import (
    DataError,
    mask_bbox_edges,
    read_pgm,
    sample_mask,
    write_cloud,
    read_cloud,
)

CANVAS_SIDE = float(1.0 / np.sqrt(2.0))  # canvas diagonal is exactly 1

FAMILIES = ("crosses", "squares", "rings", "bars")


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic domain."""

    family: str
    count: int
    seed: int
    size: tuple = (0.3, 0.8)  # shape extent, fraction of the canvas side
    offset: tuple = (0.0, 1.0)  # center placement, fraction of the free room
    stroke: tuple = (0.2, 0.35)  # arm/ring/bar thickness, fraction of size
    rotation: tuple = (0.0, 0.0)  # radians

    def validate(self) -> None:
        if self.family not in FAMILIES:
            raise DataError(f"unknown family {self.family!r}, expected one of {FAMILIES}")
        if self.count < 1:
            raise DataError("count must be at least 1")
        for label, (lo, hi) in (
            ("size", self.size),
            ("offset", self.offset),
            ("stroke", self.stroke),
            ("rotation", self.rotation),
        ):
            if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
                raise DataError(f"{label} range {lo, hi} is empty or non-finite")
        if not (0 < self.size[0] and self.size[1] <= 1):
            raise DataError(f"size range {self.size} must sit inside (0, 1]")
        if not (0 < self.stroke[0] and self.stroke[1] < 1):
            raise DataError(f"stroke range {self.stroke} must sit inside (0, 1)")
        if not (0 <= self.offset[0] and self.offset[1] <= 1):
            raise DataError(f"offset range {self.offset} must sit inside [0, 1]")


@dataclass(frozen=True)
class ShapeParams:
    """Drawn parameters of one shape; the generator is deterministic given these."""

    family: str
    size: float  # absolute extent (canvas units)
    center: tuple
    stroke: float  # absolute thickness (canvas units)
    rotation: float


def draw_params(spec: SyntheticSpec, index: int) -> ShapeParams:
    """Parameters of shape `index`, a pure function of (spec, index)."""
    rng = rng_for(spec.seed, spec.family, index)
    size = float(rng.uniform(*spec.size)) * CANVAS_SIDE
    phi = float(rng.uniform(*spec.rotation))
    # keep the whole rotated shape inside the canvas
    extent = size * (abs(np.cos(phi)) + abs(np.sin(phi)))
    room = max(CANVAS_SIDE - extent, 0.0)
    off = rng.uniform(spec.offset[0], spec.offset[1], 2)
    center = (room * off - room / 2.0) if room > 0 else np.zeros(2)
    stroke = float(rng.uniform(*spec.stroke)) * size
    return ShapeParams(spec.family, size, (float(center[0]), float(center[1])), stroke, phi)


def shape_rects(p: ShapeParams) -> list:
    """Disjoint axis-aligned rectangles (x0, y0, w, h) covering the shape,
    centered at the origin before rotation/translation.  Rings are not
    rectangle-decomposable and are handled separately."""
    a, t = p.size, p.stroke
    if p.family == "squares":
        return [(-a / 2, -a / 2, a, a)]
    if p.family == "bars":
        return [(-a / 2, -t / 2, a, t)]
    if p.family == "crosses":
        arm = (a - t) / 2
        return [
            (-t / 2, -a / 2, t, a),  # vertical bar, full height
            (-a / 2, -t / 2, arm, t),  # left arm
            (t / 2, -t / 2, arm, t),  # right arm
        ]
    raise DataError(f"no rectangle decomposition for family {p.family!r}")


def _place(pts: np.ndarray, p: ShapeParams) -> np.ndarray:
    if p.rotation != 0.0:
        c, s = np.cos(p.rotation), np.sin(p.rotation)
        pts = pts @ np.array([[c, s], [-s, c]])
    return pts + np.asarray(p.center)


def sample_shape(p: ShapeParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points uniform over the shape's area.  Draw order is fixed:
    region choices first, then the per-point offsets."""
    if p.family == "rings":
        r_out = p.size / 2.0
        r_in = r_out - p.stroke / 2.0
        u = rng.random(n)
        v = rng.random(n)
        theta = 2.0 * np.pi * u
        r = np.sqrt(r_in * r_in + (r_out * r_out - r_in * r_in) * v)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        return _place(pts, p)
    rects = shape_rects(p)
    areas = np.array([w * h for _, _, w, h in rects])
    cum = np.cumsum(areas / areas.sum())
    which = np.searchsorted(cum, rng.random(n), side="right").clip(0, len(rects) - 1)
    uv = rng.random((n, 2))
    base = np.array([(x0, y0) for x0, y0, _, _ in rects])
    wh = np.array([(w, h) for _, _, w, h in rects])
    pts = base[which] + uv * wh[which]
    return _place(pts, p)


def sample_shape_dense(p: ShapeParams, n: int, rng: np.random.Generator) -> np.ndarray:
    """n points with stratified coverage (jittered grid per region), the
    desk-scale stand-in for evenly-spread dense ground truth."""
    if p.family == "rings":
        r_out = p.size / 2.0
        r_in = r_out - p.stroke / 2.0
        cells = _grid(1.0, 1.0, n, rng)  # unit square strata on (theta, r^2)
        theta = 2.0 * np.pi * cells[:, 0]
        r = np.sqrt(r_in * r_in + (r_out * r_out - r_in * r_in) * cells[:, 1])
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        return _place(pts, p)
    rects = shape_rects(p)
    areas = np.array([w * h for _, _, w, h in rects])
    counts = _largest_remainder(areas / areas.sum(), n)
    parts = []
    for (x0, y0, w, h), k in zip(rects, counts):
        if k == 0:
            continue
        cells = _grid(w, h, int(k), rng)
        parts.append(np.array([x0, y0]) + cells * np.array([w, h]))
    return _place(np.concatenate(parts, axis=0), p)


def _largest_remainder(weights: np.ndarray, total: int) -> np.ndarray:
    raw = weights * total
    counts = np.floor(raw).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _grid(w: float, h: float, k: int, rng: np.random.Generator) -> np.ndarray:
    """k jittered unit-square samples stratified on a near-square grid of a
    w:h region; excess cells are dropped by a seeded shuffle."""
    cols = max(1, int(round(np.sqrt(k * w / max(h, 1e-12)))))
    rows = max(1, -(-k // cols))
    ij = np.stack(np.meshgrid(np.arange(cols), np.arange(rows), indexing="ij"), axis=-1).reshape(-1, 2)
    keep = rng.permutation(ij.shape[0])[:k]
    jitter = rng.random((k, 2))
    return (ij[keep] + jitter) / np.array([cols, rows])


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestEntry:
    domain: str  # "x" or "y"
    id: str
    split: str  # "train" or "test"
    path: str  # relative to the manifest's directory


@dataclass
class DatasetManifest:
    meta: dict = field(default_factory=dict)
    entries: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def validate(self) -> None:
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise DataError("manifest ids are not unique")
        by_domain: dict = {}
        for e in self.entries:
            if e.domain not in ("x", "y"):
                raise DataError(f"bad domain tag {e.domain!r} on {e.id}")
            if e.split not in ("train", "test"):
                raise DataError(f"bad split tag {e.split!r} on {e.id}")
            by_domain.setdefault(e.domain, set()).add(e.path)
        shared = by_domain.get("x", set()) & by_domain.get("y", set())
        if shared:
            raise DataError(f"files listed in both domains: {sorted(shared)[:3]}")

    def domain_entries(self, domain: str, split: str | None = None) -> list:
        return [e for e in self.entries if e.domain == domain and (split is None or e.split == split)]

    def save(self, path) -> None:
        self.validate()
        lines = ["# point-cloud dataset manifest v1"]
        for k in sorted(self.meta):
            lines.append(f"#k {k} {self.meta[k]}")
        for w in self.warnings:
            lines.append(f"#! {w}")
        for e in self.entries:
            lines.append(f"{e.domain}\t{e.id}\t{e.split}\t{e.path}")
        with open(path, "w") as fh:
            fh.write("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        man = cls()
        with open(path) as fh:
            first = fh.readline().rstrip("\n")
            if first != "# point-cloud dataset manifest v1":
                raise DataError(f"{path}: not a manifest ({first!r})")
            for raw in fh:
                line = raw.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#k "):
                    _, k, v = line.split(" ", 2)
                    man.meta[k] = v
                elif line.startswith("#! "):
                    man.warnings.append(line[3:])
                elif line.startswith("#"):
                    continue
                else:
                    parts = line.split("\t")
                    if len(parts) != 4:
                        raise DataError(f"{path}: malformed row {line!r}")
                    man.entries.append(ManifestEntry(*parts))
        man.validate()
        return man


def _write_with_checksum(path, cloud: np.ndarray) -> None:
    write_cloud(path, cloud)
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    with open(str(path) + ".sha256", "w") as fh:
        fh.write(f"{digest}  {os.path.basename(str(path))}\n")


def load_cloud_checked(path) -> np.ndarray:
    """Read one cached cloud, verifying its checksum sidecar."""
    side = str(path) + ".sha256"
    try:
        with open(side) as fh:
            want = fh.read().split()[0]
    except OSError as exc:
        raise DataError(f"missing checksum sidecar {side}") from exc
    with open(path, "rb") as fh:
        got = hashlib.sha256(fh.read()).hexdigest()
    if got != want:
        raise DataError(f"checksum mismatch for {path}")
    return read_cloud(path)


def load_clouds(manifest: DatasetManifest, root, domain: str, split: str | None = None) -> tuple:
    """(ids, clouds (N, n, d)) for one domain, checksums verified."""
    entries = manifest.domain_entries(domain, split)
    if not entries:
        raise DataError(f"no entries for domain {domain!r} split {split!r}")
    clouds = [load_cloud_checked(os.path.join(root, e.path)) for e in entries]
    return [e.id for e in entries], np.stack(clouds)


def load_dense_clouds(manifest: DatasetManifest, root, domain: str, split: str | None = None) -> np.ndarray:
    entries = manifest.domain_entries(domain, split)
    if not entries:
        raise DataError(f"no entries for domain {domain!r} split {split!r}")
    paths = [os.path.join(root, _dense_path(e.path)) for e in entries]
    return np.stack([load_cloud_checked(p) for p in paths])


def _dense_path(path: str) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}_dense{ext}"


# ---------------------------------------------------------------------------
# generation and ingestion


def gen_synthetic(
    spec_x: SyntheticSpec,
    spec_y: SyntheticSpec,
    out_dir,
    n: int = 128,
    dense_factor: int = 8,
) -> DatasetManifest:
    """Two unpaired domains drawn from a shared attribute model (size and
    position distributions) but different families.  Writes one sparse and
    one dense cloud per shape plus the manifest; a rerun with the same
    specs reproduces every file byte for byte."""
    for spec in (spec_x, spec_y):
        spec.validate()
    os.makedirs(os.path.join(out_dir, "clouds"), exist_ok=True)
    man = DatasetManifest(
        meta={
            "n": str(n),
            "dense_factor": str(dense_factor),
            "normalized": "0",
            "seed_x": str(spec_x.seed),
            "seed_y": str(spec_y.seed),
            "family_x": spec_x.family,
            "family_y": spec_y.family,
        }
    )
    for domain, spec in (("x", spec_x), ("y", spec_y)):
        for i in range(spec.count):
            params = draw_params(spec, i)
            cid = f"{domain}_{spec.family}_{i:05d}"
            sparse = sample_shape(params, n, rng_for(spec.seed, spec.family, i, "pts"))
            dense = sample_shape_dense(params, n * dense_factor, rng_for(spec.seed, spec.family, i, "dense"))
            rel = f"clouds/{cid}.txt"
            _write_with_checksum(os.path.join(out_dir, rel), sparse)
            _write_with_checksum(os.path.join(out_dir, _dense_path(rel)), dense)
            man.entries.append(ManifestEntry(domain, cid, "train", rel))
    man.save(os.path.join(out_dir, "manifest.txt"))
    return man


def ingest_masks(mask_dir, out_dir, n: int = 2048, seed: int = 0) -> DatasetManifest:
    """Sample binary PGM masks into cached, normalized clouds.

    Expects `x/` and `y/` subdirectories of masks.  Masks should arrive
    pre-normalized to a 248 px longest bounding-box edge inside a 256 px
    frame; files off by more than 2 px are still ingested but get a
    warning line in the manifest."""
    for sub in ("x", "y"):
        if not os.path.isdir(os.path.join(mask_dir, sub)):
            raise DataError(f"expected mask subdirectory {os.path.join(mask_dir, sub)}")
    os.makedirs(os.path.join(out_dir, "clouds"), exist_ok=True)
    man = DatasetManifest(meta={"n": str(n), "normalized": "1", "seed": str(seed), "source": str(mask_dir)})
    for domain in ("x", "y"):
        names = sorted(f for f in os.listdir(os.path.join(mask_dir, domain)) if f.lower().endswith(".pgm"))
        if not names:
            raise DataError(f"no .pgm masks under {os.path.join(mask_dir, domain)}")
        for name in names:
            mask = read_pgm(os.path.join(mask_dir, domain, name))
            edge = max(mask_bbox_edges(mask))
            cid = f"{domain}_{os.path.splitext(name)[0]}"
            if abs(edge - 248) > 2:
                man.warnings.append(f"{cid}: longest bbox edge {edge} px, expected 248 +- 2")
            pts = sample_mask(mask, n=n, seed=int(rng_for(seed, "ingest", cid).integers(2**31)))
            rel = f"clouds/{cid}.txt"
            _write_with_checksum(os.path.join(out_dir, rel), pts)
            man.entries.append(ManifestEntry(domain, cid, "train", rel))
    man.save(os.path.join(out_dir, "manifest.txt"))
    return man


def split(manifest: DatasetManifest, test_fraction: float, seed: int) -> DatasetManifest:
    """Deterministic per-domain shuffled split; both sides stay non-empty."""
    if not (0 < test_fraction < 1):
        raise DataError(f"test fraction must be in (0, 1), got {test_fraction}")
    out = DatasetManifest(meta=dict(manifest.meta), warnings=list(manifest.warnings))
    out.meta["test_fraction"] = repr(float(test_fraction))
    out.meta["split_seed"] = str(seed)
    for domain in ("x", "y"):
        entries = manifest.domain_entries(domain)
        if not entries:
            raise DataError(f"domain {domain!r} is empty")
        if len(entries) == 1:
            raise DataError(f"domain {domain!r} has a single entry and cannot be split")
        order = rng_for(seed, "split", domain).permutation(len(entries))
        n_test = min(max(1, round(test_fraction * len(entries))), len(entries) - 1)
        test_idx = set(order[:n_test].tolist())
        for j, e in enumerate(entries):
            out.entries.append(replace_split(e, "test" if j in test_idx else "train"))
    out.entries.sort(key=lambda e: e.id)
    return out


def replace_split(entry: ManifestEntry, split_tag: str) -> ManifestEntry:
    return ManifestEntry(entry.domain, entry.id, split_tag, entry.path)
