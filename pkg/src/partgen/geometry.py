"""Point-cloud and segmentation-mask primitives.

Everything here is plain numpy and purely functional: inputs are never
mutated, randomness comes in through an explicit ``numpy.random.Generator``,
so all operations are safe to call from concurrent workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

Bounds = tuple[np.ndarray, np.ndarray]

UNIT_BOUNDS: Bounds = (np.full(3, -1.0), np.full(3, 1.0))


class DegenerateCloudError(ValueError):
    """Raised when a cloud collapses to a single location (zero scale)."""


@dataclass
class PointCloud:
    """n x 3 coordinates in normalized model units."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim != 2 or pts.shape[1] != 3:
            raise ValueError(f"points must be n x 3, got {pts.shape}")
        if pts.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        self.points = pts

    @property
    def n(self) -> int:
        return self.points.shape[0]


@dataclass
class SegmentationEncoding:
    """n x c part mask: one-hot rows when labeled, all zeros when not."""

    mask: np.ndarray
    labeled: bool = True

    def __post_init__(self):
        mask = np.asarray(self.mask)
        if mask.ndim != 2:
            raise ValueError(f"mask must be n x c, got shape {mask.shape}")
        if mask.shape[1] < 2:
            raise ValueError("part count c must be >= 2")
        if not np.isin(mask, (0, 1)).all():
            raise ValueError("mask entries must be 0 or 1")
        row_sums = mask.sum(axis=1)
        if self.labeled:
            if not np.all(row_sums == 1):
                raise ValueError("labeled mask rows must sum to exactly 1")
        else:
            if mask.any():
                raise ValueError("unlabeled mask must be all zeros")
        self.mask = mask

    @property
    def n(self) -> int:
        return self.mask.shape[0]

    @property
    def c(self) -> int:
        return self.mask.shape[1]

    def part_indices(self) -> np.ndarray:
        """Per-point part index; only meaningful for labeled masks."""
        return self.mask.argmax(axis=1)


def one_hot_mask(labels: np.ndarray, c: int) -> SegmentationEncoding:
    """Build a labeled encoding from an integer label vector."""
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= c:
        raise ValueError("labels out of range for part count")
    mask = np.zeros((labels.shape[0], c), dtype=np.uint8)
    mask[np.arange(labels.shape[0]), labels] = 1
    return SegmentationEncoding(mask=mask, labeled=True)


@dataclass
class PartDistribution:
    """Per-part point fractions; the global conditioning signal."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.ndim != 1:
            raise ValueError("sigma must be a length-c vector")
        if (sigma < 0).any() or (sigma > 1).any():
            raise ValueError("sigma entries must be in [0, 1]")
        self.sigma = sigma


@dataclass
class PartVoxelGrid:
    """Per-part boolean occupancy grids over a shared axis-aligned box."""

    resolution: int
    occupancy: np.ndarray  # (c, r, r, r) bool
    bounds: Bounds

    def __post_init__(self):
        occ = np.asarray(self.occupancy, dtype=bool)
        r = self.resolution
        if occ.ndim != 4 or occ.shape[1:] != (r, r, r):
            raise ValueError("occupancy must have shape (c, r, r, r)")
        self.occupancy = occ
        lo, hi = self.bounds
        self.bounds = (np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64))

    @property
    def c(self) -> int:
        return self.occupancy.shape[0]


@dataclass
class TdaConfig:
    """Ranges for the traditional augmentation chain (rescale/translate/jitter/flip)."""

    rescale_range: tuple[float, float] = (0.8, 1.2)
    translate_range: tuple[float, float] = (-0.1, 0.1)
    jitter_range: tuple[float, float] = (-0.005, 0.005)
    flip_enabled: bool = True
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("rescale_range", "translate_range", "jitter_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be an ordered pair, got ({lo}, {hi})")


@dataclass
class NormalizationTransform:
    """Record of a centroid/scale normalization; invert() restores the input."""

    centroid: np.ndarray
    scale: float

    def invert(self, cloud: PointCloud) -> PointCloud:
        return PointCloud(cloud.points * self.scale + self.centroid)

    def apply(self, cloud: PointCloud) -> PointCloud:
        return PointCloud((cloud.points - self.centroid) / self.scale)


def normalize_cloud(cloud: PointCloud) -> tuple[PointCloud, NormalizationTransform]:
    """Center at the centroid and scale the max radius to 1.

    Raises DegenerateCloudError when all points coincide (zero scale).
    """
    pts = cloud.points.astype(np.float64)
    centroid = pts.mean(axis=0)
    centered = pts - centroid
    scale = float(np.sqrt((centered ** 2).sum(axis=1)).max())
    if scale == 0.0:
        raise DegenerateCloudError("all points identical, cannot normalize")
    out = centered / scale
    if cloud.points.dtype == np.float32:
        out = out.astype(np.float32)
    return PointCloud(out), NormalizationTransform(centroid=centroid, scale=scale)


def part_distribution(mask: SegmentationEncoding) -> PartDistribution:
    """Fraction of points per part; all zeros for an unlabeled mask."""
    if not mask.labeled:
        return PartDistribution(np.zeros(mask.c, dtype=np.float64))
    counts = mask.mask.sum(axis=0).astype(np.float64)
    return PartDistribution(counts / mask.n)


def _quantize(points: np.ndarray, resolution: int, bounds: Bounds) -> np.ndarray:
    """Map points to integer voxel indices, clamping out-of-bounds points."""
    lo, hi = bounds
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    if (hi <= lo).any():
        raise ValueError("bounds must satisfy lo < hi per axis")
    rel = (points.astype(np.float64) - lo) / (hi - lo)
    idx = np.floor(rel * resolution).astype(np.int64)
    return np.clip(idx, 0, resolution - 1)


def voxelize_per_part(
    cloud: PointCloud,
    mask: SegmentationEncoding,
    resolution: int = 32,
    bounds: Bounds = UNIT_BOUNDS,
) -> PartVoxelGrid:
    """Occupancy grid per part: a voxel is set iff a point of that part lands in it."""
    if not mask.labeled:
        raise ValueError("per-part voxelization needs a labeled mask")
    if mask.n != cloud.n:
        raise ValueError("cloud and mask point counts differ")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    idx = _quantize(cloud.points, resolution, bounds)
    parts = mask.part_indices()
    occ = np.zeros((mask.c, resolution, resolution, resolution), dtype=bool)
    occ[parts, idx[:, 0], idx[:, 1], idx[:, 2]] = True
    lo, hi = bounds
    return PartVoxelGrid(resolution=resolution, occupancy=occ, bounds=(lo, hi))


def per_part_voxel_iou(a: PartVoxelGrid, b: PartVoxelGrid) -> tuple[np.ndarray, float]:
    """Per-part voxel IoU plus the mean over parts with a non-empty union.

    Parts empty in both grids are excluded from the mean and reported as NaN;
    a part empty in exactly one grid contributes IoU 0.
    """
    if a.resolution != b.resolution:
        raise ValueError("grids must share resolution")
    if a.c != b.c:
        raise ValueError("grids must share part count")
    if not (np.array_equal(a.bounds[0], b.bounds[0]) and np.array_equal(a.bounds[1], b.bounds[1])):
        raise ValueError("grids must share bounds")
    inter = np.logical_and(a.occupancy, b.occupancy).sum(axis=(1, 2, 3))
    union = np.logical_or(a.occupancy, b.occupancy).sum(axis=(1, 2, 3))
    present = union > 0
    if not present.any():
        raise ValueError("all parts empty in both grids, mIoU undefined")
    iou = np.full(a.c, np.nan)
    iou[present] = inter[present] / union[present]
    return iou, float(iou[present].mean())


def point_label_miou(pred: SegmentationEncoding, gt: SegmentationEncoding) -> float:
    """Point-level mIoU over the union of parts present in either mask."""
    if not (pred.labeled and gt.labeled):
        raise ValueError("both masks must be labeled")
    if pred.mask.shape != gt.mask.shape:
        raise ValueError(f"mask shapes differ: {pred.mask.shape} vs {gt.mask.shape}")
    p = pred.mask.astype(bool)
    g = gt.mask.astype(bool)
    inter = np.logical_and(p, g).sum(axis=0)
    union = np.logical_or(p, g).sum(axis=0)
    present = union > 0
    return float((inter[present] / union[present]).mean())


def apply_tda(cloud: PointCloud, cfg: TdaConfig, rng: np.random.Generator) -> PointCloud:
    """Random rescale, translate, jitter and per-axis flip; geometry only."""
    pts = cloud.points.astype(np.float64)
    scale = rng.uniform(*cfg.rescale_range)
    pts = pts * scale
    pts = pts + rng.uniform(*cfg.translate_range, size=3)
    pts = pts + rng.uniform(*cfg.jitter_range, size=pts.shape)
    if cfg.flip_enabled:
        signs = np.where(rng.random(3) < 0.5, -1.0, 1.0)
        pts = pts * signs
    if cloud.points.dtype == np.float32:
        pts = pts.astype(np.float32)
    return PointCloud(pts)


# --- serialization helpers (test fixtures and offline inspection) ---


def write_labeled_ply(path, cloud: PointCloud, mask: SegmentationEncoding) -> None:
    """ASCII PLY with per-vertex x,y,z floats and a uchar part index."""
    if mask.n != cloud.n:
        raise ValueError("cloud and mask point counts differ")
    parts = mask.part_indices()
    with open(path, "w") as f:
        f.write("ply\nformat ascii 1.0\n")
        f.write(f"element vertex {cloud.n}\n")
        f.write("property float x\nproperty float y\nproperty float z\n")
        f.write("property uchar part\n")
        f.write("end_header\n")
        for p, k in zip(cloud.points, parts):
            f.write(f"{p[0]:.8g} {p[1]:.8g} {p[2]:.8g} {int(k)}\n")


def read_labeled_ply(path, c: int | None = None) -> tuple[PointCloud, SegmentationEncoding]:
    """Read back the labeled PLY format written by write_labeled_ply."""
    with open(path) as f:
        header = []
        for line in f:
            header.append(line.strip())
            if line.strip() == "end_header":
                break
        n = next(int(h.split()[-1]) for h in header if h.startswith("element vertex"))
        pts = np.empty((n, 3), dtype=np.float32)
        labels = np.empty(n, dtype=np.int64)
        for i in range(n):
            x, y, z, k = f.readline().split()
            pts[i] = (float(x), float(y), float(z))
            labels[i] = int(k)
    if c is None:
        c = int(labels.max()) + 1
    return PointCloud(pts), one_hot_mask(labels, c)


def grid_to_rle_text(grid: PartVoxelGrid) -> str:
    """Flat run-length encoding of the occupancy grids, for test fixtures."""
    lo, hi = grid.bounds
    lines = [
        f"resolution {grid.resolution} parts {grid.c}",
        "bounds " + " ".join(f"{v:.17g}" for v in np.concatenate([lo, hi])),
    ]
    flat = grid.occupancy.reshape(-1).astype(np.uint8)
    runs = []
    start = 0
    for i in range(1, flat.size + 1):
        if i == flat.size or flat[i] != flat[start]:
            runs.append(f"{i - start}x{int(flat[start])}")
            start = i
    lines.append(" ".join(runs))
    return "\n".join(lines) + "\n"


def grid_from_rle_text(text: str) -> PartVoxelGrid:
    lines = text.strip().split("\n")
    _, r, _, c = lines[0].split()
    r, c = int(r), int(c)
    vals = [float(v) for v in lines[1].split()[1:]]
    lo, hi = np.array(vals[:3]), np.array(vals[3:])
    flat = np.empty(c * r * r * r, dtype=bool)
    pos = 0
    for run in lines[2].split():
        count, val = run.split("x")
        count = int(count)
        flat[pos : pos + count] = bool(int(val))
        pos += count
    if pos != flat.size:
        raise ValueError(f"run-length data covers {pos} voxels, expected {flat.size}")
    return PartVoxelGrid(resolution=r, occupancy=flat.reshape(c, r, r, r), bounds=(lo, hi))
