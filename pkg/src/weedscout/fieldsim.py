"""Field synthesis and sensing models.

A field is an M x M cell grid holding point targets ("weeds") at continuous
positions. This module generates fields with configurable clustering, renders
them to binary grids, and simulates the two imperfect information sources the
search agent sees: a per-step camera detection inside the field of view and a
once-per-episode coarse prior map.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .rng import RngStream


def config_fingerprint(cfg) -> str:
    """Short stable hash of a config dataclass, for tagging result files."""
    d = dataclasses.asdict(cfg)
    blob = json.dumps(d, sort_keys=True, default=float).encode()
    return hashlib.sha256(blob).hexdigest()[:16]

# Cluster covariance presets, from tight anisotropic clumps ("strong") to
# broad overlapping blobs ("medium"). Cluster i uses set[i % len(set)].
STRONG_COVARIANCES = (
    ((5.0, 8.0), (8.0, 15.0)),
    ((15.0, 0.0), (0.0, 5.0)),
)
MEDIUM_COVARIANCES = (
    ((10.0, 16.0), (16.0, 40.0)),
    ((40.0, 0.0), (0.0, 10.0)),
    ((30.0, 12.0), (12.0, 12.0)),
    ((15.0, 4.0), (4.0, 20.0)),
)
MEDIUM_CLUSTER_COUNT = (4.0, 1.0)

FIELD_KINDS = ("strong", "medium", "uniform")


def round_count(x: float) -> int:
    """Round a non-negative expected count half-up to an int."""
    return int(math.floor(x + 0.5))


@dataclass
class FieldConfig:
    """Distribution parameters for synthetic weed fields."""

    size: int = 48
    kind: str = "strong"
    weed_count_mean: float = 100.0
    weed_count_std: float = 30.0
    cluster_count_mean: float = 3.0
    cluster_count_std: float = 2.0
    cluster_covariances: tuple = STRONG_COVARIANCES

    def validate(self) -> None:
        if self.size < 1:
            raise ValueError(f"field.size must be >= 1, got {self.size}")
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"field.kind must be one of {FIELD_KINDS}, got {self.kind!r}")
        if self.weed_count_std < 0 or self.cluster_count_std < 0:
            raise ValueError("field count stds must be >= 0")
        if self.kind != "uniform" and len(self.cluster_covariances) == 0:
            raise ValueError("clustered fields need at least one covariance")


@dataclass
class Field:
    """Ground truth: weed positions (row, col) in [0, size)^2 and cluster ids."""

    size: int
    positions: np.ndarray  # (n, 2) float64, continuous (row, col)
    clusters: np.ndarray   # (n,) int, -1 for uniform placement
    kind: str = "strong"
    seed: int = -1

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        self.clusters = np.asarray(self.clusters, dtype=int).reshape(-1)
        # cached integer cells, used by the detection model every step
        self.cells = np.floor(self.positions).astype(int)

    @property
    def n_weeds(self) -> int:
        return len(self.positions)


def generate_field(cfg: FieldConfig, rng: RngStream) -> Field:
    """Draw one field from the configured distribution.

    Weed count n ~ max(0, round(N(mean, std))); uniform fields place n weeds
    in distinct cells, clustered fields draw k ~ max(1, round(N(...))) cluster
    means uniform over the field, give each cluster a uniformly chosen
    covariance from the configured set, and assign each weed to a uniformly
    chosen cluster. Cluster samples falling outside the field are redrawn,
    not clipped.
    """
    cfg.validate()
    m = cfg.size
    n = max(0, round_count(rng.normal(cfg.weed_count_mean, cfg.weed_count_std)))
    if cfg.kind == "uniform":
        n = min(n, m * m)
        flat = rng.choice_without_replacement(m * m, n)
        rows, cols = np.divmod(flat, m)
        pos = np.stack([rows + 0.5, cols + 0.5], axis=1)
        return Field(m, pos, np.full(n, -1), kind=cfg.kind, seed=rng.seed)

    k = max(1, round_count(rng.normal(cfg.cluster_count_mean, cfg.cluster_count_std)))
    means = rng.uniform(0.0, m, (k, 2))
    assign = rng.integers(0, k, n) if n > 0 else np.zeros(0, dtype=int)
    covs = [np.asarray(c, dtype=float) for c in cfg.cluster_covariances]
    cov_pick = rng.integers(0, len(covs), k)
    pos = np.zeros((n, 2))
    for ci in range(k):
        idx = np.flatnonzero(assign == ci)
        if len(idx) == 0:
            continue
        cov = covs[int(cov_pick[ci])]
        samples = rng.mvn2(means[ci], cov, size=len(idx))
        for _ in range(10_000):
            bad = np.flatnonzero(
                (samples[:, 0] < 0) | (samples[:, 0] >= m) | (samples[:, 1] < 0) | (samples[:, 1] >= m)
            )
            if len(bad) == 0:
                break
            samples[bad] = rng.mvn2(means[ci], cov, size=len(bad))
        else:
            raise RuntimeError("rejection sampling failed to place cluster weeds in the field")
        pos[idx] = samples
    return Field(m, pos, assign, kind=cfg.kind, seed=rng.seed)


def rasterize(field: Field, row0: int = 0, col0: int = 0, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Binary occupancy grid of a cell rectangle (clipped to the field)."""
    height = field.size if height is None else height
    width = field.size if width is None else width
    grid = np.zeros((height, width))
    if field.n_weeds == 0:
        return grid
    r = field.cells[:, 0] - row0
    c = field.cells[:, 1] - col0
    ok = (r >= 0) & (r < height) & (c >= 0) & (c < width)
    grid[r[ok], c[ok]] = 1.0
    return grid


@dataclass
class DetectionConfig:
    """Camera error model: per-weed miss rate, clutter rate, position noise."""

    false_positive_rate: float = 0.0001
    false_negative_rate: float = 0.05
    position_noise_std: float = 0.05

    def validate(self) -> None:
        if not 0 <= self.false_negative_rate <= 1:
            raise ValueError("detection.false_negative_rate must be in [0, 1]")
        if self.false_positive_rate < 0 or self.position_noise_std < 0:
            raise ValueError("detection rates must be >= 0")


def simulate_detection_map(
    field: Field,
    center_row: int,
    center_col: int,
    fov_size: int,
    cfg: DetectionConfig,
    rng: RngStream,
) -> tuple[np.ndarray, np.ndarray]:
    """One camera frame at the given FoV center.

    Returns (binary F x F detection map, ids of true weeds that survived the
    miss filter). Surviving weeds are reported at their true position plus
    per-axis N(0, sigma) noise, clipped to the FoV border; round(fp * F^2)
    clutter detections land uniformly in the FoV. The survivor ids drive
    reward and recall accounting; the map is what the agent observes.
    """
    h = fov_size // 2
    r0, c0 = center_row - h, center_col - h
    det = np.zeros((fov_size, fov_size))

    visible = np.flatnonzero(
        (field.cells[:, 0] >= r0)
        & (field.cells[:, 0] < r0 + fov_size)
        & (field.cells[:, 1] >= c0)
        & (field.cells[:, 1] < c0 + fov_size)
    )
    if len(visible) > 0:
        u = rng.uniform(size=len(visible))
        visible = visible[u >= cfg.false_negative_rate]
    if len(visible) > 0:
        reported = field.positions[visible]
        if cfg.position_noise_std > 0:
            reported = reported + rng.normal(0.0, cfg.position_noise_std, (len(visible), 2))
        cells = np.floor(reported).astype(int)
        cells[:, 0] = np.clip(cells[:, 0] - r0, 0, fov_size - 1)
        cells[:, 1] = np.clip(cells[:, 1] - c0, 0, fov_size - 1)
        det[cells[:, 0], cells[:, 1]] = 1.0

    n_fp = round_count(cfg.false_positive_rate * fov_size * fov_size)
    if n_fp > 0:
        fp = rng.integers(0, fov_size, (n_fp, 2))
        det[fp[:, 0], fp[:, 1]] = 1.0
    return det, visible


@dataclass
class PriorConfig:
    """Pre-flight survey model: a coarse, error-laden weed density map.

    resolution is the nominal block grid (0 disables the prior entirely,
    "full" resolves to the field size, i.e. cell-exact).
    """

    resolution: int = 12
    false_positive_rate: float = 0.001
    false_negative_rate: float = 0.20
    position_noise_std: float = 0.5

    def validate(self, field_size: int | None = None) -> None:
        if self.resolution < 0:
            raise ValueError("prior.resolution must be >= 0")
        if not 0 <= self.false_negative_rate <= 1:
            raise ValueError("prior.false_negative_rate must be in [0, 1]")
        if self.false_positive_rate < 0 or self.position_noise_std < 0:
            raise ValueError("prior rates must be >= 0")
        if field_size is not None and self.resolution > field_size:
            raise ValueError(
                f"prior.resolution must be <= field size {field_size}, got {self.resolution}"
            )


def generate_prior_map(field: Field, cfg: PriorConfig, rng: RngStream) -> np.ndarray:
    """Survey the field once, returning an M x M map with values in [0, 1].

    Pipeline: drop round(fn * n) true weeds, add round(fp * M^2) spurious
    reports, jitter every reported position by per-axis N(0, sigma) clipped
    into the field, rasterize, average-pool with kernel floor(M / resolution),
    then nearest-upsample back to M x M. resolution=0 yields an all-zero map.
    """
    m = field.size
    if cfg.resolution == 0:
        return np.zeros((m, m))

    pos = field.positions
    n_remove = round_count(cfg.false_negative_rate * field.n_weeds)
    if n_remove > 0:
        drop = rng.choice_without_replacement(field.n_weeds, n_remove)
        keep = np.setdiff1d(np.arange(field.n_weeds), drop)
        pos = pos[keep]
    n_add = round_count(cfg.false_positive_rate * m * m)
    if n_add > 0:
        pos = np.concatenate([pos, rng.uniform(0.0, m, (n_add, 2))], axis=0)
    if len(pos) > 0 and cfg.position_noise_std > 0:
        pos = pos + rng.normal(0.0, cfg.position_noise_std, pos.shape)
    pos = np.clip(pos, 0.0, np.nextafter(float(m), 0.0))

    raster = np.zeros((m, m))
    if len(pos) > 0:
        cells = np.floor(pos).astype(int)
        raster[cells[:, 0], cells[:, 1]] = 1.0
    kernel = m // cfg.resolution
    return nearest_upsample(avg_pool(raster, kernel), m, m)


def avg_pool(grid: np.ndarray, kernel: int) -> np.ndarray:
    """Average-pool with a square kernel, edge-replicating to the next multiple.

    Output size is ceil(side / kernel) per axis. Works on (H, W) or stacked
    (C, H, W) input.
    """
    if kernel < 1:
        raise ValueError(f"pool kernel must be >= 1, got {kernel}")
    if kernel == 1:
        return grid.copy()
    squeeze = grid.ndim == 2
    g = grid[None] if squeeze else grid
    c, h, w = g.shape
    ph = (-h) % kernel
    pw = (-w) % kernel
    if ph or pw:
        g = np.pad(g, ((0, 0), (0, ph), (0, pw)), mode="edge")
    # Accumulate the kernel offsets in row-major order so every output cell
    # sums its window sequentially; a naive per-window loop reproduces the
    # result bit for bit.
    out = np.zeros((c, (h + ph) // kernel, (w + pw) // kernel), dtype=g.dtype)
    for di in range(kernel):
        for dj in range(kernel):
            out += g[:, di::kernel, dj::kernel]
    out /= kernel * kernel
    return out[0] if squeeze else out


def nearest_upsample(grid: np.ndarray, height: int, width: int) -> np.ndarray:
    """Nearest-neighbor resize: out[i, j] = grid[i * h // height, j * w // width]."""
    h, w = grid.shape
    if height < h or width < w:
        raise ValueError("nearest_upsample only enlarges")
    ri = np.arange(height) * h // height
    ci = np.arange(width) * w // width
    return grid[np.ix_(ri, ci)]


def save_field(path, field: Field) -> None:
    """Write the plain-text field format: header comments, then x y cluster rows."""
    lines = [
        "# weedscout-field v1",
        f"# size={field.size}",
        f"# seed={field.seed}",
        f"# kind={field.kind}",
        "# columns: x y cluster  (x = column coordinate, y = row coordinate)",
    ]
    for (r, c), cl in zip(field.positions, field.clusters):
        lines.append(f"{c:.6f} {r:.6f} {cl}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_field(path) -> Field:
    meta = {}
    pos = []
    clusters = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                body = line[1:].strip()
                if "=" in body and " " not in body.split("=")[0]:
                    key, val = body.split("=", 1)
                    meta[key.strip()] = val.strip()
                continue
            x, y, cl = line.split()
            pos.append((float(y), float(x)))
            clusters.append(int(cl))
    if "size" not in meta:
        raise ValueError(f"{path}: missing '# size=' header")
    return Field(
        int(meta["size"]),
        np.array(pos).reshape(-1, 2),
        np.array(clusters, dtype=int),
        kind=meta.get("kind", "strong"),
        seed=int(meta.get("seed", -1)),
    )
