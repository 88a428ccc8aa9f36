"""Internal cluster validity indices, Freedman-Diaconis binning, unit scaling.

All indices drop noise-labeled points (-1) before computing cluster
statistics. Matrices may be passed as 1-D sequences for toy data; they are
treated as a single column. Distances are Euclidean throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial.distance import cdist
from scipy.stats import norm as _normal

from .data import NOISE

MAX_BETTER = "max-better"
MIN_BETTER = "min-better"

METRIC_IDS = ("SI", "DI", "CHI", "DB", "SDbw_Halkidi", "SDbw_Kim", "SDbw_Tong")

METRIC_ORIENTATION = {
    "SI": MAX_BETTER,
    "DI": MAX_BETTER,
    "CHI": MAX_BETTER,
    "DB": MIN_BETTER,
    "SDbw_Halkidi": MIN_BETTER,
    "SDbw_Kim": MIN_BETTER,
    "SDbw_Tong": MIN_BETTER,
}

_SI_BLOCK_ROWS = 512  # pairwise distances are chunked to bound memory
_MAX_BINS = 4096  # heavy-tailed inputs collapse the FD width; cap the grid


@dataclass(frozen=True)
class MetricScore:
    metric: str
    value: float
    orientation: str = field(default="")

    def __post_init__(self) -> None:
        if self.metric not in METRIC_ORIENTATION:
            raise ValueError(f"unknown metric id {self.metric!r}")
        expected = METRIC_ORIENTATION[self.metric]
        if self.orientation == "":
            object.__setattr__(self, "orientation", expected)
        elif self.orientation != expected:
            raise ValueError(f"{self.metric} orientation is fixed to {expected}")


def _as_matrix(matrix) -> np.ndarray:
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError("matrix must be 1- or 2-dimensional")
    return X


def _clean(matrix, partition) -> tuple[np.ndarray, np.ndarray]:
    """Drop noise points; relabel the rest to 0..k-1."""
    X = _as_matrix(matrix)
    labels = np.asarray(getattr(partition, "labels", partition), dtype=np.int64)
    if labels.size != X.shape[0]:
        raise ValueError("partition length does not match matrix rows")
    mask = labels != NOISE
    X = X[mask]
    labels = labels[mask]
    if labels.size == 0:
        raise ValueError("all points are noise")
    _, labels = np.unique(labels, return_inverse=True)
    return X, labels


def _cluster_stats(X: np.ndarray, labels: np.ndarray):
    k = int(labels.max()) + 1
    sizes = np.bincount(labels, minlength=k)
    centroids = np.zeros((k, X.shape[1]))
    for c in range(k):
        centroids[c] = X[labels == c].mean(axis=0)
    return k, sizes, centroids


def silhouette(matrix, partition) -> float:
    """Mean silhouette over non-noise points; singleton clusters score 0."""
    X, labels = _clean(matrix, partition)
    k = int(labels.max()) + 1
    if k < 2:
        raise ValueError("SI undefined: need at least 2 non-noise clusters")
    n = X.shape[0]
    sizes = np.bincount(labels, minlength=k)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), labels] = 1.0
    sums = np.zeros((n, k))
    for start in range(0, n, _SI_BLOCK_ROWS):
        stop = min(start + _SI_BLOCK_ROWS, n)
        block = cdist(X[start:stop], X)
        sums[start:stop] = block @ onehot
    own = sums[np.arange(n), labels]
    own_size = sizes[labels]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(own_size > 1, own / np.maximum(own_size - 1, 1), 0.0)
        mean_other = sums / sizes[None, :]
        mean_other[np.arange(n), labels] = np.inf
        b = mean_other.min(axis=1)
        denom = np.maximum(a, b)
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s[own_size == 1] = 0.0
    return float(s.mean())


def calinski_harabasz(matrix, partition) -> float:
    """Between/within variance ratio; +inf sentinel when within variance is 0."""
    X, labels = _clean(matrix, partition)
    k, sizes, centroids = _cluster_stats(X, labels)
    n = X.shape[0]
    if k < 2:
        raise ValueError("CHI undefined: need at least 2 non-noise clusters")
    if n <= k:
        raise ValueError("CHI undefined: need more points than clusters")
    mean = X.mean(axis=0)
    between = float(np.sum(sizes * np.sum((centroids - mean) ** 2, axis=1)))
    within = float(np.sum((X - centroids[labels]) ** 2))
    if within == 0.0:
        return math.inf
    return (between / (k - 1)) / (within / (n - k))


def davies_bouldin(matrix, partition) -> float:
    """Mean over clusters of the worst (S_i + S_j) / centroid-distance ratio."""
    X, labels = _clean(matrix, partition)
    k, sizes, centroids = _cluster_stats(X, labels)
    if k < 2:
        raise ValueError("DB undefined: need at least 2 non-noise clusters")
    spread = np.array(
        [float(np.linalg.norm(X[labels == c] - centroids[c], axis=1).mean()) for c in range(k)]
    )
    gaps = cdist(centroids, centroids)
    off = ~np.eye(k, dtype=bool)
    if np.any(gaps[off] == 0.0):
        raise ValueError("zero inter-centroid distance")
    ratio = (spread[:, None] + spread[None, :]) / np.where(off, gaps, np.inf)
    return float(ratio.max(axis=1).mean())


def dunn(matrix, partition, delta: str = "centroid") -> float:
    """Min inter-cluster separation over max cluster diameter.

    Separation is the centroid distance by default (``delta="min"`` switches
    to the single-linkage minimum pointwise distance); the diameter is the
    mean distance to the cluster centroid.
    """
    X, labels = _clean(matrix, partition)
    k, sizes, centroids = _cluster_stats(X, labels)
    if k < 2:
        raise ValueError("DI undefined: need at least 2 non-noise clusters")
    diameters = np.array(
        [float(np.linalg.norm(X[labels == c] - centroids[c], axis=1).mean()) for c in range(k)]
    )
    max_diameter = float(diameters.max())
    if max_diameter == 0.0:
        raise ValueError("all cluster diameters are zero")
    if delta == "centroid":
        gaps = cdist(centroids, centroids)
        separation = float(gaps[~np.eye(k, dtype=bool)].min())
    elif delta == "min":
        separation = math.inf
        for i in range(k):
            for j in range(i + 1, k):
                separation = min(separation, float(cdist(X[labels == i], X[labels == j]).min()))
    else:
        raise ValueError(f"unknown delta mode {delta!r}")
    return separation / max_diameter


def _ball_count(points: np.ndarray, center: np.ndarray, radius: float) -> int:
    return int(np.count_nonzero(np.linalg.norm(points - center, axis=1) <= radius))


def _box_count(points: np.ndarray, center: np.ndarray, half_widths: np.ndarray) -> int:
    inside = np.all(np.abs(points - center) <= half_widths, axis=1)
    return int(np.count_nonzero(inside))


def sdbw(matrix, partition, variant: str = "halkidi", confidence: float = 0.9) -> float:
    """Scatter-plus-density validity index, smaller is better.

    ``halkidi`` is the classic form: unweighted mean of cluster variance-vector
    norms over the data variance norm, plus between-cluster density at centroid
    midpoints with ball radius equal to the mean cluster standard-deviation
    norm. ``kim`` weights the scatter by cluster size and replaces the density
    ball with per-dimension confidence-interval boxes (normal quantile at the
    given confidence). ``tong`` stabilizes the scatter with (n_c - 1)-weighted
    sample variances and takes the maximum ball density over interior points
    of the centroid segment (the margin region).
    """
    if variant not in ("halkidi", "kim", "tong"):
        raise ValueError(f"unknown sdbw variant {variant!r}")
    X, labels = _clean(matrix, partition)
    k, sizes, centroids = _cluster_stats(X, labels)
    n = X.shape[0]
    if k < 2:
        raise ValueError("S-Dbw undefined: need at least 2 non-noise clusters")
    if np.all(sizes == 1):
        raise ValueError("zero variance clusters")
    var_data = X.var(axis=0)
    norm_var_data = float(np.linalg.norm(var_data))
    if norm_var_data == 0.0:
        raise ValueError("zero variance data")
    cluster_var = np.stack([X[labels == c].var(axis=0) for c in range(k)])
    cluster_sd = np.sqrt(cluster_var)
    norm_var = np.linalg.norm(cluster_var, axis=1)
    radius = float(np.linalg.norm(cluster_sd, axis=1).mean())

    if variant == "halkidi":
        scat = float(norm_var.mean()) / norm_var_data
    elif variant == "kim":
        scat = float(np.sum(sizes / n * norm_var)) / norm_var_data
    else:  # tong
        sample_var = np.zeros_like(cluster_var)
        for c in range(k):
            if sizes[c] > 1:
                sample_var[c] = X[labels == c].var(axis=0, ddof=1)
        data_sample_var = X.var(axis=0, ddof=1)
        norm_data_sample = float(np.linalg.norm(data_sample_var))
        weights = np.maximum(sizes - 1, 0) / max(n - k, 1)
        scat = float(np.sum(weights * np.linalg.norm(sample_var, axis=1))) / max(norm_data_sample, 1e-300)

    z = float(_normal.ppf(0.5 + confidence / 2.0))
    dens_sum = 0.0
    for i in range(k):
        points_i = X[labels == i]
        for j in range(k):
            if j == i:
                continue
            points_j = X[labels == j]
            union = np.vstack([points_i, points_j])
            mid = 0.5 * (centroids[i] + centroids[j])
            if variant == "halkidi":
                num = _ball_count(union, mid, radius)
                den = max(_ball_count(union, centroids[i], radius), _ball_count(union, centroids[j], radius))
            elif variant == "kim":
                half_mid = z * 0.5 * (cluster_sd[i] + cluster_sd[j])
                num = _box_count(union, mid, half_mid)
                den = max(
                    _box_count(union, centroids[i], z * cluster_sd[i]),
                    _box_count(union, centroids[j], z * cluster_sd[j]),
                )
            else:  # tong
                num = 0
                for t in (0.25, 0.5, 0.75):
                    probe = centroids[i] + t * (centroids[j] - centroids[i])
                    num = max(num, _ball_count(union, probe, radius))
                den = max(_ball_count(union, centroids[i], radius), _ball_count(union, centroids[j], radius))
            if den > 0:
                dens_sum += num / den
    dens = dens_sum / (k * (k - 1))
    return scat + dens


_METRIC_FUNCS = {
    "SI": silhouette,
    "DI": dunn,
    "CHI": calinski_harabasz,
    "DB": davies_bouldin,
    "SDbw_Halkidi": lambda X, p: sdbw(X, p, variant="halkidi"),
    "SDbw_Kim": lambda X, p: sdbw(X, p, variant="kim"),
    "SDbw_Tong": lambda X, p: sdbw(X, p, variant="tong"),
}


def compute_metric(metric: str, matrix, partition) -> float:
    """Dispatch a metric id to its implementation."""
    try:
        func = _METRIC_FUNCS[metric]
    except KeyError:
        raise ValueError(f"unknown metric id {metric!r}") from None
    return float(func(matrix, partition))


# ---------------------------------------------------------------------------
# Binning and scaling

@dataclass(frozen=True)
class BinnedVector:
    labels: np.ndarray
    edges: np.ndarray

    @property
    def bins(self) -> int:
        return int(self.edges.size - 1)

    def __post_init__(self) -> None:
        edges = np.asarray(self.edges, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise ValueError("edges must be strictly increasing")
        if labels.size and (labels.min() < 0 or labels.max() >= edges.size - 1):
            raise ValueError("labels out of bin range")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "edges", edges)


def fd_bin(values: Sequence[float], lo: float | None = None, hi: float | None = None) -> BinnedVector:
    """Freedman-Diaconis binning: width 2 IQR n^(-1/3), linear-interp quantiles.

    ``lo``/``hi`` override the bin range with group-level bounds so several
    vectors can share one labeling; the width still comes from the vector
    being binned. Zero IQR or a degenerate range collapse to a single bin.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise ValueError("need at least 2 values to bin")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    lo = float(v.min()) if lo is None else float(lo)
    hi = float(v.max()) if hi is None else float(hi)
    q75, q25 = np.percentile(v, [75.0, 25.0])
    iqr = float(q75 - q25)
    if iqr <= 0.0 or hi <= lo:
        edges = np.array([lo, hi if hi > lo else lo + 1.0])
        return BinnedVector(np.zeros(v.size, dtype=np.int64), edges)
    width = 2.0 * iqr * v.size ** (-1.0 / 3.0)
    bins = int(math.ceil((hi - lo) / width))
    if bins > _MAX_BINS:
        bins = _MAX_BINS
        width = (hi - lo) / bins
    edges = lo + width * np.arange(bins + 1)
    if np.any(np.diff(edges) <= 0.0):
        # range narrower than float resolution allows; one bin is all there is
        return BinnedVector(np.zeros(v.size, dtype=np.int64), np.array([lo, hi]))
    labels = np.clip(np.floor((v - lo) / width).astype(np.int64), 0, bins - 1)
    return BinnedVector(labels, edges)


def scale_unit(scores: Sequence[float], orientation: str = MAX_BETTER) -> np.ndarray:
    """Min-max scale to [0,1] with 1 always best; constant input maps to 0.5."""
    if orientation not in (MAX_BETTER, MIN_BETTER):
        raise ValueError(f"unknown orientation {orientation!r}")
    s = np.asarray(scores, dtype=np.float64)
    if s.size < 1:
        raise ValueError("need at least one score")
    if not np.all(np.isfinite(s)):
        raise ValueError("non-finite scores; exclude sentinels before scaling")
    lo, hi = float(s.min()), float(s.max())
    if hi == lo:
        return np.full(s.shape, 0.5)
    scaled = (s - lo) / (hi - lo)
    if orientation == MIN_BETTER:
        scaled = 1.0 - scaled
    return scaled
