"""Base clustering algorithms behind one config-driven interface.

Every algorithm is identified by a :class:`ClustererConfig` whose canonical
text form is the member's stable identity throughout the ensemble layer.
Fits are deterministic per seed and internally single-threaded; library
generation parallelizes across configs and merges in grid order.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Partition

KINDS = ("kmeans", "agglomerative", "dbscan", "gmm", "spectral", "birch", "hdbscan", "affinity")
LINKAGES = ("single", "complete", "average", "ward")
DISTANCES = ("L1", "L2")
COVARIANCES = ("diag", "full")

# (required, optional-with-default) parameter names per kind
_PARAM_SPEC = {
    "kmeans": ({"k"}, {"seed": 0}),
    "agglomerative": ({"k", "linkage", "distance"}, {}),
    "dbscan": ({"eps", "min_points"}, {}),
    "gmm": ({"k", "covariance"}, {"seed": 0}),
    "spectral": ({"k"}, {"seed": 0}),
    "birch": ({"k"}, {"threshold": 0.5}),
    "hdbscan": ({"min_cluster_size"}, {}),
    "affinity": ({"damping"}, {"seed": 0}),
}

_INT_PARAMS = {"k", "min_points", "min_cluster_size", "seed"}
_FLOAT_PARAMS = {"eps", "threshold", "damping"}


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


@dataclass(frozen=True)
class ClustererConfig:
    """One algorithm plus hyperparameters; canonical text is its identity."""

    kind: str
    params: tuple[tuple[str, object], ...] = field(default=())

    def __init__(self, kind: str, **params):
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "params", self._validate(kind, params))

    @staticmethod
    def _validate(kind: str, params: dict) -> tuple[tuple[str, object], ...]:
        if kind not in KINDS:
            raise ValueError(f"unknown clusterer kind {kind!r}")
        required, optional = _PARAM_SPEC[kind]
        allowed = required | set(optional)
        unknown = set(params) - allowed
        if unknown:
            raise ValueError(f"{kind}: unexpected parameters {sorted(unknown)}")
        missing = required - set(params)
        if missing:
            raise ValueError(f"{kind}: missing parameters {sorted(missing)}")
        merged = dict(optional)
        merged.update(params)
        clean: dict[str, object] = {}
        for name, value in merged.items():
            if name in _INT_PARAMS:
                value = int(value)
            elif name in _FLOAT_PARAMS:
                value = float(value)
            else:
                value = str(value)
            clean[name] = value
        if "k" in clean and clean["k"] < 1:
            raise ValueError(f"{kind}: k must be >= 1")
        if kind == "agglomerative":
            if clean["linkage"] not in LINKAGES:
                raise ValueError(f"agglomerative: unknown linkage {clean['linkage']!r}")
            if clean["distance"] not in DISTANCES:
                raise ValueError(f"agglomerative: unknown distance {clean['distance']!r}")
            if clean["linkage"] == "ward" and clean["distance"] != "L2":
                raise ValueError("agglomerative: ward linkage requires L2 distance")
        if kind == "dbscan":
            if clean["eps"] <= 0:
                raise ValueError("dbscan: eps must be > 0")
            if clean["min_points"] < 1:
                raise ValueError("dbscan: min_points must be >= 1")
        if kind == "gmm" and clean["covariance"] not in COVARIANCES:
            raise ValueError(f"gmm: unknown covariance {clean['covariance']!r}")
        if kind == "spectral" and clean["k"] < 2:
            raise ValueError("spectral: k must be >= 2")
        if kind == "birch" and clean["threshold"] <= 0:
            raise ValueError("birch: threshold must be > 0")
        if kind == "hdbscan" and clean["min_cluster_size"] < 2:
            raise ValueError("hdbscan: min_cluster_size must be >= 2")
        if kind == "affinity" and not (0.5 <= clean["damping"] < 1.0):
            raise ValueError("affinity: damping must lie in [0.5, 1)")
        return tuple(sorted(clean.items()))

    @property
    def text(self) -> str:
        inner = ",".join(f"{name}={_format_value(value)}" for name, value in self.params)
        return f"{self.kind}({inner})"

    def param(self, name: str):
        for key, value in self.params:
            if key == name:
                return value
        raise KeyError(name)

    def as_dict(self) -> dict:
        return dict(self.params)

    def __repr__(self) -> str:
        return f"ClustererConfig[{self.text}]"


def _fit_kmeans(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import KMeans

    model = KMeans(
        n_clusters=params["k"],
        init="k-means++",
        n_init=1,
        max_iter=300,
        tol=1e-6,
        random_state=params["seed"],
    )
    return model.fit_predict(X)


def _fit_agglomerative(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import AgglomerativeClustering

    metric = "euclidean" if params["distance"] == "L2" else "manhattan"
    model = AgglomerativeClustering(
        n_clusters=params["k"], linkage=params["linkage"], metric=metric
    )
    return model.fit_predict(X)


def _fit_dbscan(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import DBSCAN

    return DBSCAN(eps=params["eps"], min_samples=params["min_points"]).fit_predict(X)


def _fit_gmm(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.mixture import GaussianMixture

    covariance = "diag" if params["covariance"] == "diag" else "full"
    last_error: Exception | None = None
    for reg in (0.0, 1e-6):
        model = GaussianMixture(
            n_components=params["k"],
            covariance_type=covariance,
            reg_covar=reg,
            random_state=params["seed"],
        )
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                labels = model.fit_predict(X)
            return labels
        except Exception as err:  # covariance collapse; retry regularized once
            last_error = err
    raise ValueError(f"gmm covariance collapse persisted after regularization: {last_error}")


def _fit_spectral(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import SpectralClustering

    model = SpectralClustering(
        n_clusters=params["k"],
        affinity="rbf",
        assign_labels="kmeans",
        random_state=params["seed"],
    )
    return model.fit_predict(X)


def _fit_birch(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import Birch

    model = Birch(n_clusters=params["k"], threshold=params["threshold"])
    return model.fit_predict(X)


def _fit_hdbscan(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import HDBSCAN

    return HDBSCAN(min_cluster_size=params["min_cluster_size"]).fit_predict(X)


def _fit_affinity(X: np.ndarray, params: dict) -> np.ndarray:
    from sklearn.cluster import AffinityPropagation

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = AffinityPropagation(damping=params["damping"], random_state=params["seed"])
        return model.fit_predict(X)


_FITTERS = {
    "kmeans": _fit_kmeans,
    "agglomerative": _fit_agglomerative,
    "dbscan": _fit_dbscan,
    "gmm": _fit_gmm,
    "spectral": _fit_spectral,
    "birch": _fit_birch,
    "hdbscan": _fit_hdbscan,
    "affinity": _fit_affinity,
}


def fit_clusterer(config: ClustererConfig, matrix) -> Partition:
    """Run one configured algorithm; noise comes back as label -1."""
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if not np.all(np.isfinite(X)):
        raise ValueError("matrix must be finite")
    params = config.as_dict()
    k = params.get("k")
    if k is not None and X.shape[0] < k:
        raise ValueError(f"{config.kind}: need at least k={k} points, have {X.shape[0]}")
    with threadpool_limits(limits=1):
        labels = _FITTERS[config.kind](X, params)
    return Partition.from_labels(np.asarray(labels, dtype=np.int64))


@dataclass(frozen=True)
class FitFailure:
    config: ClustererConfig
    message: str


class EnsembleLibrary:
    """Ordered clusterings of one dataset, each tagged by its config.

    Iterating yields ``(config, partition)`` pairs in grid order. Failures
    encountered during generation ride along for reporting but are not
    members.
    """

    def __init__(
        self,
        members: Sequence[tuple[ClustererConfig, Partition]],
        failures: Sequence[FitFailure] = (),
    ):
        members = tuple(members)
        if not members:
            raise ValueError("library must have at least one member")
        n = members[0][1].n
        seen: set[str] = set()
        for config, partition in members:
            if partition.n != n:
                raise ValueError("all partitions must cover the same points")
            if config.text in seen:
                raise ValueError(f"duplicate config {config.text}")
            seen.add(config.text)
        self._members = members
        self.failures = tuple(failures)
        self.n = n

    def __len__(self) -> int:
        return len(self._members)

    def __iter__(self) -> Iterator[tuple[ClustererConfig, Partition]]:
        return iter(self._members)

    def __getitem__(self, index: int) -> tuple[ClustererConfig, Partition]:
        return self._members[index]

    def configs(self) -> list[ClustererConfig]:
        return [config for config, _ in self._members]

    def partitions(self) -> list[Partition]:
        return [partition for _, partition in self._members]

    def texts(self) -> list[str]:
        return [config.text for config, _ in self._members]

    def subset(self, indices: Sequence[int]) -> "EnsembleLibrary":
        picked = [self._members[int(i)] for i in indices]
        return EnsembleLibrary(picked)

    def __repr__(self) -> str:
        return f"EnsembleLibrary(m={len(self)}, n={self.n}, failures={len(self.failures)})"


def _safe_fit(config: ClustererConfig, X: np.ndarray):
    try:
        return fit_clusterer(config, X)
    except Exception as err:
        return FitFailure(config, f"{type(err).__name__}: {err}")


def generate_library(matrix, grid: Sequence[ClustererConfig], n_jobs: int | None = None) -> EnsembleLibrary:
    """Fit every config in the grid; failures are recorded, not fatal.

    The returned library preserves grid order regardless of parallel
    completion order. Only a grid whose fits all fail is an error.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid must not be empty")
    seen: set[str] = set()
    for config in grid:
        if config.text in seen:
            raise ValueError(f"duplicate config in grid: {config.text}")
        seen.add(config.text)
    X = np.asarray(matrix, dtype=np.float64)
    if n_jobs is None or n_jobs == 1:
        results = [_safe_fit(config, X) for config in grid]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs)(delayed(_safe_fit)(config, X) for config in grid)
    members: list[tuple[ClustererConfig, Partition]] = []
    failures: list[FitFailure] = []
    for config, outcome in zip(grid, results):
        if isinstance(outcome, FitFailure):
            failures.append(outcome)
        else:
            members.append((config, outcome))
    if not members:
        details = "; ".join(f"{f.config.text}: {f.message}" for f in failures[:3])
        raise ValueError(f"all {len(grid)} fits failed ({details})")
    return EnsembleLibrary(members, failures)


def default_grid(profile: str = "small") -> list[ClustererConfig]:
    """Stock hyperparameter grids for library generation.

    The small profile is the quick four-algorithm mix; the paper profile
    widens the cluster-count ranges to 30 and adds the spectral and birch
    families.
    """
    if profile == "small":
        grid = [ClustererConfig("kmeans", k=k) for k in range(2, 11)]
        for linkage in LINKAGES:
            for k in (2, 5, 10):
                grid.append(ClustererConfig("agglomerative", k=k, linkage=linkage, distance="L2"))
        for eps in (0.5, 1.0, 2.0):
            for min_points in (3, 5):
                grid.append(ClustererConfig("dbscan", eps=eps, min_points=min_points))
        for k in (2, 5, 10):
            grid.append(ClustererConfig("gmm", k=k, covariance="full"))
        return grid
    if profile == "paper":
        grid = [ClustererConfig("kmeans", k=k) for k in range(2, 31)]
        for linkage in LINKAGES:
            distances = ("L2",) if linkage == "ward" else DISTANCES
            for distance in distances:
                for k in range(2, 31):
                    grid.append(
                        ClustererConfig("agglomerative", k=k, linkage=linkage, distance=distance)
                    )
        for eps in (0.5, 1.0, 2.0):
            for min_points in (3, 5):
                grid.append(ClustererConfig("dbscan", eps=eps, min_points=min_points))
        for k in (2, 5, 10, 15, 20, 25, 30):
            for covariance in COVARIANCES:
                grid.append(ClustererConfig("gmm", k=k, covariance=covariance))
        for k in (2, 5, 10, 15, 20, 25, 30):
            grid.append(ClustererConfig("spectral", k=k))
        for k in range(2, 31):
            grid.append(ClustererConfig("birch", k=k))
        return grid
    raise ValueError(f"unknown grid profile {profile!r}")


def save_library(library: EnsembleLibrary, path: str | Path, header_comments: Iterable[str] = ()) -> None:
    """One JSON record per member: canonical config text plus labels."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for comment in header_comments:
            handle.write(f"# {comment}\n")
        for config, partition in library:
            record = {
                "config": config.text,
                "kind": config.kind,
                "params": config.as_dict(),
                "labels": partition.labels.tolist(),
            }
            handle.write(json.dumps(record) + "\n")


def load_library(path: str | Path) -> EnsembleLibrary:
    path = Path(path)
    members: list[tuple[ClustererConfig, Partition]] = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            record = json.loads(line)
            config = ClustererConfig(record["kind"], **record["params"])
            if config.text != record["config"]:
                raise ValueError(
                    f"config text mismatch: stored {record['config']!r}, rebuilt {config.text!r}"
                )
            members.append((config, Partition(np.asarray(record["labels"], dtype=np.int64))))
    if not members:
        raise ValueError(f"{path}: no library members")
    return EnsembleLibrary(members)
