"""Mixed-type preprocessing: one-hot encoding, power transforms, screening,
subsampling, and the clustering-tendency probe.

The encoder follows the usual estimator protocol (``fit`` learns per-column
state, ``transform`` is pure), so a fitted instance can be serialized through
:class:`TransformParams` and replayed on later months.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator, TransformerMixin

from .data import UNK, DataTable

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_LAMBDA_RANGE = (-5.0, 5.0)
_LAMBDA_TOL = 1e-4


def one_hot_encode(values: Sequence[str], levels: Sequence[str] | None = None) -> tuple[np.ndarray, tuple[str, ...]]:
    """Indicator matrix for one categorical column.

    Levels are discovered from the data (sorted, with ``UNK`` always appended
    last) unless given explicitly. Values outside the level list fall into the
    ``UNK`` column, which every level list must therefore contain.
    """
    values = [str(v) for v in values]
    if levels is None:
        levels = tuple(sorted(set(values) - {UNK})) + (UNK,)
    else:
        levels = tuple(levels)
        if UNK not in levels:
            raise ValueError(f"level list must contain {UNK!r}")
    index = {level: pos for pos, level in enumerate(levels)}
    unk_pos = index[UNK]
    matrix = np.zeros((len(values), len(levels)))
    for row, value in enumerate(values):
        matrix[row, index.get(value, unk_pos)] = 1.0
    return matrix, levels


def yeo_johnson_apply(values: Sequence[float], lam: float) -> np.ndarray:
    """Power transform valid on both signs; ``lam=1`` is the identity."""
    x = np.asarray(values, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    if lam != 0.0:
        out[pos] = np.expm1(lam * np.log1p(x[pos])) / lam
    else:
        out[pos] = np.log1p(x[pos])
    neg = ~pos
    if lam != 2.0:
        out[neg] = -np.expm1((2.0 - lam) * np.log1p(-x[neg])) / (2.0 - lam)
    else:
        out[neg] = -np.log1p(-x[neg])
    return out


def _yj_log_likelihood(x: np.ndarray, lam: float) -> float:
    with np.errstate(over="ignore", invalid="ignore"):
        psi = yeo_johnson_apply(x, lam)
        var = float(psi.var())
    if var <= 0.0 or not np.isfinite(var):
        return -math.inf
    n = x.size
    jacobian = float(np.sum(np.sign(x) * np.log1p(np.abs(x))))
    return -0.5 * n * math.log(var) + (lam - 1.0) * jacobian


def yeo_johnson_fit(values: Sequence[float], name: str = "") -> float:
    """Pick the transform exponent by golden-section search on the profile
    log-likelihood over a fixed bracket.
    """
    x = np.asarray(values, dtype=np.float64)
    if x.size < 2 or float(x.var()) == 0.0:
        label = f" {name!r}" if name else ""
        raise ValueError(f"degenerate column{label}: constant values cannot be power-transformed")
    lo, hi = _LAMBDA_RANGE
    a = hi - _GOLDEN * (hi - lo)
    b = lo + _GOLDEN * (hi - lo)
    fa = _yj_log_likelihood(x, a)
    fb = _yj_log_likelihood(x, b)
    while hi - lo > _LAMBDA_TOL:
        if fa < fb:
            lo = a
            a, fa = b, fb
            b = lo + _GOLDEN * (hi - lo)
            fb = _yj_log_likelihood(x, b)
        else:
            hi = b
            b, fb = a, fa
            a = hi - _GOLDEN * (hi - lo)
            fa = _yj_log_likelihood(x, a)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class TransformParams:
    """Serializable snapshot of a fitted :class:`MixedEncoder`."""

    numeric: tuple[tuple[str, float, float, float], ...]  # (name, lambda, mean, sd)
    categorical: tuple[tuple[str, tuple[str, ...]], ...]  # (name, levels)
    power: bool
    standardize: bool

    def to_json(self) -> str:
        return json.dumps(
            {
                "numeric": [list(entry) for entry in self.numeric],
                "categorical": [[name, list(levels)] for name, levels in self.categorical],
                "power": self.power,
                "standardize": self.standardize,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "TransformParams":
        raw = json.loads(text)
        return cls(
            numeric=tuple((n, float(l), float(m), float(s)) for n, l, m, s in raw["numeric"]),
            categorical=tuple((name, tuple(levels)) for name, levels in raw["categorical"]),
            power=bool(raw["power"]),
            standardize=bool(raw["standardize"]),
        )


class MixedEncoder(BaseEstimator, TransformerMixin):
    """Numeric power-transform + standardize, categoricals one-hot, in one pass.

    Output columns are the numeric columns in schema order followed by the
    one-hot blocks in schema order. Levels unseen at fit time land in the
    ``UNK`` indicator at transform time.
    """

    def __init__(self, power: bool = True, standardize: bool = True):
        self.power = power
        self.standardize = standardize

    def fit(self, table: DataTable, y=None) -> "MixedEncoder":
        numeric: list[tuple[str, float, float, float]] = []
        for name in table.numeric_names():
            x = table.column(name)
            lam = yeo_johnson_fit(x, name=name) if self.power else 1.0
            psi = yeo_johnson_apply(x, lam)
            mean = float(psi.mean())
            sd = float(psi.std())
            if sd == 0.0:
                raise ValueError(f"degenerate column {name!r}: constant values")
            numeric.append((name, lam, mean, sd))
        categorical: list[tuple[str, tuple[str, ...]]] = []
        for name in table.categorical_names():
            observed = set(str(v) for v in table.column(name))
            levels = tuple(sorted(observed - {UNK})) + (UNK,)
            categorical.append((name, levels))
        self.params_ = TransformParams(
            numeric=tuple(numeric),
            categorical=tuple(categorical),
            power=self.power,
            standardize=self.standardize,
        )
        self.feature_names_ = self._feature_names(self.params_)
        return self

    @staticmethod
    def _feature_names(params: TransformParams) -> tuple[str, ...]:
        names = [name for name, _, _, _ in params.numeric]
        for name, levels in params.categorical:
            names.extend(f"{name}={level}" for level in levels)
        return tuple(names)

    @classmethod
    def from_params(cls, params: TransformParams) -> "MixedEncoder":
        """Rebuild a transform-ready encoder from a serialized snapshot."""
        encoder = cls(power=params.power, standardize=params.standardize)
        encoder.params_ = params
        encoder.feature_names_ = cls._feature_names(params)
        return encoder

    def transform(self, table: DataTable) -> np.ndarray:
        if not hasattr(self, "params_"):
            raise ValueError("encoder is not fitted")
        blocks: list[np.ndarray] = []
        for name, lam, mean, sd in self.params_.numeric:
            x = yeo_johnson_apply(table.column(name), lam)
            if self.params_.standardize:
                x = (x - mean) / sd
            blocks.append(x[:, None])
        for name, levels in self.params_.categorical:
            matrix, _ = one_hot_encode(table.column(name), levels=levels)
            blocks.append(matrix)
        if not blocks:
            raise ValueError("table has no columns to encode")
        return np.hstack(blocks)


@dataclass(frozen=True)
class ScreenReport:
    """Outcome of the redundancy screen over encoded numeric columns."""

    pairs: tuple[tuple[str, str, float], ...]
    zero_variance: tuple[str, ...]

    @property
    def flagged(self) -> bool:
        return bool(self.pairs or self.zero_variance)


def correlation_screen(matrix, names: Sequence[str] | None = None, threshold: float = 0.9) -> ScreenReport:
    """Report column pairs with |Pearson r| at or above the threshold.

    Zero-variance columns cannot enter the correlation and are reported
    separately; the caller decides whether either finding is fatal.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    if not (0.0 < threshold <= 1.0):
        raise ValueError("threshold must lie in (0, 1]")
    if names is None:
        names = [f"col{j}" for j in range(X.shape[1])]
    names = list(names)
    if len(names) != X.shape[1]:
        raise ValueError("names length does not match matrix columns")
    variances = X.var(axis=0)
    dead = variances == 0.0
    zero_variance = tuple(names[j] for j in np.flatnonzero(dead))
    live = np.flatnonzero(~dead)
    pairs: list[tuple[str, str, float]] = []
    if live.size >= 2:
        corr = np.corrcoef(X[:, live], rowvar=False)
        for a in range(live.size):
            for b in range(a + 1, live.size):
                r = float(corr[a, b])
                if abs(r) >= threshold:
                    pairs.append((names[live[a]], names[live[b]], r))
    pairs.sort(key=lambda entry: (-abs(entry[2]), entry[0], entry[1]))
    return ScreenReport(pairs=tuple(pairs), zero_variance=zero_variance)


def sample_random(n: int, size: int, seed: int = 0) -> np.ndarray:
    """Uniform row subsample without replacement; indices come back sorted."""
    if not (0 < size <= n):
        raise ValueError(f"size must lie in 1..{n}, got {size}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(n, size=size, replace=False))


def sample_stratified(strata: Sequence[str], size: int, seed: int = 0) -> np.ndarray:
    """Proportional subsample by stratum, largest-remainder rounding.

    Quotas are the exact proportional shares floored, with the leftover seats
    granted in order of decreasing fractional remainder (first appearance
    breaks ties). Rows are drawn uniformly inside each stratum.
    """
    labels = np.array([str(v) for v in strata], dtype=object)
    n = labels.size
    if not (0 < size <= n):
        raise ValueError(f"size must lie in 1..{n}, got {size}")
    order_of_appearance: dict[str, int] = {}
    for value in labels:
        order_of_appearance.setdefault(value, len(order_of_appearance))
    groups = sorted(set(labels.tolist()), key=order_of_appearance.get)
    counts = {g: int(np.count_nonzero(labels == g)) for g in groups}
    quotas = {g: size * counts[g] / n for g in groups}
    base = {g: int(math.floor(quotas[g])) for g in groups}
    leftover = size - sum(base.values())
    by_remainder = sorted(groups, key=lambda g: (-(quotas[g] - base[g]), order_of_appearance[g]))
    for g in by_remainder[:leftover]:
        base[g] += 1
    rng = np.random.default_rng(seed)
    picked: list[np.ndarray] = []
    for g in groups:
        rows = np.flatnonzero(labels == g)
        picked.append(rng.choice(rows, size=base[g], replace=False))
    return np.sort(np.concatenate(picked))


def hopkins_statistic(matrix, seed: int = 0, probes: int | None = None) -> float:
    """Clustering-tendency score in (0, 1); 0.5 is spatial randomness.

    Compares nearest-neighbor distances from uniform probe points in the data
    bounding box against those from sampled data points, each raised to the
    dimensionality before summing.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < 4:
        raise ValueError("need at least 4 points for a tendency estimate")
    if probes is None:
        probes = min(max(1, int(0.1 * n)), 500)
    if not (0 < probes <= n):
        raise ValueError("probes must lie in 1..n")
    rng = np.random.default_rng(seed)
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    uniform = rng.uniform(lo, hi, size=(probes, d))
    sample = rng.choice(n, size=probes, replace=False)
    tree = cKDTree(X)
    u_dist, _ = tree.query(uniform, k=1)
    w_dist = tree.query(X[sample], k=2)[0][:, 1]
    u_sum = float(np.sum(u_dist**d))
    w_sum = float(np.sum(w_dist**d))
    if u_sum + w_sum == 0.0:
        return 0.5
    return u_sum / (u_sum + w_sum)
