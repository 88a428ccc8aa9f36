"""Information-theoretic partition comparison and distribution divergences.

Mutual information is computed from the contingency table with natural logs;
NMI and AMI are ratios so the base cancels. The AMI chance correction uses the
hypergeometric permutation model with all factorials kept in log space.
Jensen-Shannon distance uses base-2 logs so it lives in [0, 1].
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

__all__ = [
    "contingency_table",
    "entropy",
    "mutual_information",
    "expected_mutual_information",
    "nmi",
    "ami",
    "anmi",
    "aami",
    "pairwise_ami",
    "kl_divergence",
    "jsd",
]


def _as_labels(partition) -> np.ndarray:
    labels = getattr(partition, "labels", partition)
    arr = np.asarray(labels)
    if arr.ndim != 1:
        raise ValueError("labels must be one-dimensional")
    return arr


def contingency_table(u, v) -> np.ndarray:
    """Joint label-count matrix; noise (-1) counts as an ordinary label."""
    u = _as_labels(u)
    v = _as_labels(v)
    if u.size != v.size:
        raise ValueError(f"length mismatch: {u.size} vs {v.size}")
    if u.size == 0:
        raise ValueError("empty labelings")
    u_levels, u_idx = np.unique(u, return_inverse=True)
    v_levels, v_idx = np.unique(v, return_inverse=True)
    flat = u_idx.astype(np.int64) * v_levels.size + v_idx
    counts = np.bincount(flat, minlength=u_levels.size * v_levels.size)
    return counts.reshape(u_levels.size, v_levels.size)


def entropy(labels) -> float:
    """Shannon entropy of the label distribution, natural log."""
    counts = np.bincount(np.unique(_as_labels(labels), return_inverse=True)[1])
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(max(0.0, -np.sum(p * np.log(p))))


def mutual_information(u, v) -> float:
    """MI between two labelings from their contingency table, natural log."""
    table = contingency_table(u, v)
    return _mi_from_table(table)


def _mi_from_table(table: np.ndarray) -> float:
    n = float(table.sum())
    a = table.sum(axis=1).astype(np.float64)
    b = table.sum(axis=0).astype(np.float64)
    i, j = np.nonzero(table)
    nij = table[i, j].astype(np.float64)
    terms = (nij / n) * (np.log(nij * n) - np.log(a[i] * b[j]))
    return float(max(0.0, terms.sum()))


def _entropy_from_counts(counts: np.ndarray) -> float:
    n = counts.sum()
    p = counts[counts > 0] / n
    return float(max(0.0, -np.sum(p * np.log(p))))


def _is_perfect_match(table: np.ndarray) -> bool:
    # Exactly one nonzero per row and per column <=> identical up to permutation.
    nz = table > 0
    return bool(np.all(nz.sum(axis=0) == 1) and np.all(nz.sum(axis=1) == 1))


def nmi(u, v) -> float:
    """MI / sqrt(H(u) H(v)); 0 when either entropy vanishes, 1 on a perfect match.

    The zero-entropy rule wins on overlap, so two constant labelings score 0;
    AMI takes the opposite convention (identical labelings always score 1).
    """
    table = contingency_table(u, v)
    h_u = _entropy_from_counts(table.sum(axis=1))
    h_v = _entropy_from_counts(table.sum(axis=0))
    if h_u == 0.0 or h_v == 0.0:
        return 0.0
    if _is_perfect_match(table):
        return 1.0
    value = _mi_from_table(table) / math.sqrt(h_u * h_v)
    return float(min(max(value, 0.0), 1.0))


def expected_mutual_information(row_sums: Sequence[int], col_sums: Sequence[int], n: int) -> float:
    """E[MI] under the hypergeometric permutation model with fixed margins.

    All factorial arithmetic is carried in log space via ``gammaln`` so large
    counts never overflow; the inner sum over the admissible cell count range
    is vectorized per contingency cell.
    """
    a = np.asarray(row_sums, dtype=np.int64)
    b = np.asarray(col_sums, dtype=np.int64)
    n = int(n)
    if a.sum() != n or b.sum() != n:
        raise ValueError("margins must sum to n")
    log_fact = gammaln(np.arange(n + 2, dtype=np.float64))  # log (x-1)! at index x
    log_n = math.log(n)
    emi = 0.0
    for a_i in a:
        a_i = int(a_i)
        if a_i == 0:
            continue
        for b_j in b:
            b_j = int(b_j)
            if b_j == 0:
                continue
            lo = max(1, a_i + b_j - n)
            hi = min(a_i, b_j)
            if hi < lo:
                continue
            nij = np.arange(lo, hi + 1, dtype=np.int64)
            log_p = (
                log_fact[a_i + 1]
                + log_fact[b_j + 1]
                + log_fact[n - a_i + 1]
                + log_fact[n - b_j + 1]
                - log_fact[n + 1]
                - log_fact[nij + 1]
                - log_fact[a_i - nij + 1]
                - log_fact[b_j - nij + 1]
                - log_fact[n - a_i - b_j + nij + 1]
            )
            mi_term = (nij / n) * (np.log(nij.astype(np.float64)) + log_n - math.log(a_i) - math.log(b_j))
            emi += float(np.sum(np.exp(log_p) * mi_term))
    return emi


def ami(u, v) -> float:
    """(MI - E[MI]) / (mean(H) - E[MI]); 1 on a perfect match, 0 on a zero denominator."""
    table = contingency_table(u, v)
    if _is_perfect_match(table):
        return 1.0
    a = table.sum(axis=1)
    b = table.sum(axis=0)
    h_u = _entropy_from_counts(a)
    h_v = _entropy_from_counts(b)
    emi = expected_mutual_information(a, b, int(table.sum()))
    denom = 0.5 * (h_u + h_v) - emi
    if abs(denom) < 1e-15:
        return 0.0
    value = (_mi_from_table(table) - emi) / denom
    return float(min(value, 1.0))


def _ensemble_partitions(ensemble) -> list:
    partitions = getattr(ensemble, "partitions", None)
    members = list(partitions()) if callable(partitions) else list(ensemble)
    if not members:
        raise ValueError("empty ensemble")
    return members


def anmi(c, ensemble) -> float:
    """Mean NMI of one partition against every member of a set."""
    members = _ensemble_partitions(ensemble)
    return float(np.mean([nmi(c, member) for member in members]))


def aami(c, ensemble) -> float:
    """Mean AMI of one partition against every member of a set."""
    members = _ensemble_partitions(ensemble)
    return float(np.mean([ami(c, member) for member in members]))


def pairwise_ami(partitions: Iterable) -> np.ndarray:
    """Symmetric AMI matrix over a partition list (diagonal 1)."""
    members = list(partitions)
    m = len(members)
    out = np.eye(m)
    for i in range(m):
        for j in range(i + 1, m):
            out[i, j] = out[j, i] = ami(members[i], members[j])
    return out


def kl_divergence(p, q, base: float = 2.0) -> float:
    """KL(p || q) with the 0 log 0 = 0 convention; inf when q lacks p's support."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError("distributions need the same support")
    mask = p > 0
    if np.any(q[mask] == 0):
        return math.inf
    return float(np.sum(p[mask] * (np.log(p[mask] / q[mask]) / math.log(base))))


def _check_distribution(p: np.ndarray, name: str) -> None:
    if np.any(p < 0):
        raise ValueError(f"{name} has negative entries")
    total = float(p.sum())
    if not math.isfinite(total) or abs(total - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1 (got {total!r})")


def jsd(u, v) -> float:
    """Jensen-Shannon distance (square-root form), base-2 logs, in [0, 1]."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError("distributions need the same support")
    _check_distribution(u, "u")
    _check_distribution(v, "v")
    m = 0.5 * (u + v)
    value = 0.5 * (kl_divergence(u, m) + kl_divergence(v, m))
    return float(min(1.0, math.sqrt(max(0.0, value))))
