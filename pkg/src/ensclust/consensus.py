"""Consensus functions over a clustering ensemble.

Four ways to fuse an ensemble into one partition (co-association spectral,
hypergraph cut, bipartite spectral, symmetric matrix factorization) plus the
max-average-agreement rule for picking among their results. All functions are
deterministic given their seed; fusing never looks at the original feature
matrix, only at the member partitions.
"""

from __future__ import annotations

import itertools
import json
import statistics
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.linalg import eigh
from scipy.sparse.csgraph import connected_components
from threadpoolctl import threadpool_limits

from .data import Partition
from .infotheory import aami

FUNCTION_IDS = ("CSPA", "HGPA", "HBGF", "NMF")

_NMF_MAX_ITER = 500
_NMF_REL_TOL = 1e-6
_BALANCE_TOLERANCES = (0.05, 0.20)
_HGPA_RESTARTS = 3
_FM_MAX_PASSES = 8
_EXACT_BISECTION_LIMIT = 14


def _partitions(ensemble) -> list[Partition]:
    if hasattr(ensemble, "partitions"):
        parts = list(ensemble.partitions())
    else:
        parts = list(ensemble)
    if not parts:
        raise ValueError("ensemble must have at least one member")
    n = parts[0].n
    for part in parts:
        if part.n != n:
            raise ValueError("ensemble members must cover the same points")
    return parts


def _resolve_k(ensemble, k) -> tuple[list[Partition], int]:
    parts = _partitions(ensemble)
    if k is None:
        k = default_consensus_k(parts)
    return parts, int(k)


def _check_k(k: int, n: int, smallest: int = 2) -> None:
    if not smallest <= k <= n:
        raise ValueError(f"k must lie in [{smallest}, {n}], got {k}")


def default_consensus_k(ensemble) -> int:
    """Upper median of the members' cluster counts, floored at 2."""
    parts = _partitions(ensemble)
    ks = [part.k for part in parts]
    return max(2, int(statistics.median_high(ks)))


@dataclass(frozen=True)
class CoassociationMatrix:
    """Fraction of members co-clustering each pair; diagonal is 1."""

    matrix: np.ndarray

    def __post_init__(self):
        S = np.asarray(self.matrix, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] != S.shape[1]:
            raise ValueError("co-association matrix must be square")
        if not np.all(np.isfinite(S)):
            raise ValueError("co-association matrix must be finite")
        if not np.allclose(S, S.T, atol=1e-12):
            raise ValueError("co-association matrix must be symmetric")
        if S.min() < -1e-12 or S.max() > 1.0 + 1e-12:
            raise ValueError("co-association entries must lie in [0, 1]")
        if not np.allclose(np.diag(S), 1.0):
            raise ValueError("co-association diagonal must be 1")
        S.setflags(write=False)
        object.__setattr__(self, "matrix", S)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class ConsensusOutcome:
    """One consensus function's partition, tagged for later selection."""

    function_id: str
    partition: Partition
    aami_vs_set: float | None = None

    def __post_init__(self):
        if self.function_id not in FUNCTION_IDS:
            raise ValueError(f"unknown consensus function id {self.function_id!r}")


def coassociation(ensemble) -> CoassociationMatrix:
    """Average pairwise co-membership over members; noise pairs with nobody."""
    parts = _partitions(ensemble)
    n = parts[0].n
    S = np.zeros((n, n), dtype=np.float64)
    for part in parts:
        labels = part.labels
        ok = labels != -1
        same = (labels[:, None] == labels[None, :]) & ok[:, None] & ok[None, :]
        S += same
    S /= len(parts)
    np.fill_diagonal(S, 1.0)
    return CoassociationMatrix(S)


def _seeded_kmeans(embedding: np.ndarray, k: int, seed: int) -> np.ndarray:
    from sklearn.cluster import KMeans

    with threadpool_limits(limits=1):
        model = KMeans(n_clusters=k, n_init=10, random_state=seed)
        return model.fit_predict(embedding)


def cspa(ensemble, k: int | None = None, seed: int = 0) -> Partition:
    """Spectral partition of the co-association matrix.

    If the co-association graph falls apart into more components than k,
    the smallest components are merged into one cluster (a warning records
    this) instead of forcing an eigensplit of a disconnected graph.
    """
    parts, k = _resolve_k(ensemble, k)
    n = parts[0].n
    _check_k(k, n)
    S = coassociation(parts).matrix
    adjacency = sparse.csr_matrix(S > 0.0)
    n_comp, comp = connected_components(adjacency, directed=False)
    if n_comp > k:
        warnings.warn(
            f"co-association graph has {n_comp} components for k={k}; "
            "merging the smallest components together",
        )
        sizes = np.bincount(comp, minlength=n_comp)
        order = np.argsort(sizes, kind="stable")
        merged = order[: n_comp - k + 1]
        mapping = np.empty(n_comp, dtype=np.int64)
        mapping[merged] = 0
        mapping[order[n_comp - k + 1 :]] = np.arange(1, k)
        return Partition.from_labels(mapping[comp])
    degree = S.sum(axis=1)
    inv_root = 1.0 / np.sqrt(degree)
    lap = -inv_root[:, None] * S * inv_root[None, :]
    np.fill_diagonal(lap, 1.0 + np.diag(lap))
    _, vectors = eigh(lap, subset_by_index=(0, k - 1))
    norms = np.linalg.norm(vectors, axis=1)
    norms[norms == 0.0] = 1.0
    embedding = vectors / norms[:, None]
    return Partition.from_labels(_seeded_kmeans(embedding, k, seed))


# ------------------------------------------------------------------ HGPA


def _collect_hyperedges(parts: Sequence[Partition]) -> list[np.ndarray]:
    """Clusters of every member as vertex-index arrays, canonically ordered.

    Canonical ordering makes the cut independent of member order; singleton
    clusters are dropped because they can never be cut.
    """
    edges = []
    for part in parts:
        labels = part.labels
        for label in range(part.k):
            members = np.flatnonzero(labels == label)
            if members.size >= 2:
                edges.append(members)
    edges.sort(key=lambda e: (e.size, e.tolist()))
    return edges


def _balanced_bounds(n_vertices: int, k: int, tolerance: float) -> tuple[int, int, int]:
    """(lo, hi, left_k) bounds for the left side of one bisection step."""
    left_k = (k + 1) // 2
    right_k = k - left_k
    target = int(round(n_vertices * left_k / k))
    slack = int(tolerance * n_vertices)
    lo = max(left_k, target - slack)
    hi = min(n_vertices - right_k, target + slack)
    return lo, hi, left_k


def _restrict_edges(edges: Sequence[np.ndarray], keep: np.ndarray, n: int) -> list[np.ndarray]:
    inside = np.zeros(n, dtype=bool)
    inside[keep] = True
    out = []
    for edge in edges:
        sub = edge[inside[edge]]
        if sub.size >= 2:
            out.append(sub)
    return out


def _pack_initial_side(
    vertices: np.ndarray,
    edges: Sequence[np.ndarray],
    target: int,
    lo: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Greedy hyperedge packing: drop whole clusters into the left side.

    Packs toward the target size but only tops up with loose vertices when
    the packed side is still below the lower balance bound; a feasible
    packing of whole clusters is worth more than an exact target size.
    """
    position = {int(v): i for i, v in enumerate(vertices)}
    side = np.zeros(vertices.size, dtype=bool)
    count = 0
    for index in rng.permutation(len(edges)):
        local = np.array([position[int(v)] for v in edges[index]], dtype=np.int64)
        new = local[~side[local]]
        if new.size and count + new.size <= target:
            side[new] = True
            count += new.size
    if count < lo:
        free = np.flatnonzero(~side)
        fill = rng.permutation(free)[: lo - count]
        side[fill] = True
    return side


def _cut_and_mass(edge_sizes: np.ndarray, counts_left: np.ndarray) -> tuple[int, int]:
    counts_right = edge_sizes - counts_left
    cut = int(np.count_nonzero((counts_left > 0) & (counts_right > 0)))
    mass = int(np.minimum(counts_left, counts_right).sum())
    return cut, mass


def _exact_bisection(incidence: sparse.csr_matrix, lo: int, hi: int) -> np.ndarray:
    """Enumerate every admissible left side; returns the (cut, mass) minimizer.

    Only called for tiny vertex sets, where exhaustion is cheaper and
    stronger than refinement heuristics. Ties go to the lexicographically
    first subset.
    """
    n, n_edges = incidence.shape
    dense = incidence.toarray()
    edge_sizes = dense.sum(axis=0)
    big = int(edge_sizes.sum() // 2) + 2
    best_side, best_obj = None, None
    for size in range(lo, hi + 1):
        combos = np.array(list(itertools.combinations(range(n), size)), dtype=np.int64)
        counts = dense[combos].sum(axis=1)
        cut = ((counts > 0) & (counts < edge_sizes)).sum(axis=1)
        mass = np.minimum(counts, edge_sizes - counts).sum(axis=1)
        objective = cut * big + mass
        index = int(np.argmin(objective))
        if best_obj is None or objective[index] < best_obj:
            best_obj = int(objective[index])
            best_side = np.zeros(n, dtype=bool)
            best_side[combos[index]] = True
    return best_side


def _fm_refine(
    side: np.ndarray,
    incidence: sparse.csr_matrix,
    lo: int,
    hi: int,
) -> np.ndarray:
    """Move-based refinement of a bipartition under size bounds.

    Classic pass structure: tentatively move every vertex once in best-gain
    order, then keep the prefix with the lowest objective. The objective
    grades edges by their minority-side mass with the cut count as
    tie-break; its zero is exactly a zero cut. Pure cut counting goes blind
    on noisy ensembles, where every edge spans both sides no matter the
    split, while the mass term stays informative.
    """
    n, n_edges = incidence.shape
    side = side.copy()
    if n_edges == 0:
        return side
    edge_sizes = np.asarray(incidence.sum(axis=0)).ravel().astype(np.int64)
    cut_weight, mass_weight = 1, n_edges + 2

    def objective(counts_left):
        cut, mass = _cut_and_mass(edge_sizes, counts_left)
        return cut * cut_weight + mass * mass_weight

    counts_left = np.asarray(incidence[side].sum(axis=0)).ravel().astype(np.int64)
    best_side = side.copy()
    best_obj = objective(counts_left)
    for _ in range(_FM_MAX_PASSES):
        pass_start_obj = best_obj
        locked = np.zeros(n, dtype=bool)
        size_left = int(side.sum())
        trail: list[int] = []
        objectives: list[int] = []
        for _step in range(n):
            counts_right = edge_sizes - counts_left
            cut_if_left = (counts_left == 1).astype(np.int64) - (counts_right == 0)
            cut_if_right = (counts_right == 1).astype(np.int64) - (counts_left == 0)
            mass_if_left = (counts_left <= counts_right).astype(np.int64) - (
                counts_left > counts_right + 1
            )
            mass_if_right = (counts_right <= counts_left).astype(np.int64) - (
                counts_right > counts_left + 1
            )
            gain_left = incidence @ (cut_if_left * cut_weight + mass_if_left * mass_weight)
            gain_right = incidence @ (cut_if_right * cut_weight + mass_if_right * mass_weight)
            gain = np.where(side, gain_left, gain_right)
            movable = ~locked
            if size_left - 1 < lo:
                movable &= ~side
            if size_left + 1 > hi:
                movable &= side
            if not movable.any():
                break
            gain = np.where(movable, gain, -np.inf)
            v = int(np.argmax(gain))
            touched = incidence.indices[incidence.indptr[v] : incidence.indptr[v + 1]]
            if side[v]:
                counts_left[touched] -= 1
                size_left -= 1
            else:
                counts_left[touched] += 1
                size_left += 1
            side[v] = ~side[v]
            locked[v] = True
            trail.append(v)
            objectives.append(objective(counts_left))
        if not trail:
            break
        prefix = int(np.argmin(objectives))
        if objectives[prefix] < best_obj:
            for v in trail[prefix + 1 :]:
                side[v] = ~side[v]
            best_side = side.copy()
            best_obj = objectives[prefix]
        else:
            side = best_side.copy()
        counts_left = np.asarray(incidence[side].sum(axis=0)).ravel().astype(np.int64)
        if best_obj == pass_start_obj:
            break
    return best_side


def _bisect(
    vertices: np.ndarray,
    edges: Sequence[np.ndarray],
    k: int,
    assignment: np.ndarray,
    next_label: list[int],
    rng: np.random.Generator,
    n_total: int,
) -> None:
    if k == 1:
        assignment[vertices] = next_label[0]
        next_label[0] += 1
        return
    for tolerance in _BALANCE_TOLERANCES:
        lo, hi, left_k = _balanced_bounds(vertices.size, k, tolerance)
        if lo <= hi:
            break
    else:
        raise ValueError(
            f"cannot balance {vertices.size} vertices into {k} parts within tolerance"
        )
    position = {int(v): i for i, v in enumerate(vertices)}
    rows, cols = [], []
    for j, edge in enumerate(edges):
        for v in edge:
            rows.append(position[int(v)])
            cols.append(j)
    incidence = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)),
        shape=(vertices.size, len(edges)),
    )
    edge_sizes = np.asarray(incidence.sum(axis=0)).ravel().astype(np.int64)
    if vertices.size <= _EXACT_BISECTION_LIMIT:
        best_side = _exact_bisection(incidence, lo, hi)
    else:
        best_side, best_score = None, None
        for _restart in range(_HGPA_RESTARTS):
            target = min(hi, max(lo, int(round(vertices.size * left_k / k))))
            side = _pack_initial_side(vertices, edges, target, lo, rng)
            side = _fm_refine(side, incidence, lo, hi)
            counts_left = np.asarray(incidence[side].sum(axis=0)).ravel().astype(np.int64)
            cut, mass = _cut_and_mass(edge_sizes, counts_left)
            if best_score is None or (mass, cut) < best_score:
                best_side, best_score = side, (mass, cut)
    left = vertices[best_side]
    right = vertices[~best_side]
    _bisect(left, _restrict_edges(edges, left, n_total), left_k, assignment, next_label, rng, n_total)
    _bisect(right, _restrict_edges(edges, right, n_total), k - left_k, assignment, next_label, rng, n_total)


def hgpa(ensemble, k: int | None = None, seed: int = 0) -> Partition:
    """Balanced k-way hypergraph cut of the cluster hyperedges.

    Recursive bisection with proportional side targets, greedy packing
    starts, seeded restarts, and move-based refinement; tiny vertex sets
    are bisected by exact enumeration instead. Balance tolerance is 5% of
    the vertices per step, relaxed to 20% if the size bounds cannot be met.
    """
    parts, k = _resolve_k(ensemble, k)
    n = parts[0].n
    _check_k(k, n)
    edges = _collect_hyperedges(parts)
    rng = np.random.default_rng(seed)
    assignment = np.empty(n, dtype=np.int64)
    _bisect(np.arange(n), edges, k, assignment, [0], rng, n)
    return Partition.from_labels(assignment)


# ------------------------------------------------------------------ HBGF


def hbgf(ensemble, k: int | None = None, seed: int = 0) -> Partition:
    """Spectral co-clustering of the point/cluster bipartite graph.

    Points that are noise in every member get a zero embedding row and fall
    wherever the nearest center lies.
    """
    parts, k = _resolve_k(ensemble, k)
    n = parts[0].n
    _check_k(k, n)
    columns = []
    for part in parts:
        for label in range(part.k):
            columns.append(part.labels == label)
    if not columns:
        raise ValueError("ensemble has no clusters to fuse")
    B = np.array(columns, dtype=np.float64).T
    row_sums = B.sum(axis=1)
    col_sums = B.sum(axis=0)
    inv_row = np.zeros_like(row_sums)
    inv_row[row_sums > 0] = 1.0 / np.sqrt(row_sums[row_sums > 0])
    inv_col = 1.0 / np.sqrt(col_sums)
    normalized = inv_row[:, None] * B * inv_col[None, :]
    U, s, _ = np.linalg.svd(normalized, full_matrices=False)
    rank = int(np.count_nonzero(s > s[0] * max(normalized.shape) * np.finfo(float).eps))
    if rank < k:
        raise ValueError(f"bipartite spectrum has rank {rank}, below requested k={k}")
    embedding = inv_row[:, None] * U[:, :k]
    return Partition.from_labels(_seeded_kmeans(embedding, k, seed))


# ------------------------------------------------------------------- NMF


def _symmetric_nmf(S: np.ndarray, k: int, seed: int) -> tuple[np.ndarray, list[float]]:
    """Minimize ||S - H H^T||_F over H >= 0 by damped multiplicative updates."""
    n = S.shape[0]
    rng = np.random.default_rng(seed)
    with np.errstate(invalid="ignore", over="ignore"):
        H = rng.random((n, k)) * np.sqrt(S.mean() / k)
        residuals = [float(np.linalg.norm(S - H @ H.T))]
        for _ in range(_NMF_MAX_ITER):
            numerator = S @ H
            denominator = 2.0 * (H @ (H.T @ H)) + 1e-12
            H = H * (0.5 + numerator / denominator)
            residual = float(np.linalg.norm(S - H @ H.T))
            if not np.isfinite(residual):
                raise ValueError("factorization residual became non-finite")
            previous = residuals[-1]
            residuals.append(residual)
            if abs(previous - residual) < _NMF_REL_TOL * max(previous, 1e-30):
                break
    return H, residuals


def nmf_consensus(ensemble, k: int | None = None, seed: int = 0) -> Partition:
    """Symmetric factorization of the co-association matrix; argmax labels."""
    parts, k = _resolve_k(ensemble, k)
    n = parts[0].n
    if k == 1:
        return Partition.from_labels(np.zeros(n, dtype=np.int64))
    _check_k(k, n)
    S = coassociation(parts).matrix
    H, _ = _symmetric_nmf(S, k, seed)
    return Partition.from_labels(np.argmax(H, axis=1))


# -------------------------------------------------------------- selection


def score_outcomes(outcomes: Sequence[ConsensusOutcome], reference: Sequence[Partition]) -> list[ConsensusOutcome]:
    """Fill each outcome's average agreement against the reference set."""
    return [
        ConsensusOutcome(o.function_id, o.partition, aami(o.partition, reference))
        for o in outcomes
    ]


def select_consensus(
    ensemble, outcomes: Sequence[ConsensusOutcome], reference: str = "outcome-set"
) -> ConsensusOutcome:
    """Pick the outcome with the highest average agreement.

    The reference set defaults to the outcome partitions themselves
    (self-inclusive); ``reference="library"`` scores against the ensemble
    instead. Exact ties go to the earlier function id in FUNCTION_IDS order.
    """
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no outcomes to select from")
    if reference == "outcome-set":
        reference_parts = [o.partition for o in outcomes]
    elif reference == "library":
        reference_parts = _partitions(ensemble)
    else:
        raise ValueError(f"unknown reference {reference!r}; use 'outcome-set' or 'library'")
    scored = score_outcomes(outcomes, reference_parts)
    return min(scored, key=lambda o: (-o.aami_vs_set, FUNCTION_IDS.index(o.function_id)))


def consensus_suite(ensemble, k: int | None = None, seed: int = 0, n_jobs: int | None = None) -> list[ConsensusOutcome]:
    """Run all four consensus functions; outcomes come back in id order."""
    parts, k = _resolve_k(ensemble, k)
    functions = {"CSPA": cspa, "HGPA": hgpa, "HBGF": hbgf, "NMF": nmf_consensus}
    if n_jobs is None or n_jobs == 1:
        results = [functions[fid](parts, k, seed) for fid in FUNCTION_IDS]
    else:
        from joblib import Parallel, delayed

        results = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(functions[fid])(parts, k, seed) for fid in FUNCTION_IDS
        )
    return [ConsensusOutcome(fid, part) for fid, part in zip(FUNCTION_IDS, results)]


# ------------------------------------------------------------ persistence


def save_outcomes(outcomes: Sequence[ConsensusOutcome], path: str | Path) -> None:
    """One JSON record per outcome, alongside the library format."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for outcome in outcomes:
            record = {
                "function": outcome.function_id,
                "aami_vs_set": outcome.aami_vs_set,
                "labels": outcome.partition.labels.tolist(),
            }
            handle.write(json.dumps(record) + "\n")


def load_outcomes(path: str | Path) -> list[ConsensusOutcome]:
    path = Path(path)
    outcomes = []
    with path.open(encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            record = json.loads(line)
            outcomes.append(
                ConsensusOutcome(
                    record["function"],
                    Partition(np.asarray(record["labels"], dtype=np.int64)),
                    record["aami_vs_set"],
                )
            )
    if not outcomes:
        raise ValueError(f"{path}: no outcomes")
    return outcomes
