"""Mixed-type neighborhood embedding.

Two fuzzy k-NN graphs (euclidean over numeric features, Dice over one-hot
categorical blocks) are symmetrized by probabilistic union, blended by a
geometric mean controlled by ``alpha``, then laid out by the normalized-
Laplacian spectrum and polished with a few epochs of stochastic attraction/
repulsion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.linalg import eigh
from scipy.sparse.linalg import eigsh
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator

_SIGMA_TOL = 1e-5
_SIGMA_FLOOR = 1e-12
_ABSENT_WEIGHT = 1e-3
_DENSE_EIG_LIMIT = 1500
_COMPONENT_GAP = 2.0
_COMPONENT_RADIUS = 0.5


@dataclass(frozen=True, eq=False)
class FuzzyGraph:
    """Weighted neighborhood graph; weights live in (0, 1], no self-loops."""

    weights: sp.csr_matrix

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.weights.nnz)

    def is_symmetric(self) -> bool:
        return (self.weights != self.weights.T).nnz == 0

    def toarray(self) -> np.ndarray:
        return self.weights.toarray()


def dice_distance(a, b) -> float:
    """One minus the Dice coefficient of two binary indicator vectors."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 0.0
    return 1.0 - 2.0 * int((a & b).sum()) / total


def pairwise_dice(matrix) -> np.ndarray:
    """Dice distance between all row pairs of a binary matrix."""
    A = np.asarray(matrix, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError("matrix must be two-dimensional")
    overlap = A @ A.T
    sizes = A.sum(axis=1)
    total = sizes[:, None] + sizes[None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        dist = 1.0 - 2.0 * overlap / total
    dist[total == 0] = 0.0
    np.fill_diagonal(dist, 0.0)
    return dist


def _smooth_knn_row(dists: np.ndarray, target: float) -> tuple[float, float]:
    """Find (rho, sigma) so the local kernel mass hits the target."""
    rho = float(dists[0])
    gaps = np.maximum(dists - rho, 0.0)

    def mass(sigma: float) -> float:
        return float(np.exp(-gaps / sigma).sum())

    if mass(_SIGMA_FLOOR) >= target:
        return rho, _SIGMA_FLOOR
    lo, hi = _SIGMA_FLOOR, 1.0
    while mass(hi) < target:
        hi *= 2.0
        if hi > 1e12:
            break
    while hi - lo > _SIGMA_TOL:
        mid = 0.5 * (lo + hi)
        if mass(mid) < target:
            lo = mid
        else:
            hi = mid
    return rho, 0.5 * (lo + hi)


def knn_fuzzy_graph(matrix, k: int, metric: str = "euclidean") -> FuzzyGraph:
    """Directed fuzzy k-NN graph with per-point adaptive kernel widths.

    Each point's nearest neighbor gets weight 1; the remaining neighbors decay
    so the total kernel mass equals log2(k). Distance ties resolve by index so
    the graph is reproducible.
    """
    X = np.asarray(matrix, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    if not (1 <= k < n):
        raise ValueError(f"k must lie in 1..{n - 1}, got {k}")
    if metric == "euclidean":
        dist = cdist(X, X)
    elif metric == "dice":
        dist = pairwise_dice(X)
    else:
        raise ValueError(f"unknown metric {metric!r}")
    np.fill_diagonal(dist, np.inf)
    target = math.log2(k) if k > 1 else 0.0
    rows = np.empty(n * k, dtype=np.int64)
    cols = np.empty(n * k, dtype=np.int64)
    vals = np.empty(n * k, dtype=np.float64)
    for i in range(n):
        order = np.argsort(dist[i], kind="stable")[:k]
        d_row = dist[i, order]
        rho, sigma = _smooth_knn_row(d_row, target)
        weights = np.exp(-np.maximum(d_row - rho, 0.0) / sigma)
        sl = slice(i * k, (i + 1) * k)
        rows[sl] = i
        cols[sl] = order
        vals[sl] = weights
    W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    W.eliminate_zeros()  # underflowed far neighbors carry no information
    return FuzzyGraph(W)


def symmetrize(graph: FuzzyGraph) -> FuzzyGraph:
    """Probabilistic union of each edge with its reverse.

    Already-symmetric graphs are returned unchanged, which makes the op a
    fixed point under repetition.
    """
    W = graph.weights
    if (W != W.T).nnz == 0:
        return graph
    union = W + W.T - W.multiply(W.T)
    union = sp.csr_matrix(union)
    union.eliminate_zeros()
    return FuzzyGraph(union)


def intersect_graphs(numeric_graph: FuzzyGraph, categorical_graph: FuzzyGraph, alpha: float) -> FuzzyGraph:
    """Blend two modality graphs by a weighted geometric mean.

    ``alpha`` is the categorical share; the endpoints return the corresponding
    input unchanged so a single-modality run is bit-for-bit reproducible. An
    edge present in only one graph contributes a small floor weight on the
    other side rather than vanishing.
    """
    if not (0.0 <= alpha <= 1.0):
        raise ValueError("alpha must lie in [0, 1]")
    if alpha == 0.0:
        return numeric_graph
    if alpha == 1.0:
        return categorical_graph
    A = numeric_graph.weights
    B = categorical_graph.weights
    if A.shape != B.shape:
        raise ValueError("graphs must cover the same nodes")
    pattern = ((A != 0) + (B != 0)).tocoo()
    rows, cols = pattern.row, pattern.col
    a_vals = np.asarray(A[rows, cols]).ravel()
    b_vals = np.asarray(B[rows, cols]).ravel()
    a_vals = np.where(a_vals > 0.0, a_vals, _ABSENT_WEIGHT)
    b_vals = np.where(b_vals > 0.0, b_vals, _ABSENT_WEIGHT)
    vals = a_vals ** (1.0 - alpha) * b_vals**alpha
    W = sp.csr_matrix((vals, (rows, cols)), shape=A.shape)
    return FuzzyGraph(W)


def _component_coords(W: sp.csr_matrix, d: int) -> np.ndarray:
    """Spectral coordinates for one connected component."""
    m = W.shape[0]
    if m == 1:
        return np.zeros((1, d))
    degrees = np.asarray(W.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(degrees)
    D = sp.diags(inv_sqrt)
    L = sp.identity(m, format="csr") - D @ W @ D
    want = min(d + 1, m)
    if m <= _DENSE_EIG_LIMIT:
        values, vectors = eigh(L.toarray(), subset_by_index=(0, want - 1))
    else:
        v0 = np.full(m, 1.0 / math.sqrt(m))
        values, vectors = eigsh(L.tocsc(), k=want, which="SA", v0=v0)
    order = np.argsort(values, kind="stable")
    coords = vectors[:, order[1:want]]
    # deterministic sign: the largest-magnitude entry of each axis is positive
    for j in range(coords.shape[1]):
        pivot = np.argmax(np.abs(coords[:, j]))
        if coords[pivot, j] < 0:
            coords[:, j] = -coords[:, j]
    if coords.shape[1] < d:
        coords = np.hstack([coords, np.zeros((m, d - coords.shape[1]))])
    return coords


def spectral_layout(graph: FuzzyGraph, d: int = 2) -> np.ndarray:
    """Initial layout from the normalized-Laplacian bottom spectrum.

    Connected components are embedded independently and strung out along the
    first axis with a fixed gap; the result is centered and uniformly scaled
    so the widest axis has unit variance. Per-axis scaling would equalize
    informative and noise directions, so the aspect ratio is kept.
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not graph.is_symmetric():
        raise ValueError("graph must be symmetric; apply symmetrize first")
    W = graph.weights
    n = graph.n_nodes
    n_comp, membership = connected_components(W, directed=False)
    layout = np.zeros((n, d))
    cursor = 0.0
    for comp in range(n_comp):
        nodes = np.flatnonzero(membership == comp)
        coords = _component_coords(W[nodes][:, nodes].tocsr(), d)
        coords = coords - coords.mean(axis=0)
        # bound each component's diameter so the inter-component gaps dominate
        peak = float(np.abs(coords).max())
        if peak > 0.0:
            coords *= _COMPONENT_RADIUS / peak
        low = float(coords[:, 0].min())
        span = float(coords[:, 0].max()) - low
        coords[:, 0] += cursor - low
        cursor += span + _COMPONENT_GAP
        layout[nodes] = coords
    layout = layout - layout.mean(axis=0)
    scale = float(layout.std(axis=0).max())
    if scale > 0.0:
        layout /= scale
    return layout


def sgd_refine(
    layout: np.ndarray,
    graph: FuzzyGraph,
    epochs: int = 30,
    seed: int = 0,
    learning_rate: float = 1.0,
    negative_samples: int = 5,
) -> np.ndarray:
    """Stochastic attraction/repulsion polish of an initial layout.

    Edges are visited in a fixed order each epoch and fire with probability
    equal to their weight; each firing also repels a handful of random
    points. Gradients use the heavy-tailed 1/(1+r^2) kernel with per-axis
    clipping, and the step size decays linearly to zero. ``epochs=0`` returns
    the layout unchanged.

    Updates run at a fixed working extent (clipped steps must be small
    relative to the layout, whatever scale the caller used) and the result is
    mapped back to the input's scale.
    """
    Y = np.array(layout, dtype=np.float64, copy=True)
    if Y.ndim != 2 or Y.shape[0] != graph.n_nodes:
        raise ValueError("layout shape does not match graph")
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    extent = float(np.abs(Y).max())
    if epochs == 0 or extent == 0.0:
        return Y
    working_scale = 10.0 / extent
    Y *= working_scale
    coo = graph.weights.tocoo()
    keep = coo.row < coo.col  # undirected: visit each edge once
    heads = coo.row[keep]
    tails = coo.col[keep]
    weights = coo.data[keep]
    edge_order = np.lexsort((tails, heads))
    heads, tails, weights = heads[edge_order], tails[edge_order], weights[edge_order]
    m = heads.size
    n = Y.shape[0]
    rng = np.random.default_rng(seed)
    clip = 4.0
    for epoch in range(epochs):
        lr = learning_rate * (1.0 - epoch / epochs)
        fire = rng.random(m) < weights
        negatives = rng.integers(0, n, size=(m, negative_samples))
        for e in np.flatnonzero(fire):
            i, j = int(heads[e]), int(tails[e])
            delta = Y[i] - Y[j]
            r2 = float(delta @ delta)
            grad = np.clip(-2.0 / (1.0 + r2) * delta, -clip, clip)
            Y[i] += lr * grad
            Y[j] -= lr * grad
            for other in negatives[e]:
                if other == i:
                    continue
                delta = Y[i] - Y[int(other)]
                r2 = float(delta @ delta)
                grad = np.clip(2.0 / ((0.001 + r2) * (1.0 + r2)) * delta, -clip, clip)
                Y[i] += lr * grad
    Y /= working_scale
    return Y


class GraphEmbedding(BaseEstimator):
    """End-to-end mixed-type embedding to a low-dimensional layout.

    ``fit_transform`` expects the numeric feature block and (optionally) the
    one-hot categorical block for the same rows. The embedding is
    transductive: there is no out-of-sample transform.
    """

    def __init__(
        self,
        n_neighbors: int = 15,
        n_components: int = 2,
        alpha: float = 0.5,
        epochs: int = 30,
        seed: int = 0,
    ):
        self.n_neighbors = n_neighbors
        self.n_components = n_components
        self.alpha = alpha
        self.epochs = epochs
        self.seed = seed

    def fit_transform(self, numeric=None, categorical=None) -> np.ndarray:
        if numeric is None and categorical is None:
            raise ValueError("need at least one feature block")
        graph_num = None
        graph_cat = None
        if numeric is not None:
            graph_num = symmetrize(knn_fuzzy_graph(numeric, self.n_neighbors, "euclidean"))
        if categorical is not None:
            graph_cat = symmetrize(knn_fuzzy_graph(categorical, self.n_neighbors, "dice"))
        if graph_num is None:
            graph = graph_cat
        elif graph_cat is None:
            graph = graph_num
        else:
            graph = intersect_graphs(graph_num, graph_cat, self.alpha)
        layout = spectral_layout(graph, self.n_components)
        layout = sgd_refine(layout, graph, epochs=self.epochs, seed=self.seed)
        self.graph_ = graph
        self.layout_ = layout
        return layout

    def fit(self, numeric=None, categorical=None) -> "GraphEmbedding":
        self.fit_transform(numeric, categorical)
        return self
