"""Customer-profile clustering: k-means, Ward agglomerative, and validation.

Estimators follow the scikit-learn fit/predict API and operate on plain
N x r feature arrays; the module-level functions wrap them into the
serializable :class:`ClusterModel` used by the segmentation pipeline.
Cluster labels are 0-based and canonicalized by first occurrence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array

from .errors import DegenerateDataError, SolverError

KMEANS = "kmeans"
HIERARCHICAL_WARD = "hierarchical-ward"
ALGORITHMS = (KMEANS, HIERARCHICAL_WARD)

FORMAT_VERSION = 1


@dataclass
class ClusterModel:
    """A fitted clustering with internal validation scores.

    ``objective`` is the within-cluster sum of squared Euclidean distances
    to the cluster means. ``sc``/``dbi`` are None when undefined for the
    partition (fewer than 2 clusters, singletons only, or coincident
    centroids for the DBI).
    """

    algorithm: str
    k: int
    assignments: np.ndarray
    centroids: np.ndarray
    objective: float
    sc: float | None = None
    dbi: float | None = None
    seed: int | None = None
    scores: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "algorithm": self.algorithm,
            "k": int(self.k),
            "assignments": [int(a) for a in self.assignments],
            "centroids": self.centroids.tolist(),
            "objective": float(self.objective),
            "sc": None if self.sc is None else float(self.sc),
            "dbi": None if self.dbi is None else float(self.dbi),
            "seed": self.seed,
            "scores": self.scores,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClusterModel":
        return cls(
            algorithm=data["algorithm"],
            k=int(data["k"]),
            assignments=np.asarray(data["assignments"], dtype=int),
            centroids=np.asarray(data["centroids"], dtype=float),
            objective=float(data["objective"]),
            sc=data.get("sc"),
            dbi=data.get("dbi"),
            seed=data.get("seed"),
            scores=data.get("scores", []),
        )


def _canonical_labels(labels: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Relabel clusters in order of first occurrence; reorder centers to match."""
    mapping: dict[int, int] = {}
    for lab in labels:
        if lab not in mapping:
            mapping[int(lab)] = len(mapping)
    new_labels = np.array([mapping[int(lab)] for lab in labels])
    order = sorted(mapping, key=mapping.get)
    return new_labels, centers[order]


def _within_ss(x: np.ndarray, labels: np.ndarray, centers: np.ndarray) -> float:
    return float(((x - centers[labels]) ** 2).sum())


# ---------------------------------------------------------------------------
# K-means
# ---------------------------------------------------------------------------


class LloydKMeans(BaseEstimator, ClusterMixin):
    """K-means with k-means++ seeding, restarts, and empty-cluster repair.

    Assignment ties are broken toward the lowest cluster index; the Lloyd
    objective is checked to be non-increasing at every iteration. Given the
    same seed and data the fit is fully deterministic.

    Attributes after fit:
        cluster_centers_: k x r means of the assigned rows.
        labels_: canonicalized 0-based assignments.
        inertia_: within-cluster sum of squared distances.
        n_iter_: Lloyd iterations of the winning restart.
        objective_path_: per-iteration objective of the winning restart.
    """

    def __init__(self, n_clusters=8, n_restarts=10, seed=0, max_iter=300, tol=1e-6):
        self.n_clusters = n_clusters
        self.n_restarts = n_restarts
        self.seed = seed
        self.max_iter = max_iter
        self.tol = tol

    def fit(self, X, y=None):
        x = check_array(X, dtype=float)
        n = x.shape[0]
        k = self.n_clusters
        if not 1 <= k <= n:
            raise ValueError(f"n_clusters must be in 1..{n}, got {k}")
        if self.n_restarts < 1:
            raise ValueError("n_restarts must be >= 1")
        rng = np.random.default_rng(self.seed)
        best = None
        for _ in range(self.n_restarts):
            init = _kmeans_pp(x, k, rng)
            labels, centers, path = _lloyd(x, init, self.max_iter, self.tol)
            obj = path[-1]
            if best is None or obj < best[2]:
                best = (labels, centers, obj, path)
        labels, centers, obj, path = best
        labels, centers = _canonical_labels(labels, centers)
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.inertia_ = obj
        self.n_iter_ = len(path)
        self.objective_path_ = path
        return self

    def predict(self, X):
        x = check_array(X, dtype=float)
        d2 = _sq_distances(x, self.cluster_centers_)
        return d2.argmin(axis=1)


def _sq_distances(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances via the Gram expansion (fast, O(nk) memory)."""
    d2 = (x * x).sum(axis=1)[:, None] + (centers * centers).sum(axis=1)[None, :]
    d2 -= 2.0 * x @ centers.T
    return np.maximum(d2, 0.0)


def _pairwise_distances(x: np.ndarray, block: int = 256) -> np.ndarray:
    """Exact blockwise pairwise Euclidean distances (no cancellation error)."""
    n = x.shape[0]
    dist = np.empty((n, n))
    for start in range(0, n, block):
        stop = min(start + block, n)
        diff = x[start:stop, None, :] - x[None, :, :]
        dist[start:stop] = np.sqrt((diff ** 2).sum(axis=2))
    return dist


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: D^2-weighted sampling of initial centers."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    chosen = np.zeros(n, dtype=bool)
    first = int(rng.integers(n))
    centers[0] = x[first]
    chosen[first] = True
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2[~chosen].sum()
        if total <= 0:
            # all remaining points coincide with a chosen center
            candidates = np.flatnonzero(~chosen)
            idx = int(candidates[rng.integers(len(candidates))])
        else:
            weights = np.where(chosen, 0.0, d2)
            idx = int(rng.choice(n, p=weights / weights.sum()))
        centers[j] = x[idx]
        chosen[idx] = True
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(x: np.ndarray, centers: np.ndarray, max_iter: int, tol: float):
    """Lloyd iterations from the given centers; returns (labels, centers, objective path)."""
    n, k = x.shape[0], centers.shape[0]
    centers = centers.copy()
    path: list[float] = []
    prev_obj = np.inf
    labels = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        d2 = _sq_distances(x, centers)
        labels = d2.argmin(axis=1)
        labels, centers, d2 = _repair_empty(x, labels, centers, d2)
        obj = _within_ss(x, labels, centers)
        if obj > prev_obj * (1 + 1e-12) + 1e-12:
            raise SolverError(f"Lloyd objective increased: {prev_obj} -> {obj}")
        path.append(obj)
        prev_obj = obj
        new_centers = np.vstack([x[labels == j].mean(axis=0) for j in range(k)])
        shift = np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max()
        centers = new_centers
        if shift < tol:
            break
    # final assignment against the converged means
    d2 = _sq_distances(x, centers)
    labels = d2.argmin(axis=1)
    labels, centers, d2 = _repair_empty(x, labels, centers, d2)
    centers = np.vstack([x[labels == j].mean(axis=0) for j in range(k)])
    obj = _within_ss(x, labels, centers)
    if obj > prev_obj * (1 + 1e-12) + 1e-12:
        raise SolverError("Lloyd objective increased at finalization")
    path.append(obj)
    return labels, centers, path


def _repair_empty(x, labels, centers, d2):
    """Reseed each empty cluster at the point farthest from its own centroid."""
    n, k = d2.shape
    for _ in range(n):
        counts = np.bincount(labels, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if len(empty) == 0:
            return labels, centers, d2
        own = d2[np.arange(n), labels]
        far = int(own.argmax())
        if own[far] <= 0:
            break
        centers = centers.copy()
        centers[empty[0]] = x[far]
        d2 = _sq_distances(x, centers)
        labels = d2.argmin(axis=1)
    counts = np.bincount(labels, minlength=k)
    if np.any(counts == 0):
        raise DegenerateDataError(
            f"cannot form {k} non-empty clusters (fewer than {k} distinct rows)"
        )
    return labels, centers, d2


# ---------------------------------------------------------------------------
# Agglomerative (Ward)
# ---------------------------------------------------------------------------


def _ward_tree(x: np.ndarray):
    """Full Ward merge sequence down to one cluster.

    Returns a list of (rep_i, rep_j, cost) with rep_i < rep_j the smallest
    original row indices of the two merged clusters and ``cost`` the increase
    in total within-cluster sum of squares. Merge ties are broken toward the
    lowest pair index.
    """
    n = x.shape[0]
    means = x.astype(float).copy()
    sizes = np.ones(n)
    alive = np.ones(n, dtype=bool)

    # w[i, j] = increase in total within-cluster SS if clusters i and j merge
    d2 = _sq_distances(means, means)
    w = d2 * (sizes[:, None] * sizes[None, :]) / (sizes[:, None] + sizes[None, :])
    w[np.tril_indices(n)] = np.inf

    merges: list[tuple[int, int, float]] = []
    for _ in range(n - 1):
        flat = int(np.argmin(w))
        i, j = divmod(flat, n)
        cost = float(w[i, j])
        merges.append((i, j, cost))
        ni, nj = sizes[i], sizes[j]
        means[i] = (ni * means[i] + nj * means[j]) / (ni + nj)
        sizes[i] = ni + nj
        alive[j] = False
        w[j, :] = np.inf
        w[:, j] = np.inf
        others = np.flatnonzero(alive)
        others = others[others != i]
        if len(others):
            d2_new = ((means[others] - means[i]) ** 2).sum(axis=1)
            w_new = d2_new * (sizes[others] * sizes[i]) / (sizes[others] + sizes[i])
            lo_mask = others < i
            w[others[lo_mask], i] = w_new[lo_mask]
            w[i, others[~lo_mask]] = w_new[~lo_mask]
    return merges


def _cut_tree(merges, n: int, k: int) -> np.ndarray:
    """Labels of the k-cluster cut of a Ward merge sequence."""
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i, j, _ in merges[: n - k]:
        parent[find(j)] = find(i)
    roots = [find(i) for i in range(n)]
    return np.asarray(roots)


class WardAgglomerative(BaseEstimator, ClusterMixin):
    """Agglomerative clustering with Ward linkage, cut to ``n_clusters``.

    Deterministic: merge ties are broken toward the lowest pair index.
    ``merge_history_`` holds (rep_i, rep_j, cost) tuples where the reps are
    the smallest original row indices of the two merged clusters.
    """

    def __init__(self, n_clusters=2):
        self.n_clusters = n_clusters

    def fit(self, X, y=None):
        x = check_array(X, dtype=float)
        n = x.shape[0]
        k = self.n_clusters
        if not 1 <= k <= n:
            raise ValueError(f"n_clusters must be in 1..{n}, got {k}")
        merges = _ward_tree(x)
        labels = _cut_tree(merges, n, k)
        labels, _ = _canonical_labels(labels, np.zeros((n, 1)))
        centers = np.vstack([x[labels == j].mean(axis=0) for j in range(k)])
        self.labels_ = labels
        self.cluster_centers_ = centers
        self.merge_history_ = merges
        self.inertia_ = _within_ss(x, labels, centers)
        return self


# ---------------------------------------------------------------------------
# Internal validation indices
# ---------------------------------------------------------------------------


def silhouette(features, assignments) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Points in singleton clusters contribute 0. Requires at least two
    non-empty clusters.
    """
    x = _features_array(features)
    labels = np.asarray(assignments, dtype=int)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("silhouette requires at least 2 clusters")
    n = x.shape[0]
    dist = _pairwise_distances(x)
    sums = np.stack([dist[:, labels == c].sum(axis=1) for c in uniq], axis=1)
    counts = np.array([(labels == c).sum() for c in uniq])
    own = np.searchsorted(uniq, labels)
    own_count = counts[own]
    a = sums[np.arange(n), own] / np.maximum(own_count - 1, 1)
    means = sums / counts[None, :]
    means[np.arange(n), own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    s = np.zeros(n)
    valid = (own_count > 1) & (denom > 0)
    s[valid] = (b[valid] - a[valid]) / denom[valid]
    return float(s.mean())


def davies_bouldin(features, assignments) -> float:
    """Davies-Bouldin index with Euclidean centroid distances (lower is better)."""
    x = _features_array(features)
    labels = np.asarray(assignments, dtype=int)
    uniq = np.unique(labels)
    k = len(uniq)
    if k < 2:
        raise ValueError("Davies-Bouldin requires at least 2 clusters")
    centers = np.vstack([x[labels == c].mean(axis=0) for c in uniq])
    disp = np.array([
        np.sqrt(((x[labels == c] - centers[i]) ** 2).sum(axis=1)).mean()
        for i, c in enumerate(uniq)
    ])
    sep = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
    worst = np.zeros(k)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            if sep[i, j] <= 0:
                raise ValueError(f"coincident centroids for clusters {i} and {j}")
            worst[i] = max(worst[i], (disp[i] + disp[j]) / sep[i, j])
    return float(worst.mean())


def _features_array(features) -> np.ndarray:
    values = getattr(features, "values", features)
    return check_array(values, dtype=float)


def _safe_scores(x: np.ndarray, labels: np.ndarray):
    try:
        sc = silhouette(x, labels)
    except ValueError:
        sc = None
    try:
        dbi = davies_bouldin(x, labels)
    except ValueError:
        dbi = None
    return sc, dbi


# ---------------------------------------------------------------------------
# Functional wrappers and model selection
# ---------------------------------------------------------------------------


def kmeans(features, k: int, seed: int = 0, restarts: int = 10) -> ClusterModel:
    """Best-of-restarts k-means on a FeatureMatrix or plain array."""
    x = _features_array(features)
    est = LloydKMeans(n_clusters=k, n_restarts=restarts, seed=seed).fit(x)
    sc, dbi = _safe_scores(x, est.labels_)
    return ClusterModel(KMEANS, k, est.labels_, est.cluster_centers_,
                        est.inertia_, sc, dbi, seed)


def hierarchical(features, k: int) -> ClusterModel:
    """Ward-linkage agglomerative clustering cut to k clusters."""
    x = _features_array(features)
    est = WardAgglomerative(n_clusters=k).fit(x)
    sc, dbi = _safe_scores(x, est.labels_)
    return ClusterModel(HIERARCHICAL_WARD, k, est.labels_, est.cluster_centers_,
                        est.inertia_, sc, dbi, None)


def select_model(features, k_range: tuple[int, int], algorithms=ALGORITHMS,
                 seed: int = 0, restarts: int = 10) -> ClusterModel:
    """Grid over (algorithm, k); rank by SC desc, then DBI asc, then smaller k.

    The returned model carries the full score table in ``scores``.
    """
    x = _features_array(features)
    n = x.shape[0]
    lo, hi = int(k_range[0]), int(k_range[1])
    if lo > hi or lo < 1:
        raise ValueError(f"invalid k range [{lo}, {hi}]")
    algorithms = list(algorithms)
    if not algorithms:
        raise ValueError("no algorithms given")
    for algo in algorithms:
        if algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {algo!r}")
    if lo > n:
        raise ValueError(f"smallest k ({lo}) exceeds the {n} observations")
    ks = [k for k in range(lo, hi + 1) if k <= n]

    candidates: list[ClusterModel] = []
    merges = _ward_tree(x) if HIERARCHICAL_WARD in algorithms else None
    for algo in algorithms:
        for k in ks:
            if algo == KMEANS:
                model = kmeans(x, k, seed=seed, restarts=restarts)
            else:
                labels = _cut_tree(merges, n, k)
                labels, _ = _canonical_labels(labels, np.zeros((n, 1)))
                centers = np.vstack([x[labels == j].mean(axis=0) for j in range(k)])
                sc, dbi = _safe_scores(x, labels)
                model = ClusterModel(HIERARCHICAL_WARD, k, labels, centers,
                                     _within_ss(x, labels, centers), sc, dbi, None)
            candidates.append(model)

    def rank_key(item):
        idx, m = item
        sc = -np.inf if m.sc is None else m.sc
        dbi = np.inf if m.dbi is None else m.dbi
        return (-sc, dbi, m.k, idx)

    order = sorted(enumerate(candidates), key=rank_key)
    winner = order[0][1]
    winner.scores = [
        {"algorithm": m.algorithm, "k": m.k, "sc": m.sc, "dbi": m.dbi,
         "objective": m.objective}
        for m in candidates
    ]
    return winner
