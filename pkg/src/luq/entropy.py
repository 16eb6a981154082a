"""Activation entropy profiling.

A layer's entropy is the Shannon entropy (nats) of how its pooled output
tokens fall into K k-means clusters. Layers are ordered by ascending entropy;
K itself is picked where the ordering stops changing as K grows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_ITERS = 100
REL_TOL = 1e-4
DEFAULT_K = 100
DEFAULT_GRID = tuple(range(10, 201, 10))
TIE_BREAK = "lower-layer-index"


@dataclass
class ClusterModel:
    K: int
    centroids: np.ndarray
    iterations: int
    inertia: float
    seed: int
    inertia_trace: list = field(default_factory=list)


@dataclass
class EntropyProfile:
    H: np.ndarray  # per layer, nats
    K: int
    pi: list  # 1-indexed layers, ascending entropy
    seed: int = 0
    tie_break: str = TIE_BREAK

    def to_json(self) -> dict:
        return {"K": int(self.K), "H": [float(h) for h in self.H], "pi": [int(p) for p in self.pi], "seed": int(self.seed)}

    @classmethod
    def from_json(cls, obj: dict) -> "EntropyProfile":
        return cls(np.asarray(obj["H"], dtype=np.float64), int(obj["K"]), [int(p) for p in obj["pi"]], int(obj.get("seed", 0)))


@dataclass
class StabilityCurve:
    grid: list
    distances: list
    selected_K: int
    knee_found: bool
    sensitivity: float = 1.0
    orderings: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "grid": [int(k) for k in self.grid],
            "distances": [float(x) for x in self.distances],
            "selected_K": int(self.selected_K),
            "knee_found": bool(self.knee_found),
            "sensitivity": float(self.sensitivity),
        }


class GridTooSmallError(ValueError):
    pass


# ------------------------------------------------------------------ clustering


def pool_tokens(acts, layer: int) -> np.ndarray:
    """Flatten layer ``layer`` (0-indexed) activations [n, N, d] to [n*N, d]."""
    X = np.asarray(acts[layer])
    return X.reshape(-1, X.shape[-1])


def sq_distances(tokens: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    x2 = np.einsum("ij,ij->i", tokens, tokens)[:, None]
    c2 = np.einsum("ij,ij->i", centroids, centroids)[None, :]
    return np.maximum(x2 - 2.0 * tokens @ centroids.T + c2, 0.0)


def kmeans_plusplus(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    M = X.shape[0]
    chosen = [int(rng.integers(M))]
    d2 = sq_distances(X, X[chosen[-1]][None])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(M, p=d2 / total))
        else:
            idx = int(rng.integers(M))
        chosen.append(idx)
        d2 = np.minimum(d2, sq_distances(X, X[idx][None])[:, 0])
    return X[chosen].copy()


def assign(model_or_centroids, tokens) -> np.ndarray:
    """Nearest centroid per token; exact ties go to the lowest cluster index."""
    C = model_or_centroids.centroids if isinstance(model_or_centroids, ClusterModel) else model_or_centroids
    X = np.asarray(tokens, dtype=np.float64)
    C = np.asarray(C, dtype=np.float64)
    if X.shape[-1] != C.shape[-1]:
        raise ValueError("token width does not match centroid width")
    return np.argmin(sq_distances(X, C), axis=1)


def kmeans_fit(tokens, K: int, seed: int = 0, max_iters: int = MAX_ITERS, tol: float = REL_TOL) -> ClusterModel:
    X = np.asarray(tokens, dtype=np.float64)
    M = X.shape[0]
    if K < 1 or M < K:
        raise ValueError(f"need at least K={K} tokens, got {M}")
    rng = np.random.default_rng(seed)
    C = kmeans_plusplus(X, K, rng)
    trace = []
    it = 0
    for it in range(1, max_iters + 1):
        D = sq_distances(X, C)
        labels = np.argmin(D, axis=1)
        trace.append(float(D[np.arange(M), labels].sum()))
        counts = np.bincount(labels, minlength=K)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        new_C = C.copy()
        filled = counts > 0
        new_C[filled] = sums[filled] / counts[filled, None]
        empty = np.flatnonzero(~filled)
        if empty.size:
            # re-seed each empty cluster on the currently worst-served token
            far = D[np.arange(M), labels].copy()
            for k in empty:
                j = int(np.argmax(far))
                new_C[k] = X[j]
                far[j] = -1.0
        shift = np.linalg.norm(new_C - C)
        scale = max(np.linalg.norm(C), np.finfo(float).tiny)
        C = new_C
        if shift / scale < tol:
            break
    D = sq_distances(X, C)
    inertia = float(D.min(axis=1).sum())
    trace.append(inertia)
    return ClusterModel(K, C.astype(np.float32), it, inertia, seed, trace)


def empirical_distribution(assignments, K: int) -> np.ndarray:
    a = np.asarray(assignments).reshape(-1)
    if a.size == 0:
        raise ValueError("empty assignment list")
    if a.min() < 0 or a.max() >= K:
        raise ValueError("cluster id out of range")
    return np.bincount(a, minlength=K).astype(np.float64) / a.size


def shannon_entropy(P) -> float:
    P = np.asarray(P, dtype=np.float64)
    if np.any(P < 0):
        raise ValueError("negative probability mass")
    if abs(P.sum() - 1.0) > 1e-6:
        raise ValueError("probabilities do not sum to 1")
    nz = P[P > 0]
    return float(-np.sum(nz * np.log(nz)))


# ------------------------------------------------------------------ profiling


def entropy_order(H) -> list:
    """1-indexed layers sorted by ascending entropy; ties keep layer order."""
    H = np.asarray(H, dtype=np.float64)
    return [int(i) + 1 for i in np.argsort(H, kind="stable")]


def layer_entropy(tokens, K: int, seed: int = 0) -> float:
    model = kmeans_fit(tokens, K, seed)
    return shannon_entropy(empirical_distribution(assign(model, tokens), K))


def layer_entropy_profile(acts, K: int = DEFAULT_K, seed: int = 0) -> EntropyProfile:
    # every layer gets a fresh generator from the same seed, so identical
    # activations always give identical entropies
    H = np.array([layer_entropy(pool_tokens(acts, i), K, seed) for i in range(len(acts))])
    return EntropyProfile(H, int(K), entropy_order(H), int(seed))


# ------------------------------------------------------------------ choosing K


def kendall_distance(rank_a, rank_b) -> float:
    """Fraction of item pairs the two permutations order differently."""
    a = np.asarray(rank_a)
    b = np.asarray(rank_b)
    n = a.size
    if b.size != n:
        raise ValueError("rankings differ in length")
    if n < 2:
        raise ValueError("need at least two items")
    if sorted(a.tolist()) != sorted(b.tolist()) or len(set(a.tolist())) != n:
        raise ValueError("rankings must be permutations of the same items")
    pos_a = {v: i for i, v in enumerate(a.tolist())}
    pos_b = {v: i for i, v in enumerate(b.tolist())}
    items = a.tolist()
    pa = np.array([pos_a[v] for v in items])
    pb = np.array([pos_b[v] for v in items])
    da = np.sign(pa[:, None] - pa[None, :])
    db = np.sign(pb[:, None] - pb[None, :])
    discordant = int(np.sum(np.triu(da * db < 0, k=1)))
    return discordant / (n * (n - 1) / 2)


def kneedle_elbow(xs, ys, sensitivity: float = 1.0):
    """Knee of a decreasing convex curve. Returns ``(x, found)``.

    Falls back to the largest x with ``found=False`` when the normalised
    difference curve has no peak that survives the sensitivity threshold.
    """
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.size < 3 or x.size != y.size:
        raise GridTooSmallError("grid too small: kneedle needs at least 3 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        return xs[-1], False
    xn = (x - x.min()) / np.ptp(x)
    yn = (y - y.min()) / np.ptp(y)
    diff = (1.0 - yn) - xn
    peak = int(np.argmax(diff))
    if diff[peak] <= 1e-12:
        return xs[-1], False
    threshold = diff[peak] - sensitivity * float(np.mean(np.diff(xn)))
    if np.any(diff[peak + 1:] < threshold):
        return xs[peak], True
    return xs[-1], False


def rank_stability_curve(acts, grid=DEFAULT_GRID, seed: int = 0, sensitivity: float = 1.0) -> StabilityCurve:
    grid = [int(k) for k in grid]
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("K grid must be strictly ascending")
    if len(grid) < 2:
        raise GridTooSmallError("grid too small: need at least 2 K values for a stability curve")
    orders = [layer_entropy_profile(acts, K, seed).pi for K in grid]
    distances = [kendall_distance(a, b) for a, b in zip(orders, orders[1:])]
    # distance j compares grid[j] with grid[j+1]; it is plotted at grid[j+1]
    xs = grid[1:]
    if len(xs) < 3:
        K, found = grid[-1], False  # too few points to locate a knee
    else:
        K, found = kneedle_elbow(xs, distances, sensitivity)
    return StabilityCurve(grid, distances, int(K), bool(found), sensitivity, orders)
