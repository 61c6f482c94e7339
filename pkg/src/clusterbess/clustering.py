"""Cell clustering on (SoC, temperature, resistance) features.

Lloyd's k-means with k-means++ seeding, the gap statistic for choosing k,
and per-cluster deviation measures used by the adaptive balancing bounds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ITER = 100


@dataclass(frozen=True)
class FeatureScaler:
    """Z-score scaling fitted on a population; zero-variance axes map to 0."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, raw: np.ndarray) -> FeatureScaler:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        if raw.shape[0] < 1:
            raise ValueError("need at least one cell")
        mean = raw.mean(axis=0)
        std = raw.std(axis=0)
        return cls(mean, np.where(std > 0, std, 1.0))

    def transform(self, raw: np.ndarray) -> np.ndarray:
        return (np.asarray(raw, dtype=float) - self.mean) / self.scale

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=float) * self.scale + self.mean


def normalize_features(cells) -> tuple[np.ndarray, FeatureScaler]:
    """Z-score each (q, T, R) coordinate over the population."""
    raw = np.atleast_2d(np.asarray(cells, dtype=float))
    scaler = FeatureScaler.fit(raw)
    return scaler.transform(raw), scaler


@dataclass
class ClusterAssignment:
    labels: np.ndarray
    centroids: np.ndarray
    k: int
    inertia: float
    history: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    max_dev_q: np.ndarray | None = None
    max_dev_T: np.ndarray | None = None

    def members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.labels == j)


def _sq_dist(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    d = X[:, None, :] - C[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


def kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining points coincide with a center; any pick will do
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _repair_empty(X, labels, d2, k):
    counts = np.bincount(labels, minlength=k)
    for j in np.flatnonzero(counts == 0):
        own = d2[np.arange(len(X)), labels]
        movable = counts[labels] > 1
        if not movable.any():
            break
        own = np.where(movable, own, -1.0)
        i = int(np.argmax(own))
        counts[labels[i]] -= 1
        labels[i] = j
        counts[j] += 1
    return labels


def _inertia(X, labels, C) -> float:
    diff = X - C[labels]
    return float(np.einsum("ij,ij->", diff, diff))


def kmeans(
    points,
    k: int,
    seed=0,
    init: np.ndarray | None = None,
    max_iter: int = MAX_ITER,
) -> ClusterAssignment:
    """Lloyd iterations until the labels stop changing or ``max_iter``.

    Ties go to the lowest centroid index; an empty cluster takes the point
    farthest from its own centroid.  ``seed`` is anything numpy's
    ``default_rng`` accepts.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    n = X.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, {n}]")
    if init is None:
        C = kmeans_pp(X, k, np.random.default_rng(seed))
    else:
        C = np.array(init, dtype=float, copy=True)
        if C.shape != (k, X.shape[1]):
            raise ValueError("init centroids have the wrong shape")

    labels = None
    history: list[float] = []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d2 = _sq_dist(X, C)
        new = np.argmin(d2, axis=1)
        new = _repair_empty(X, new, d2, k)
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(C)
        np.add.at(sums, labels, X)
        C = sums / counts[:, None]
        history.append(_inertia(X, labels, C))
    return ClusterAssignment(
        labels=labels,
        centroids=C,
        k=k,
        inertia=_inertia(X, labels, C),
        history=history,
        iterations=it,
        converged=converged,
    )


def max_deviation(assignment: ClusterAssignment, soc, temperature) -> tuple[np.ndarray, np.ndarray]:
    """Largest |cell - centroid| per cluster, in raw SoC and kelvin."""
    soc = np.asarray(soc, dtype=float)
    temperature = np.asarray(temperature, dtype=float)
    k = assignment.k
    d_q = np.zeros(k)
    d_T = np.zeros(k)
    for j in range(k):
        idx = assignment.members(j)
        if len(idx) == 0:
            continue
        d_q[j] = np.max(np.abs(soc[idx] - soc[idx].mean()))
        d_T[j] = np.max(np.abs(temperature[idx] - temperature[idx].mean()))
    assignment.max_dev_q = d_q
    assignment.max_dev_T = d_T
    return d_q, d_T


def _log_w(X, k, seed, n_init):
    best = min(kmeans(X, k, seed=seed + 7919 * r).inertia for r in range(n_init))
    return np.log(max(best, 1e-300))


@dataclass
class GapResult:
    k: int
    gaps: np.ndarray
    s: np.ndarray


def gap_statistic(points, k_max: int = 20, B: int = 10, seed: int = 0, n_init: int = 3) -> GapResult:
    """Tibshirani's gap statistic with uniform references over the bounding box.

    Returns the smallest k with Gap(k) >= Gap(k+1) - s(k+1); evaluation stops
    as soon as that k is found.
    """
    if k_max < 1 or B < 1:
        raise ValueError("k_max and B must be at least 1")
    X = np.atleast_2d(np.asarray(points, dtype=float))
    distinct = len(np.unique(X, axis=0))
    if distinct < 2 or k_max == 1:
        return GapResult(1, np.zeros(0), np.zeros(0))
    k_max = min(k_max, distinct)
    lo, hi = X.min(axis=0), X.max(axis=0)
    rng = np.random.default_rng(seed)
    refs = [rng.uniform(lo, hi, size=X.shape) for _ in range(B)]

    gaps, s = [], []

    def evaluate(k):
        ref_logs = np.array([_log_w(R, k, seed + 104729 * (b + 1), n_init) for b, R in enumerate(refs)])
        gaps.append(ref_logs.mean() - _log_w(X, k, seed, n_init))
        s.append(ref_logs.std() * np.sqrt(1.0 + 1.0 / B))

    evaluate(1)
    for k in range(1, k_max):
        evaluate(k + 1)
        if gaps[k - 1] >= gaps[k] - s[k]:
            return GapResult(k, np.array(gaps), np.array(s))
    return GapResult(k_max, np.array(gaps), np.array(s))


def select_k_gap(points, k_max: int = 20, B: int = 10, seed: int = 0) -> int:
    return gap_statistic(points, k_max=k_max, B=B, seed=seed).k


def select_k_tolerance(
    points,
    soc,
    temperature,
    k_max: int,
    tol_q: float,
    tol_T: float,
    seed=0,
    resistance=None,
    tol_R: float | None = None,
    warm: np.ndarray | None = None,
    start: int | None = None,
) -> ClusterAssignment:
    """Smallest k whose clusters keep every member within the given deviations.

    ``points`` are the normalized features; deviations are measured in raw
    units.  Without ``start`` every k from 1 is tried in turn.  With ``start``
    (the previous k) the search walks down while the tolerance still holds,
    or up until it first holds, which tracks a slowly drifting k in a few
    runs.  ``warm`` centroids seed the run whose k matches their count.
    Falls back to ``k_max``.
    """
    X = np.atleast_2d(np.asarray(points, dtype=float))
    k_max = max(1, min(k_max, X.shape[0]))
    res = None if resistance is None else np.asarray(resistance, dtype=float)
    cache: dict[int, tuple[ClusterAssignment, bool]] = {}

    def run(k):
        if k not in cache:
            init = warm if warm is not None and len(warm) == k else None
            a = kmeans(X, k, seed=_seed(seed, k), init=init)
            d_q, d_T = max_deviation(a, soc, temperature)
            ok = d_q.max() <= tol_q and d_T.max() <= tol_T
            if ok and res is not None and tol_R is not None:
                ok = all(np.ptp(res[a.members(j)]) / 2 <= tol_R for j in range(k))
            cache[k] = (a, ok)
        return cache[k]

    if start is None:
        for k in range(1, k_max + 1):
            a, ok = run(k)
            if ok:
                return a
        return a
    k = int(np.clip(start, 1, k_max))
    a, ok = run(k)
    if ok:
        while k > 1:
            b, ok_b = run(k - 1)
            if not ok_b:
                break
            k, a = k - 1, b
        return a
    while k < k_max:
        k += 1
        a, ok = run(k)
        if ok:
            break
    return a


def _seed(seed, k):
    base = list(seed) if isinstance(seed, (list, tuple)) else [int(seed)]
    return base + [k]
