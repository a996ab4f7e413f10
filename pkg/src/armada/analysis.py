"""Evaluation metrics and representation diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericError, ParameterError


def accuracy(predictions, labels) -> float:
    p, y = np.asarray(predictions), np.asarray(labels)
    if p.shape != y.shape or p.size == 0:
        raise DataError("predictions and labels must be equal-length and nonempty")
    return float(np.mean(p == y))


def _binary(x, what: str) -> np.ndarray:
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise DataError(f"{what} must be binary (0/1)")
    return x.astype(bool)


def mcc(predictions, labels) -> float:
    """Matthews correlation; 0 when any marginal count is zero."""
    p, y = _binary(predictions, "predictions"), _binary(labels, "labels")
    if p.shape != y.shape or p.size == 0:
        raise DataError("predictions and labels must be equal-length and nonempty")
    tp = float(np.sum(p & y))
    tn = float(np.sum(~p & ~y))
    fp = float(np.sum(p & ~y))
    fn = float(np.sum(~p & y))
    denom = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    if denom == 0:
        return 0.0
    return (tp * tn - fp * fn) / math.sqrt(denom)


def pearson(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 2:
        raise DataError("pearson needs two equal-length samples of size >= 2")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(np.dot(dx, dx)), math.sqrt(np.dot(dy, dy))
    if sx == 0 or sy == 0:
        raise NumericError("pearson undefined for a constant sample")
    return float(np.dot(dx, dy) / (sx * sy))


def _ranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (ties share the mean of their positions)."""
    order = np.argsort(x, kind="mergesort")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    return pearson(_ranks(np.asarray(x, float)), _ranks(np.asarray(y, float)))


# ---------------------------------------------------------------------------
# clustering


@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    inertia: list[float]
    iterations: int


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    d = (points * points).sum(1)[:, None] - 2.0 * points @ centers.T + (centers * centers).sum(1)[None, :]
    return np.maximum(d, 0.0)


def kmeans(points, k: int, seed, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """k-means++ seeding followed by Lloyd iterations."""
    x = np.asarray(points, dtype=float)
    n = x.shape[0]
    if k < 1 or n < k:
        raise ParameterError(f"need at least k={k} >= 1 points, got {n}")
    rng = np.random.default_rng(seed)
    centers = [x[rng.integers(n)]]
    for _ in range(1, k):
        d = _sq_dists(x, np.array(centers)).min(axis=1)
        total = d.sum()
        idx = rng.choice(n, p=d / total) if total > 0 else rng.integers(n)
        centers.append(x[idx])
    centers = np.array(centers)

    inertia: list[float] = []
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        assign = d.argmin(axis=1)
        inertia.append(float(d[np.arange(n), assign].sum()))
        new = centers.copy()
        for j in range(k):
            members = x[assign == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.max(np.linalg.norm(new - centers, axis=1)))
        centers = new
        if shift < tol:
            break
    d = _sq_dists(x, centers)
    assign = d.argmin(axis=1)
    inertia.append(float(d[np.arange(n), assign].sum()))
    return KMeansResult(assign, centers, inertia, it)


def cluster_purity(assignments, labels) -> float:
    """Fraction of points carrying their cluster's majority label."""
    c, y = np.asarray(assignments), np.asarray(labels)
    if c.shape != y.shape or c.size == 0:
        raise DataError("assignments and labels must be equal-length and nonempty")
    hits = 0
    for k in np.unique(c):
        _, counts = np.unique(y[c == k], return_counts=True)
        hits += counts.max()
    return hits / c.size


def silhouette(points, labels) -> float:
    """Mean silhouette coefficient with Euclidean distances.

    Points alone in their group score 0.
    """
    x, y = np.asarray(points, dtype=float), np.asarray(labels)
    groups = np.unique(y)
    if len(groups) < 2:
        raise ParameterError("silhouette needs at least two distinct labels")
    dist = np.sqrt(_sq_dists(x, x))
    np.fill_diagonal(dist, 0.0)
    masks = [y == g for g in groups]
    sizes = np.array([m.sum() for m in masks])
    # mean distance from each point to every group
    means = np.stack([dist[:, m].sum(axis=1) for m in masks], axis=1)
    own = np.searchsorted(groups, y)
    own_size = sizes[own]
    a = np.where(own_size > 1, means[np.arange(len(y)), own] / np.maximum(own_size - 1, 1), 0.0)
    other = means / sizes[None, :]
    other[np.arange(len(y)), own] = np.inf
    b = other.min(axis=1)
    s = np.where(own_size > 1, (b - a) / np.maximum(np.maximum(a, b), 1e-300), 0.0)
    return float(s.mean())


@dataclass
class ClusterReport:
    assignments: np.ndarray
    centroids: np.ndarray
    purity: float
    silhouette: float


def cluster_report(points, labels, k: int = 2, seed=0) -> ClusterReport:
    """KMeans purity against ``labels`` plus the silhouette of ``labels`` grouping."""
    km = kmeans(points, k, seed)
    labels = np.asarray(labels)
    sil = silhouette(points, labels) if len(np.unique(labels)) > 1 else 0.0
    return ClusterReport(km.assignments, km.centroids, cluster_purity(km.assignments, labels), sil)


# ---------------------------------------------------------------------------
# Welch test


@dataclass
class StatResult:
    statistic: float
    p_value: float
    df: float
    tail: str = "one_sided_greater"


def _betacf(a: float, b: float, x: float, tol: float = 1e-10, max_iter: int = 500) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = 1.0 / (d if abs(d) > tiny else tiny)
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = 1.0 / (d if abs(d) > tiny else tiny)
        c = 1.0 + aa / c
        c = c if abs(c) > tiny else tiny
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise NumericError(f"incomplete beta continued fraction did not converge (a={a}, b={b}, x={x})")


def betainc_regularized(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta ``I_x(a, b)``."""
    if not 0.0 <= x <= 1.0:
        raise ParameterError(f"x must lie in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b) + a * math.log(x) + b * math.log1p(-x)
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf(t: float, df: float) -> float:
    """Upper tail ``P(T > t)`` of Student's t with ``df`` degrees of freedom."""
    tail = 0.5 * betainc_regularized(df / 2.0, 0.5, df / (df + t * t))
    return tail if t >= 0 else 1.0 - tail


def welch_t_one_sided(a, b) -> StatResult:
    """Welch test of ``mean(a) > mean(b)``."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise ParameterError("each sample needs at least two observations")
    va, vb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    se2 = va + vb
    if se2 == 0:
        raise NumericError("both samples have zero variance")
    t = (a.mean() - b.mean()) / math.sqrt(se2)
    df = se2 * se2 / (va * va / (a.size - 1) + vb * vb / (b.size - 1))
    p = min(1.0, max(0.0, t_sf(t, df)))
    return StatResult(float(t), float(p), float(df))


def sensitivity_score(performances, sigmas) -> float:
    """``Var(performance) / Var(sigma)`` with sample (n-1) variances."""
    p, s = np.asarray(performances, dtype=float), np.asarray(sigmas, dtype=float)
    if p.shape != s.shape or p.size < 2:
        raise DataError("need equal-length performance and sigma lists of size >= 2")
    vs = s.var(ddof=1)
    if vs == 0:
        raise NumericError("sigma grid has zero variance")
    return float(p.var(ddof=1) / vs)
