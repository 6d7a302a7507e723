"""Seeded sampling, PCA, k-means, and descriptive statistics for the data generators.

Randomness comes from numpy's PCG64 stream, so equal seeds reproduce the
same draws bit for bit on every platform.
"""

from __future__ import annotations

import numpy as np

from .errors import ParameterError, RankError

KMEANS_MAX_ITER = 300
POWER_ITER_TOL = 1e-10
POWER_ITER_MAX = 10_000
EIG_COL_LIMIT = 512


class SeededRng:
    """Deterministic random stream (PCG64) owned by a single caller."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self.gen = np.random.Generator(np.random.PCG64(self.seed))


def sample(rng: SeededRng, dist: tuple, n: int) -> np.ndarray:
    """Draw ``n`` independent values from ``dist``.

    ``dist`` is a tuple naming the distribution and its parameters:
    ("normal", mu, sigma), ("uniform", a, b), ("binomial", p) with p a
    scalar or an array of per-draw probabilities, or ("inv_gamma", alpha,
    beta) with beta the rate of the underlying gamma.
    """
    if n < 0:
        raise ParameterError("sample size must be non-negative")
    kind = dist[0]
    if kind == "normal":
        _, mu, sigma = dist
        if sigma <= 0:
            raise ParameterError(f"normal sigma must be > 0, got {sigma}")
        return rng.gen.normal(mu, sigma, size=n)
    if kind == "uniform":
        _, a, b = dist
        if not a < b:
            raise ParameterError(f"uniform bounds must satisfy a < b, got [{a}, {b})")
        return rng.gen.uniform(a, b, size=n)
    if kind == "binomial":
        _, p = dist
        p = np.asarray(p, dtype=np.float64)
        if np.any(p < 0) or np.any(p > 1):
            raise ParameterError("binomial p must lie in [0, 1]")
        if p.ndim == 0:
            return rng.gen.binomial(1, float(p), size=n).astype(np.float64)
        if p.size != n:
            raise ParameterError(f"binomial p array has {p.size} entries, expected {n}")
        return rng.gen.binomial(1, p.ravel()).astype(np.float64)
    if kind == "inv_gamma":
        _, alpha, beta = dist
        if alpha <= 0 or beta <= 0:
            raise ParameterError(f"inv_gamma needs alpha > 0 and beta > 0, got ({alpha}, {beta})")
        return 1.0 / rng.gen.gamma(shape=alpha, scale=1.0 / beta, size=n)
    raise ParameterError(f"unknown distribution {kind!r}")


def stddev(v) -> float:
    """Population standard deviation (divisor n)."""
    v = np.asarray(v, dtype=np.float64)
    if v.size < 1:
        raise ParameterError("stddev needs at least one value")
    return float(np.sqrt(np.mean((v - v.mean()) ** 2)))


def _fix_signs(components: np.ndarray) -> np.ndarray:
    # deterministic orientation: largest-|entry| of each row made positive
    for row in components:
        j = int(np.argmax(np.abs(row)))
        if row[j] < 0:
            row *= -1.0
    return components


def _top_eigs_power(cov: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    p = cov.shape[0]
    vecs = np.zeros((k, p))
    vals = np.zeros(k)
    for comp in range(k):
        v = cov[:, int(np.argmax(np.diag(cov)))].copy()
        nv = np.linalg.norm(v)
        v = np.ones(p) / np.sqrt(p) if nv == 0 else v / nv
        for _ in range(POWER_ITER_MAX):
            w = cov @ v
            # keep the iterate out of the span of earlier components
            for u in vecs[:comp]:
                w -= (u @ w) * u
            norm = np.linalg.norm(w)
            if norm == 0:
                break
            w /= norm
            if w @ v < 0:
                w = -w
            if np.linalg.norm(w - v) < POWER_ITER_TOL:
                v = w
                break
            v = w
        vecs[comp] = v
        vals[comp] = v @ cov @ v
        cov = cov - vals[comp] * np.outer(v, v)
    order = np.argsort(-vals)
    return vals[order], vecs[order]


def pca_components(x, n_components: int) -> np.ndarray:
    """Top principal axes of column-centered ``x`` as unit-norm rows.

    Rows are ordered by decreasing explained variance and oriented so each
    row's largest-magnitude entry is positive. Uses a dense eigensolver up
    to 512 columns and power iteration with deflation beyond that.
    """
    x = np.asarray(x, dtype=np.float64)
    n, p = x.shape
    if p < n_components:
        raise RankError(f"requested {n_components} components from {p} columns")
    if n < 2:
        raise ParameterError("pca needs at least 2 rows")
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / n
    if p <= EIG_COL_LIMIT:
        vals, vecs = np.linalg.eigh(cov)
        order = np.argsort(-vals)
        vals = vals[order][:n_components]
        comps = vecs[:, order][:, :n_components].T
    else:
        vals, comps = _top_eigs_power(cov, n_components)
    scale = max(float(vals[0]), 0.0)
    if n_components and vals[n_components - 1] <= scale * 1e-12:
        raise RankError(f"data rank is below the {n_components} requested components")
    return _fix_signs(np.ascontiguousarray(comps))


def first_pc_scores(x) -> np.ndarray:
    """Projection of the centered rows onto the first principal axis.

    A single-column input is simply returned centered.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(-1, 1)
    if x.shape[1] < 1:
        raise ParameterError("first_pc_scores needs at least one column")
    if x.shape[1] == 1:
        return x[:, 0] - x[:, 0].mean()
    axis = pca_components(x, 1)[0]
    return (x - x.mean(axis=0)) @ axis


def _sq_dists(x: np.ndarray, centers: np.ndarray, x_sq: np.ndarray | None = None) -> np.ndarray:
    # ||x - c||^2 for every (point, center) pair, via the expansion form;
    # clipped at 0 against float cancellation
    if x_sq is None:
        x_sq = (x * x).sum(axis=1)
    d2 = x_sq[:, None] - 2.0 * (x @ centers.T) + (centers * centers).sum(axis=1)[None, :]
    return np.maximum(d2, 0.0)


def _plus_plus_seed(x: np.ndarray, k: int, rng: SeededRng) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.gen.integers(n)]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0:
            idx = rng.gen.choice(n, p=d2 / total)
        else:
            idx = rng.gen.integers(n)
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def kmeans(x, k: int, rng: SeededRng, with_history: bool = False):
    """Lloyd's algorithm with k-means++ seeding; labels in {0..k-1}.

    Runs until the assignment reaches a fixpoint or 300 iterations. Empty
    clusters are re-seeded to the point currently farthest from its center,
    so every cluster ends non-empty. With ``with_history`` the per-iteration
    within-cluster sum of squares is returned alongside the labels.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if n < k:
        raise ParameterError(f"kmeans needs at least k={k} rows, got {n}")
    centers = _plus_plus_seed(x, k, rng)
    x_sq = (x * x).sum(axis=1)

    def assign(centers):
        d2 = _sq_dists(x, centers, x_sq)
        labels = d2.argmin(axis=1)
        point_d2 = d2[np.arange(n), labels]
        claimable = point_d2.copy()
        for j in range(k):
            if not np.any(labels == j):
                far = int(claimable.argmax())
                centers[j] = x[far]
                labels[far] = j
                point_d2[far] = 0.0
                claimable[far] = -1.0
        return labels, point_d2

    labels, point_d2 = assign(centers)
    history = [float(point_d2.sum())]
    for _ in range(KMEANS_MAX_ITER):
        for j in range(k):
            centers[j] = x[labels == j].mean(axis=0)
        new_labels, point_d2 = assign(centers)
        history.append(float(point_d2.sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    if with_history:
        return labels, history
    return labels
