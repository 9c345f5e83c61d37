"""2D Gaussian mixture fitting by expectation-maximization.

Small, deterministic EM used to turn frontier cells and semantic samples
into a sampling distribution over the environment. k-means++ seeding from
the caller's RNG, at most 50 iterations, log-likelihood tolerance 1e-4,
and an eigenvalue floor keeping every covariance SPD.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MAX_ITERS = 50
LOGLIK_TOL = 1e-4


@dataclass
class GaussianMixture:
    """Weights summing to 1, 2D means, and SPD 2x2 covariances."""

    weights: np.ndarray        # (k,)
    means: np.ndarray          # (k, 2)
    covariances: np.ndarray    # (k, 2, 2)
    reduced: bool = False      # k was cut down to the number of points

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=float).ravel()
        self.means = np.asarray(self.means, dtype=float).reshape(-1, 2)
        self.covariances = np.asarray(self.covariances,
                                      dtype=float).reshape(-1, 2, 2)
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")
        if np.any(self.weights < 0):
            raise ValueError("mixture weights must be nonnegative")
        for cov in self.covariances:
            np.linalg.cholesky(cov)  # raises unless SPD

    @property
    def n_components(self) -> int:
        return self.weights.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw n points, shape (n, 2)."""
        comp = rng.choice(self.n_components, size=n, p=self.weights)
        out = np.empty((n, 2))
        for i, c in enumerate(comp):
            chol = np.linalg.cholesky(self.covariances[c])
            out[i] = self.means[c] + chol @ rng.standard_normal(2)
        return out


def _floor_covariance(cov: np.ndarray, floor: float) -> np.ndarray:
    """Clamp eigenvalues from below so the matrix stays SPD."""
    cov = 0.5 * (cov + cov.T)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, floor)
    return (vecs * vals) @ vecs.T


def _kmeanspp_centers(points: np.ndarray, k: int,
                      rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centers = np.empty((k, 2))
    centers[0] = points[rng.integers(n)]
    d2 = np.sum((points - centers[0]) ** 2, axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centers[i:] = centers[0]
            break
        centers[i] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((points - centers[i]) ** 2, axis=1))
    return centers


def _log_gauss(points: np.ndarray, mean: np.ndarray,
               cov: np.ndarray) -> np.ndarray:
    chol = np.linalg.cholesky(cov)
    diff = (points - mean).T
    sol = np.linalg.solve(chol, diff)
    logdet = 2.0 * np.log(np.diag(chol)).sum()
    return -0.5 * (np.sum(sol ** 2, axis=0) + logdet
                   + points.shape[1] * np.log(2.0 * np.pi))


def fit_gmm_points(points: np.ndarray, k: int, rng,
                   covariance_floor: float = 1e-4) -> GaussianMixture:
    """EM fit over raw 2D points. k is reduced when points are scarce."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    n = points.shape[0]
    if n == 0:
        raise ValueError("cannot fit a mixture to zero points")
    if k < 1:
        raise ValueError("component count must be >= 1")
    rng = np.random.default_rng(rng) if not isinstance(
        rng, np.random.Generator) else rng
    reduced = k > n
    k = min(k, n)

    means = _kmeanspp_centers(points, k, rng)
    covs = np.empty((k, 2, 2))
    base = np.cov(points.T) if n > 1 else np.zeros((2, 2))
    base = _floor_covariance(np.atleast_2d(base), covariance_floor)
    covs[:] = base
    weights = np.full(k, 1.0 / k)

    prev_ll = -np.inf
    for _ in range(MAX_ITERS):
        # E step
        logp = np.empty((n, k))
        for j in range(k):
            logp[:, j] = np.log(weights[j] + 1e-300) + _log_gauss(
                points, means[j], covs[j])
        m = logp.max(axis=1, keepdims=True)
        lse = m[:, 0] + np.log(np.exp(logp - m).sum(axis=1))
        resp = np.exp(logp - lse[:, None])
        ll = float(lse.sum())
        if abs(ll - prev_ll) < LOGLIK_TOL * max(1.0, abs(prev_ll)):
            break
        prev_ll = ll
        # M step
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / n
        means = (resp.T @ points) / nk[:, None]
        for j in range(k):
            diff = points - means[j]
            cov = (resp[:, j, None] * diff).T @ diff / nk[j]
            covs[j] = _floor_covariance(cov, covariance_floor)
    weights = weights / weights.sum()
    return GaussianMixture(weights=weights, means=means, covariances=covs,
                           reduced=reduced)


def fit_gmm(frontier_points: np.ndarray, semantic_points: np.ndarray,
            k: int, rng, covariance_floor: float = 1e-4) -> GaussianMixture:
    """Fit a mixture over frontier cell centers plus semantic samples."""
    parts = [np.asarray(p, dtype=float).reshape(-1, 2)
             for p in (frontier_points, semantic_points)]
    points = np.vstack(parts)
    return fit_gmm_points(points, k, rng, covariance_floor)
