"""Two-component Gaussian mixture fit by EM, full or spherical covariance."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .core import CovarianceKind, NumericalError, spawn_rng

VAR_FLOOR = 1e-6
TOL = 1e-6
MAX_ITER = 200


@dataclass(frozen=True)
class GmmModel:
    weights: np.ndarray  # (2,), sums to 1
    means: np.ndarray  # (2, k)
    covariances: np.ndarray  # (2, k, k) full or (2,) spherical variances
    kind: CovarianceKind
    log_likelihood: float
    log_likelihood_history: tuple[float, ...] = field(default=(), repr=False)
    degenerate: bool = False

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _log_prob(points: np.ndarray, weights, means, covs, kind) -> np.ndarray:
    """Per-point, per-component log(weight * N(x | mean, cov))."""
    n, k = points.shape
    out = np.empty((n, 2))
    for c in range(2):
        diff = points - means[c]
        if kind is CovarianceKind.FULL:
            chol = np.linalg.cholesky(covs[c])
            sol = np.linalg.solve(chol, diff.T)
            maha = np.einsum("ij,ij->j", sol, sol)
            logdet = 2.0 * np.sum(np.log(np.diag(chol)))
        else:
            maha = np.einsum("ij,ij->i", diff, diff) / covs[c]
            logdet = k * np.log(covs[c])
        out[:, c] = (
            np.log(weights[c]) - 0.5 * (maha + logdet + k * np.log(2.0 * np.pi))
        )
    return out


def gmm_fit(points, kind: CovarianceKind = CovarianceKind.FULL, seed: int = 0) -> GmmModel:
    """EM from a seeded farthest-point initialization.

    Stops when the log-likelihood gain drops below 1e-6 or after 200
    iterations; covariances carry a 1e-6 regularization floor. Identical
    points yield a degenerate floor-variance model flagged as such.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if not np.all(np.isfinite(points)):
        raise NumericalError("non-finite input to gmm_fit")
    n, k = points.shape
    if n < 4:
        raise ValueError(f"need at least 4 points, got {n}")

    if np.allclose(points, points[0], atol=0.0, rtol=0.0):
        mean = points[0].copy()
        covs = (
            np.tile(np.eye(k) * VAR_FLOOR, (2, 1, 1))
            if kind is CovarianceKind.FULL
            else np.full(2, VAR_FLOOR)
        )
        return GmmModel(
            weights=np.array([0.5, 0.5]),
            means=np.stack([mean, mean]),
            covariances=covs,
            kind=kind,
            log_likelihood=float("nan"),
            degenerate=True,
        )

    rng = spawn_rng(seed, 0x63)
    c0 = points[rng.integers(n)]
    c1 = points[int(np.argmax(np.einsum("ij,ij->i", points - c0, points - c0)))]
    d0 = np.einsum("ij,ij->i", points - c0, points - c0)
    d1 = np.einsum("ij,ij->i", points - c1, points - c1)
    resp = np.zeros((n, 2))
    resp[np.arange(n), (d1 < d0).astype(int)] = 1.0

    weights, means, covs = _m_step(points, resp, kind)
    history: list[float] = []
    prev = -np.inf
    best = (weights, means, covs)
    for _ in range(MAX_ITER):
        logp = _log_prob(points, weights, means, covs, kind)
        norm = logsumexp(logp, axis=1)
        ll = float(np.mean(norm))
        if ll < prev:
            # the covariance floor makes the M-step slightly sub-optimal, so
            # the likelihood can dip a hair; keep the better previous model
            weights, means, covs = best
            break
        history.append(ll)
        if ll - prev < TOL:
            break
        prev = ll
        best = (weights, means, covs)
        resp = np.exp(logp - norm[:, None])
        weights, means, covs = _m_step(points, resp, kind)
    return GmmModel(
        weights=weights,
        means=means,
        covariances=covs,
        kind=kind,
        log_likelihood=history[-1],
        log_likelihood_history=tuple(history),
    )


def _m_step(points, resp, kind):
    n, k = points.shape
    nk = resp.sum(axis=0) + 1e-12
    weights = nk / nk.sum()
    means = (resp.T @ points) / nk[:, None]
    if kind is CovarianceKind.FULL:
        covs = np.empty((2, k, k))
        for c in range(2):
            diff = points - means[c]
            covs[c] = (resp[:, c, None] * diff).T @ diff / nk[c]
            covs[c] += np.eye(k) * VAR_FLOOR
    else:
        covs = np.empty(2)
        for c in range(2):
            diff = points - means[c]
            covs[c] = np.sum(resp[:, c] * np.einsum("ij,ij->i", diff, diff)) / (
                nk[c] * k
            )
            covs[c] = max(covs[c] + VAR_FLOOR, VAR_FLOOR)
    return weights, means, covs


def gmm_assign(model: GmmModel, points):
    """Hard component ids and soft responsibilities for new points."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[1] != model.dim:
        raise ValueError(
            f"dimension mismatch: model has {model.dim}, points have {points.shape[1]}"
        )
    logp = _log_prob(
        points, model.weights, model.means, model.covariances, model.kind
    )
    resp = np.exp(logp - logsumexp(logp, axis=1)[:, None])
    return np.argmax(resp, axis=1), resp
