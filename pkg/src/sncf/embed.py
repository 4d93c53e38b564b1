"""Sparse cosine-kNN affinity graph, normalized Laplacian and spectral embedding."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .core import ConfigError, FeatureMatrix, NumericalError, PipelineConfig, spawn_rng

DENSE_CUTOFF = 2000
ISOLATED_DEGREE = 1e-12
EIG_TOL = 1e-8
EIG_MAXITER = 10000
RESIDUAL_TOL = 1e-6
_BLOCK = 2048


@dataclass(frozen=True)
class SparseAffinity:
    """Symmetric non-negative kNN similarity graph in CSR form."""

    n: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray
    degrees: np.ndarray

    def to_csr(self) -> sp.csr_matrix:
        return sp.csr_matrix(
            (self.values, self.col_idx, self.row_ptr), shape=(self.n, self.n)
        )

    @classmethod
    def from_csr(cls, s: sp.csr_matrix) -> "SparseAffinity":
        s = s.tocsr()
        s.sort_indices()
        degrees = np.asarray(s.sum(axis=1)).ravel()
        return cls(
            n=s.shape[0],
            row_ptr=s.indptr.copy(),
            col_idx=s.indices.copy(),
            values=s.data.copy(),
            degrees=degrees,
        )


@dataclass(frozen=True)
class Embedding:
    """N x k spectral coordinates with their ascending eigenvalues."""

    coords: np.ndarray
    eigenvalues: np.ndarray


def build_affinity(m: FeatureMatrix, knn: int, gamma: int) -> SparseAffinity:
    """Cosine-kNN affinity with edge weight max(cos, 0)^gamma.

    For each row the knn most similar rows (self excluded) become edges; the
    result is symmetrized by the elementwise maximum of the matrix and its
    transpose, so every kNN edge is kept at full strength.
    """
    n = m.n
    if knn >= n:
        raise ConfigError(f"knn={knn} must be smaller than the sample count {n}")
    norms = np.linalg.norm(m.data, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"all-zero feature row {int(np.argmax(norms == 0.0))}")
    unit = m.data / norms[:, None]

    rows = np.empty(n * knn, dtype=np.int64)
    cols = np.empty(n * knn, dtype=np.int64)
    vals = np.empty(n * knn, dtype=np.float64)
    for start in range(0, n, _BLOCK):
        stop = min(start + _BLOCK, n)
        sims = unit[start:stop] @ unit.T
        block = stop - start
        sims[np.arange(block), np.arange(start, stop)] = -np.inf
        nbr = np.argpartition(sims, -knn, axis=1)[:, -knn:]
        w = np.take_along_axis(sims, nbr, axis=1)
        out = slice(start * knn, stop * knn)
        rows[out] = np.repeat(np.arange(start, stop), knn)
        cols[out] = nbr.ravel()
        vals[out] = np.maximum(w, 0.0).ravel() ** gamma
    s = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
    s = s.maximum(s.T)
    s.setdiag(0.0)
    s.eliminate_zeros()
    return SparseAffinity.from_csr(s)


def normalized_laplacian(s: SparseAffinity) -> sp.csr_matrix:
    """L = I - D^{-1/2} S D^{-1/2}; isolated nodes get a unit diagonal row."""
    deg = np.where(s.degrees > 0.0, s.degrees, ISOLATED_DEGREE)
    inv_sqrt = 1.0 / np.sqrt(deg)
    a = s.to_csr()
    scaled = sp.diags(inv_sqrt) @ a @ sp.diags(inv_sqrt)
    lap = sp.identity(s.n, format="csr") - scaled
    # enforce exact structural symmetry against round-off
    lap = (lap + lap.T) * 0.5
    return lap.tocsr()


def spectral_embed(
    lap: sp.spmatrix,
    k: int,
    seed: int = 0,
    force_iterative: bool = False,
) -> Embedding:
    """k-dimensional embedding from the smallest nontrivial Laplacian eigenpairs.

    Computes the k+1 algebraically smallest eigenpairs, discards the pair
    with the smallest eigenvalue, and returns the remaining k eigenvectors
    in ascending eigenvalue order. Each eigenvector's sign is fixed so that
    its largest-magnitude entry is positive.
    """
    lap = sp.csr_matrix(lap)
    n = lap.shape[0]
    if k + 1 > n:
        raise ConfigError(f"k={k} needs at least k+1={k + 1} samples, got {n}")
    if n <= DENSE_CUTOFF and not force_iterative:
        vals, vecs = np.linalg.eigh(lap.toarray())
        vals, vecs = vals[: k + 1], vecs[:, : k + 1]
    else:
        vals, vecs = _iterative_eigs(lap, k + 1, seed)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]

    resid = _residuals(lap, vals, vecs)
    if np.max(resid) > RESIDUAL_TOL:
        raise NumericalError(
            f"eigensolver residual {np.max(resid):.3e} exceeds {RESIDUAL_TOL:.0e}"
        )

    vals, vecs = vals[1:], vecs[:, 1:]
    for j in range(vecs.shape[1]):
        lead = int(np.argmax(np.abs(vecs[:, j])))
        if vecs[lead, j] < 0:
            vecs[:, j] = -vecs[:, j]
    return Embedding(coords=np.ascontiguousarray(vecs), eigenvalues=vals.copy())


def _iterative_eigs(lap: sp.csr_matrix, m: int, seed: int):
    """Smallest-m eigenpairs via restarted Lanczos on the shifted matrix 2I - L.

    The normalized Laplacian spectrum lies in [0, 2], so the algebraically
    largest eigenpairs of 2I - L are the smallest of L; Krylov iteration
    converges much faster at the dominant end of the spectrum.
    """
    n = lap.shape[0]
    rng = spawn_rng(seed, 0xE16)
    v0 = rng.standard_normal(n)
    shifted = sp.identity(n, format="csr") * 2.0 - lap
    try:
        vals, vecs = spla.eigsh(
            shifted,
            k=m,
            which="LA",
            v0=v0,
            tol=EIG_TOL,
            maxiter=EIG_MAXITER,
            ncv=min(n, max(4 * m, 40)),
        )
    except spla.ArpackNoConvergence as exc:
        raise NumericalError(
            f"eigensolver did not converge within {EIG_MAXITER} restarts: {exc}"
        ) from exc
    return 2.0 - vals, vecs


def _residuals(lap, vals, vecs) -> np.ndarray:
    r = lap @ vecs - vecs * vals[None, :]
    return np.linalg.norm(r, axis=0)


def embed_pipeline(m: FeatureMatrix, cfg: PipelineConfig) -> Embedding:
    """build_affinity -> normalized_laplacian -> spectral_embed with cfg knobs."""
    aff = build_affinity(m, cfg.knn, cfg.gamma)
    lap = normalized_laplacian(aff)
    return spectral_embed(lap, cfg.k_eigen, seed=cfg.seed)
