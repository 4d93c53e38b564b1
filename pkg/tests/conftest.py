import numpy as np
import pytest
import scipy.sparse as sp

from sncf import FeatureMatrix, SparseAffinity


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_affinity(n: int, rng: np.random.Generator, density: float = 0.1) -> SparseAffinity:
    """Random symmetric non-negative affinity with zero diagonal."""
    mask = rng.random((n, n)) < density
    weights = rng.random((n, n)) * mask
    weights = np.maximum(weights, weights.T)
    np.fill_diagonal(weights, 0.0)
    return SparseAffinity.from_csr(sp.csr_matrix(weights))


def two_blob_features(
    rng: np.random.Generator,
    n_a: int = 200,
    n_b: int = 100,
    d: int = 8,
    spread_a: float = 0.05,
    spread_b: float = 0.05,
) -> FeatureMatrix:
    """Two well-separated blobs on the unit sphere."""
    mu_a = np.zeros(d)
    mu_a[0] = 1.0
    mu_b = np.zeros(d)
    mu_b[1] = 1.0
    a = mu_a + spread_a * rng.standard_normal((n_a, d))
    b = mu_b + spread_b * rng.standard_normal((n_b, d))
    pts = np.vstack([a, b])
    pts /= np.linalg.norm(pts, axis=1, keepdims=True)
    return FeatureMatrix.from_array(pts)
