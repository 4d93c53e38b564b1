import numpy as np
import pytest
import scipy.sparse as sp

from sncf import (
    ConfigError,
    FeatureMatrix,
    PipelineConfig,
    SparseAffinity,
    build_affinity,
    embed_pipeline,
    normalized_laplacian,
    spectral_embed,
)
from tests.conftest import random_affinity, two_blob_features


class TestBuildAffinity:
    def test_symmetric_nonnegative_zero_diagonal(self, rng):
        m = FeatureMatrix.from_array(rng.standard_normal((60, 5)))
        aff = build_affinity(m, knn=5, gamma=3)
        s = aff.to_csr()
        assert (abs(s - s.T)).max() == 0.0
        assert s.min() >= 0.0
        assert np.all(s.diagonal() == 0.0)

    def test_each_row_keeps_its_knn_edges(self, rng):
        m = FeatureMatrix.from_array(rng.standard_normal((40, 4)))
        knn = 6
        aff = build_affinity(m, knn=knn, gamma=3)
        s = aff.to_csr()
        unit = m.data / np.linalg.norm(m.data, axis=1, keepdims=True)
        cos = unit @ unit.T
        np.fill_diagonal(cos, -np.inf)
        for i in range(m.n):
            nbr = np.argsort(cos[i])[-knn:]
            for j in nbr:
                expect = max(cos[i, j], 0.0) ** 3
                assert s[i, j] == pytest.approx(expect, abs=1e-12)

    def test_max_symmetrization_keeps_full_strength(self):
        # three points where 0 lists 1 but 1 lists 2: the 0-1 edge must
        # survive symmetrization at its one-sided weight
        pts = np.array([[1.0, 0.0], [0.9, 0.1], [0.8, 0.21]])
        m = FeatureMatrix.from_array(pts / np.linalg.norm(pts, axis=1, keepdims=True))
        aff = build_affinity(m, knn=1, gamma=3).to_csr()
        unit = m.data
        w01 = max(float(unit[0] @ unit[1]), 0.0) ** 3
        assert aff[0, 1] == pytest.approx(w01, abs=1e-12)
        assert aff[1, 0] == pytest.approx(w01, abs=1e-12)

    def test_blocked_matches_unblocked(self, rng, monkeypatch):
        import sncf.embed as embed_mod

        m = FeatureMatrix.from_array(rng.standard_normal((30, 4)))
        full = build_affinity(m, knn=4, gamma=3).to_csr()
        monkeypatch.setattr(embed_mod, "_BLOCK", 7)
        blocked = build_affinity(m, knn=4, gamma=3).to_csr()
        # block-shaped matmuls may round differently in the last ulp
        assert (abs(full - blocked)).max() < 1e-12

    def test_knn_too_large(self, rng):
        m = FeatureMatrix.from_array(rng.standard_normal((5, 3)))
        with pytest.raises(ConfigError):
            build_affinity(m, knn=5, gamma=3)


class TestNormalizedLaplacian:
    def test_two_node_hand_value(self):
        s = SparseAffinity.from_csr(sp.csr_matrix(np.array([[0.0, 1.0], [1.0, 0.0]])))
        lap = normalized_laplacian(s).toarray()
        np.testing.assert_allclose(lap, [[1.0, -1.0], [-1.0, 1.0]], atol=1e-12)

    def test_triangle_hand_value(self):
        # unweighted triangle: degrees 2, L = I - A/2
        a = np.ones((3, 3)) - np.eye(3)
        s = SparseAffinity.from_csr(sp.csr_matrix(a))
        lap = normalized_laplacian(s).toarray()
        expect = np.eye(3) - a / 2.0
        np.testing.assert_allclose(lap, expect, atol=1e-12)

    def test_isolated_node_gets_unit_diagonal(self):
        a = np.zeros((3, 3))
        a[0, 1] = a[1, 0] = 1.0
        s = SparseAffinity.from_csr(sp.csr_matrix(a))
        lap = normalized_laplacian(s).toarray()
        assert lap[2, 2] == pytest.approx(1.0)
        assert np.all(lap[2, :2] == 0.0)

    def test_spectrum_in_unit_range(self, rng):
        aff = random_affinity(40, rng)
        lap = normalized_laplacian(aff)
        vals = np.linalg.eigvalsh(lap.toarray())
        assert vals.min() >= -1e-10
        assert vals.max() <= 2.0 + 1e-10


class TestSpectralEmbed:
    def test_disconnected_cliques_indicator(self):
        # two 3-cliques: retained eigenvalue 0, eigenvector constant within
        # each component with opposite signs across them
        a = np.zeros((6, 6))
        for block in (slice(0, 3), slice(3, 6)):
            a[block, block] = 1.0
        np.fill_diagonal(a, 0.0)
        s = SparseAffinity.from_csr(sp.csr_matrix(a))
        emb = spectral_embed(normalized_laplacian(s), k=1)
        assert emb.eigenvalues[0] == pytest.approx(0.0, abs=1e-10)
        v = emb.coords[:, 0]
        assert np.ptp(v[:3]) < 1e-8 and np.ptp(v[3:]) < 1e-8
        assert np.sign(v[0]) != np.sign(v[3])

    def test_two_node_hand_value(self):
        lap = sp.csr_matrix(np.array([[1.0, -1.0], [-1.0, 1.0]]))
        emb = spectral_embed(lap, k=1)
        assert emb.eigenvalues[0] == pytest.approx(2.0, abs=1e-12)
        np.testing.assert_allclose(
            emb.coords[:, 0], [np.sqrt(0.5), -np.sqrt(0.5)], atol=1e-12
        )

    def test_sign_rule(self, rng):
        aff = random_affinity(30, rng)
        emb = spectral_embed(normalized_laplacian(aff), k=5)
        for j in range(5):
            lead = np.argmax(np.abs(emb.coords[:, j]))
            assert emb.coords[lead, j] > 0.0

    def test_iterative_matches_dense(self, rng):
        aff = random_affinity(120, rng)
        lap = normalized_laplacian(aff)
        it = spectral_embed(lap, k=6, seed=0, force_iterative=True)
        dense_vals = np.linalg.eigvalsh(lap.toarray())
        np.testing.assert_allclose(it.eigenvalues, dense_vals[1:7], atol=1e-6)

    def test_iterative_residuals_small(self, rng):
        aff = random_affinity(150, rng)
        lap = normalized_laplacian(aff)
        emb = spectral_embed(lap, k=4, seed=1, force_iterative=True)
        dense_vals, dense_vecs = np.linalg.eigh(lap.toarray())
        # compare the retained invariant subspace via projection
        sub = dense_vecs[:, 1:5]
        proj = sub @ (sub.T @ emb.coords)
        gap_ok = dense_vals[5] - dense_vals[4] > 1e-8
        if gap_ok:
            np.testing.assert_allclose(proj, emb.coords, atol=1e-5)

    def test_permutation_equivariance(self, rng):
        aff = random_affinity(25, rng)
        lap = normalized_laplacian(aff).toarray()
        perm = rng.permutation(25)
        lap_p = lap[np.ix_(perm, perm)]
        e1 = spectral_embed(sp.csr_matrix(lap), k=3)
        e2 = spectral_embed(sp.csr_matrix(lap_p), k=3)
        np.testing.assert_allclose(e1.eigenvalues, e2.eigenvalues, atol=1e-10)
        # eigenvalues must be simple for vector comparison to be meaningful
        full = np.linalg.eigvalsh(lap)
        if np.min(np.diff(full[:5])) > 1e-8:
            np.testing.assert_allclose(e1.coords[perm], e2.coords, atol=1e-7)

    def test_k_too_large(self, rng):
        aff = random_affinity(5, rng)
        with pytest.raises(ConfigError):
            spectral_embed(normalized_laplacian(aff), k=5)


class TestEmbedPipeline:
    def test_two_blobs_separate(self, rng):
        m = two_blob_features(rng, n_a=120, n_b=80)
        # two natural clusters: one informative eigenvector beyond the trivial
        cfg = PipelineConfig(knn=10, k_eigen=1, seed=0)
        emb = embed_pipeline(m, cfg)
        a, b = emb.coords[:120], emb.coords[120:]
        gap = np.linalg.norm(a.mean(0) - b.mean(0))
        spread = max(
            np.linalg.norm(a - a.mean(0), axis=1).mean(),
            np.linalg.norm(b - b.mean(0), axis=1).mean(),
        )
        assert gap > 5.0 * spread

    def test_deterministic(self, rng):
        m = two_blob_features(rng)
        cfg = PipelineConfig(knn=10, k_eigen=3, seed=0)
        e1 = embed_pipeline(m, cfg)
        e2 = embed_pipeline(m, cfg)
        assert np.array_equal(e1.coords, e2.coords)
        assert np.array_equal(e1.eigenvalues, e2.eigenvalues)
