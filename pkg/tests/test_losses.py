import numpy as np
import pytest

from sncf import (
    BatchLayout,
    SimMatrix,
    compute_sims,
    equal_sampler,
    guess_label,
    loss_ce_mixup,
    loss_guided_contrastive,
    loss_unsup,
    loss_unsup_mixup,
    mixup_draw,
    total_loss,
)
from sncf.core import ConfigError, spawn_rng

FD_STEP = 1e-5


def fd_grad(fn, x):
    """Central finite differences, written independently of the package
    self-check so both routes can cross-validate the analytic gradients."""
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        orig = x[idx]
        x[idx] = orig + FD_STEP
        hi = fn(x)
        x[idx] = orig - FD_STEP
        lo = fn(x)
        x[idx] = orig
        g[idx] = (hi - lo) / (2 * FD_STEP)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)


class TestSimMatrix:
    def test_rejects_nonbinary(self):
        with pytest.raises(ValueError):
            SimMatrix(np.full((3, 3), 0.5))

    def test_rejects_zero_diagonal(self):
        e = np.eye(3)
        e[1, 1] = 0.0
        with pytest.raises(ValueError):
            SimMatrix(e)

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            SimMatrix(np.ones((2, 3)))


class TestLossUnsup:
    def test_hand_value_orthogonal_pairs(self):
        # cos matrix is the identity; with tau = 0.2 each row's positive
        # logit beats the negatives by 1/0.2 = 5, so the per-row loss is
        # log(1 + e^-5)
        a = np.array([[1.0, 0.0], [0.0, 1.0]])
        loss, _, _ = loss_unsup(a, a, tau2=0.2)
        assert loss == pytest.approx(np.log(1.0 + np.exp(-5.0)), rel=1e-12)
        assert loss == pytest.approx(0.0067153, abs=1e-7)

    def test_uniform_when_all_identical(self):
        # all keys identical: softmax is uniform, loss = log B
        a = np.tile([3.0, 4.0], (4, 1))
        loss, _, _ = loss_unsup(a, a, tau2=0.2)
        assert loss == pytest.approx(np.log(4.0), rel=1e-12)

    def test_gradients_match_fd(self):
        rng = spawn_rng(0, 0xF0)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((5, 4))
        loss, ga, gb = loss_unsup(a, b, 0.2)
        assert rel_err(ga, fd_grad(lambda x: loss_unsup(x, b, 0.2)[0], a.copy())) < 1e-6
        assert rel_err(gb, fd_grad(lambda x: loss_unsup(a, x, 0.2)[0], b.copy())) < 1e-6

    def test_scale_invariance(self, rng):
        # cosine similarity ignores row scale, so the loss must too
        a = rng.standard_normal((4, 3))
        b = rng.standard_normal((4, 3))
        l1, _, _ = loss_unsup(a, b, 0.2)
        l2, _, _ = loss_unsup(a * 7.0, b * 0.1, 0.2)
        assert l1 == pytest.approx(l2, rel=1e-12)

    def test_zero_row_rejected(self):
        a = np.zeros((3, 2))
        a[0, 0] = 1.0
        with pytest.raises(ValueError):
            loss_unsup(a, np.ones((3, 2)), 0.2)


class TestLossUnsupMixup:
    def test_mu_one_identity_bitwise(self, rng):
        a = rng.standard_normal((6, 4))
        b = rng.standard_normal((6, 4))
        perm = rng.permutation(6)
        plain = loss_unsup(b, a, 0.2)[0]
        mixed = loss_unsup_mixup(a, b, 1.0, perm, 0.2)[0]
        assert mixed == plain  # bitwise

    def test_interpolates_between_self_and_partner(self, rng):
        a = rng.standard_normal((5, 3))
        b = rng.standard_normal((5, 3))
        perm = np.roll(np.arange(5), 1)
        l_self = loss_unsup_mixup(a, b, 1.0, perm, 0.2)[0]
        l_mid = loss_unsup_mixup(a, b, 0.5, perm, 0.2)[0]
        l_partner = loss_unsup_mixup(a, b, 0.0, perm, 0.2)[0]
        assert l_mid == pytest.approx(0.5 * (l_self + l_partner), rel=1e-12)

    def test_gradients_match_fd(self):
        rng = spawn_rng(1, 0xF1)
        a = rng.standard_normal((5, 4))
        b = rng.standard_normal((5, 4))
        perm = rng.permutation(5)
        _, gs, gm = loss_unsup_mixup(a, b, 0.3, perm, 0.2)
        assert rel_err(gs, fd_grad(lambda x: loss_unsup_mixup(x, b, 0.3, perm, 0.2)[0], a.copy())) < 1e-6
        assert rel_err(gm, fd_grad(lambda x: loss_unsup_mixup(a, x, 0.3, perm, 0.2)[0], b.copy())) < 1e-6

    def test_invalid_perm(self, rng):
        a = rng.standard_normal((4, 3))
        with pytest.raises(ValueError):
            loss_unsup_mixup(a, a, 0.5, np.array([0, 0, 1, 2]), 0.2)


class TestLossGuided:
    def test_identity_sims_bitwise(self, rng):
        w = rng.standard_normal((6, 4))
        s = rng.standard_normal((6, 4))
        sims = SimMatrix(np.eye(6))
        assert loss_guided_contrastive(w, s, sims, 0.2)[0] == loss_unsup(s, w, 0.2)[0]

    def test_gradients_match_fd(self):
        rng = spawn_rng(2, 0xF2)
        w = rng.standard_normal((6, 4))
        s = rng.standard_normal((6, 4))
        labels = np.array([0, 0, 1, -1, -1, 1])
        groups = np.array([-1, -1, -1, 0, 0, -1])
        sims = compute_sims(labels, groups)
        _, gw, gs = loss_guided_contrastive(w, s, sims, 0.2)
        assert rel_err(gw, fd_grad(lambda x: loss_guided_contrastive(x, s, sims, 0.2)[0], w.copy())) < 1e-6
        assert rel_err(gs, fd_grad(lambda x: loss_guided_contrastive(w, x, sims, 0.2)[0], s.copy())) < 1e-6

    def test_more_positives_with_matching_views_lowers_loss(self, rng):
        # duplicated rows: marking them positives should not hurt
        base = rng.standard_normal((2, 4))
        w = np.vstack([base, base])
        s = w + 0.01 * rng.standard_normal((4, 4))
        ident = SimMatrix(np.eye(4))
        paired = compute_sims(np.array([0, 1, 0, 1]), np.full(4, -1))
        l_ident = loss_guided_contrastive(w, s, ident, 0.2)[0]
        l_paired = loss_guided_contrastive(w, s, paired, 0.2)[0]
        assert l_paired > l_ident  # two positives per row add a second term


class TestComputeSims:
    def test_rules(self):
        labels = np.array([0, 0, 1, -1, -1, -1])
        groups = np.array([-1, -1, -1, 2, 2, -1])
        e = compute_sims(labels, groups).e
        assert e[0, 1] == 1.0  # same ID class
        assert e[0, 2] == 0.0  # different ID class
        assert e[3, 4] == 1.0  # same OOD group
        assert e[3, 5] == 0.0  # grouped vs ungrouped OOD
        assert e[0, 3] == 0.0  # ID vs OOD
        assert np.all(np.diag(e) == 1.0)
        np.testing.assert_array_equal(e, e.T)

    def test_ungrouped_ood_only_self(self):
        e = compute_sims(np.array([-1, -1]), np.array([-1, -1])).e
        np.testing.assert_array_equal(e, np.eye(2))


class TestGuessLabel:
    def test_hand_value(self):
        q = guess_label([0.8, 0.2], [0.8, 0.2], tau1=2.0)
        np.testing.assert_allclose(q, [0.64 / 0.68, 0.04 / 0.68], atol=1e-12)
        np.testing.assert_allclose(q, [0.9411765, 0.0588235], atol=1e-6)

    def test_sharpening_reduces_entropy(self, rng):
        p = rng.dirichlet(np.ones(5), size=3)
        q = guess_label(p, p, tau1=2.0)
        ent = lambda x: -np.sum(x * np.log(np.clip(x, 1e-12, None)), axis=-1)
        assert np.all(ent(q) <= ent(p) + 1e-12)

    def test_tau_one_is_plain_average(self, rng):
        p1 = rng.dirichlet(np.ones(4), size=2)
        p2 = rng.dirichlet(np.ones(4), size=2)
        np.testing.assert_allclose(guess_label(p1, p2, 1.0), 0.5 * (p1 + p2), atol=1e-12)

    def test_rejects_non_stochastic(self):
        with pytest.raises(ValueError):
            guess_label([0.5, 0.2], [0.5, 0.5], 2.0)


class TestLossCeMixup:
    def test_uniform_prediction_gives_log_c(self):
        p = np.full((3, 4), 0.25)
        y = np.eye(4)[[0, 1, 2]]
        loss, _ = loss_ce_mixup(p, y, 0.7, np.roll(np.arange(3), 1))
        assert loss == pytest.approx(np.log(4.0), rel=1e-12)

    def test_perfect_prediction_near_zero(self):
        y = np.eye(3)[[0, 1, 2]]
        p = np.clip(y, 1e-9, 1.0)
        loss, _ = loss_ce_mixup(p, y, 1.0, np.arange(3))
        assert loss == pytest.approx(0.0, abs=1e-6)

    def test_gradients_match_fd(self):
        rng = spawn_rng(3, 0xF3)
        p = rng.dirichlet(np.ones(4), size=5)
        y = np.eye(4)[rng.integers(0, 4, 5)]
        perm = rng.permutation(5)
        _, g = loss_ce_mixup(p, y, 0.4, perm)
        assert rel_err(g, fd_grad(lambda x: loss_ce_mixup(x, y, 0.4, perm)[0], p.copy())) < 1e-6


class TestTotalLoss:
    def test_combination(self):
        assert total_loss(1.5, 2.0, 0.5) == pytest.approx(2.5)

    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            total_loss(float("nan"), 1.0, 1.0)


class TestMixupDraw:
    def test_range_and_determinism(self):
        a = mixup_draw(1.0, spawn_rng(0, 1))
        b = mixup_draw(1.0, spawn_rng(0, 1))
        assert a == b
        assert 0.0 <= a <= 1.0


class TestEqualSampler:
    def test_batch_layout_slots(self):
        layout = BatchLayout(
            clean=np.array([1, 2]), idn=np.array([3, 4]), ood=np.array([5, 6])
        )
        assert layout.supervised.tolist() == [1, 2, 1, 2, 3, 4]
        assert layout.contrastive.tolist() == [1, 2, 3, 4, 5, 6]

    def test_epoch_covers_largest_group(self):
        clean = np.arange(30)
        idn = np.arange(100, 104)
        ood = np.arange(200, 206)
        batches = list(equal_sampler(clean, idn, ood, batch_size=9, seed=0))
        assert len(batches) == 10  # ceil(30 / 3)
        seen = np.concatenate([b.clean for b in batches])
        assert set(seen) == set(clean)

    def test_groups_stay_disjoint(self):
        batches = list(
            equal_sampler(np.arange(10), np.arange(10, 14), np.arange(14, 20), 6, seed=1)
        )
        for b in batches:
            assert set(b.clean) <= set(range(10))
            assert set(b.idn) <= set(range(10, 14))
            assert set(b.ood) <= set(range(14, 20))

    def test_minority_cycles_with_reshuffle(self):
        batches = list(
            equal_sampler(np.arange(24), np.array([50, 51]), np.arange(60, 70), 6, seed=0)
        )
        draws = np.concatenate([b.idn for b in batches])
        # both minority members keep appearing across wraps
        assert set(draws) == {50, 51}
        assert len(draws) == 24

    def test_deterministic(self):
        a = list(equal_sampler(np.arange(12), np.arange(12, 18), np.arange(18, 30), 6, seed=3))
        b = list(equal_sampler(np.arange(12), np.arange(12, 18), np.arange(18, 30), 6, seed=3))
        for x, y in zip(a, b):
            assert np.array_equal(x.contrastive, y.contrastive)

    def test_fill_idn_with_clean(self):
        batches = list(
            equal_sampler(
                np.arange(9), np.array([]), np.arange(9, 18), 6, seed=0,
                fill_idn_with_clean=True,
            )
        )
        for b in batches:
            assert set(b.idn) <= set(range(9))

    def test_empty_group_rejected(self):
        with pytest.raises(ConfigError, match="idn"):
            list(equal_sampler(np.arange(6), np.array([]), np.arange(6, 12), 6))

    def test_batch_size_must_be_multiple_of_three(self):
        with pytest.raises(ConfigError):
            list(equal_sampler(np.arange(6), np.arange(6, 9), np.arange(9, 12), 8))
