"""Noise-robust training mathematics as verified pure functions.

Covers the unsupervised N-pairs loss and its mixup variant, the guided
contrastive loss with a binary similarity matrix, consistency-regularized
label guessing with temperature sharpening, mixup cross-entropy, the
combined objective, and the equal-sampling batch builder. Every loss
returns analytic gradients with respect to its raw (unnormalized) inputs
and is stabilized with log-sum-exp.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np
from scipy.special import logsumexp

from .core import ConfigError

STOCHASTIC_TOL = 1e-6
PROB_FLOOR = 1e-12

OOD_LABEL = -1


@dataclass(frozen=True)
class SimMatrix:
    """B x B binary matrix: e[i, b] = 1 iff sample b is a positive for anchor i."""

    e: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.e, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] != e.shape[1]:
            raise ValueError(f"similarity matrix must be square, got {e.shape}")
        if not np.all((e == 0.0) | (e == 1.0)):
            raise ValueError("similarity entries must be 0 or 1")
        if np.any(np.diag(e) != 1.0):
            raise ValueError("cross-view self pairs e[i, i] must be 1")
        object.__setattr__(self, "e", e)


def _unit_rows(x: np.ndarray):
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0.0):
        raise ValueError(f"all-zero row {int(np.argmax(norms == 0.0))}")
    return x / norms[:, None], norms


def _weighted_npairs(anchors, keys, weights, tau):
    """Loss (1/B) sum_{i,b} w[i,b] * (-log softmax_b(cos(keys_b, anchors_i)/tau))
    with analytic gradients w.r.t. the raw anchor and key rows."""
    anchors = np.asarray(anchors, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.float64)
    if anchors.shape != keys.shape:
        raise ValueError(f"shape mismatch: {anchors.shape} vs {keys.shape}")
    b = anchors.shape[0]
    a_unit, a_norm = _unit_rows(anchors)
    k_unit, k_norm = _unit_rows(keys)

    cos = a_unit @ k_unit.T  # [i, b] = cos(anchor_i, key_b)
    z = cos / tau
    lse = logsumexp(z, axis=1)
    log_p = z - lse[:, None]
    loss = float(-np.sum(weights * log_p) / b)

    p = np.exp(log_p)
    g_z = (weights.sum(axis=1)[:, None] * p - weights) / b  # dloss/dz
    g_cos = g_z / tau
    # chain rule through the row normalizations
    g_anchor = (g_cos @ k_unit - (g_cos * cos).sum(axis=1)[:, None] * a_unit)
    g_anchor /= a_norm[:, None]
    g_key = (g_cos.T @ a_unit - (g_cos * cos).sum(axis=0)[:, None] * k_unit)
    g_key /= k_norm[:, None]
    return loss, g_anchor, g_key


def loss_unsup(u_strong, u_weak, tau2: float):
    """Unsupervised N-pairs contrastive loss over a batch of paired views.

    u_strong rows are the anchors, u_weak rows the keys; positives are the
    matching rows. Returns (loss, grad wrt u_strong, grad wrt u_weak).
    """
    b = np.asarray(u_strong).shape[0]
    return _weighted_npairs(u_strong, u_weak, np.eye(b), tau2)


def loss_unsup_mixup(u_strong, u_weak_mixed, mu: float, pair_perm, tau2: float):
    """Mixup variant: each mixed anchor targets both its own key and the key
    of its mixing partner, weighted mu and 1 - mu.

    Returns (loss, grad wrt u_strong, grad wrt u_weak_mixed). With mu = 1
    this is bitwise identical to loss_unsup(u_weak_mixed, u_strong, tau2).
    """
    pair_perm = np.asarray(pair_perm, dtype=np.int64)
    b = np.asarray(u_strong).shape[0]
    if sorted(pair_perm.tolist()) != list(range(b)):
        raise ValueError("pair_perm must be a permutation of [0, B)")
    weights = mu * np.eye(b)
    weights[np.arange(b), pair_perm] += (1.0 - mu) * 1.0
    loss, g_anchor, g_key = _weighted_npairs(u_weak_mixed, u_strong, weights, tau2)
    return loss, g_key, g_anchor


def loss_guided_contrastive(r_weak, r_strong, sims: SimMatrix, tau2: float):
    """Guided contrastive loss: strong-view anchors, weak-view keys, positive
    pairs dictated by the similarity matrix.

    Returns (loss, grad wrt r_weak, grad wrt r_strong). With identity sims
    this is bitwise identical to loss_unsup(r_strong, r_weak, tau2).
    """
    if np.any(sims.e.sum(axis=1) == 0.0):
        raise ValueError("every sims row needs at least one positive")
    loss, g_anchor, g_key = _weighted_npairs(r_strong, r_weak, sims.e, tau2)
    return loss, g_key, g_anchor


def compute_sims(labels, ood_groups) -> SimMatrix:
    """Positive-pair indicator from class labels and OOD group ids.

    e[i, b] = 1 iff both samples are in-distribution with the same class,
    or both are OOD (label -1) in the same group != -1, or i == b.
    """
    labels = np.asarray(labels, dtype=np.int64)
    groups = np.asarray(ood_groups, dtype=np.int64)
    if labels.shape != groups.shape:
        raise ValueError("labels and ood_groups must have the same length")
    is_ood = labels == OOD_LABEL
    same_class = (labels[:, None] == labels[None, :]) & ~is_ood[:, None] & ~is_ood[None, :]
    grouped = (groups != -1) & is_ood
    same_group = (
        (groups[:, None] == groups[None, :]) & grouped[:, None] & grouped[None, :]
    )
    e = (same_class | same_group).astype(np.float64)
    np.fill_diagonal(e, 1.0)
    return SimMatrix(e)


def _check_stochastic(p: np.ndarray, name: str):
    if np.any(p < -STOCHASTIC_TOL) or np.any(
        np.abs(p.sum(axis=-1) - 1.0) > STOCHASTIC_TOL
    ):
        raise ValueError(f"{name} must be row-stochastic")


def guess_label(p1, p2, tau1: float):
    """Sharpened consistency pseudo-label: average the two predictions, raise
    elementwise to tau1 and renormalize."""
    p1 = np.asarray(p1, dtype=np.float64)
    p2 = np.asarray(p2, dtype=np.float64)
    _check_stochastic(np.atleast_2d(p1), "p1")
    _check_stochastic(np.atleast_2d(p2), "p2")
    avg = 0.5 * (p1 + p2)
    sharp = np.clip(avg, 0.0, None) ** tau1
    return sharp / sharp.sum(axis=-1, keepdims=True)


def loss_ce_mixup(p, y, mu: float, pair_perm):
    """Mean mixup cross-entropy: mu * CE(p_i, y_i) + (1-mu) * CE(p_i, y_perm(i)).

    Standard sign convention (non-negative loss). Returns (loss, grad wrt p).
    """
    p = np.asarray(p, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"shape mismatch: predictions {p.shape} vs targets {y.shape}")
    pair_perm = np.asarray(pair_perm, dtype=np.int64)
    b = p.shape[0]
    target = mu * y + (1.0 - mu) * y[pair_perm]
    p_safe = np.clip(p, PROB_FLOOR, None)
    loss = float(-np.sum(target * np.log(p_safe)) / b)
    grad = np.where(p > PROB_FLOOR, -target / p_safe / b, 0.0)
    return loss, grad


def total_loss(l_ce: float, l_cont: float, beta: float) -> float:
    """Combined objective: l_ce + beta * l_cont."""
    if not (np.isfinite(l_ce) and np.isfinite(l_cont) and np.isfinite(beta)):
        raise ValueError("total_loss requires finite inputs")
    return float(l_ce + beta * l_cont)


def mixup_draw(alpha: float, rng: np.random.Generator) -> float:
    """One mixup coefficient mu ~ Beta(alpha, alpha)."""
    return float(rng.beta(alpha, alpha))


@dataclass(frozen=True)
class BatchLayout:
    """Index layout for one equal-sampled mini-batch.

    supervised stacks two clean slots and one ID-noisy slot (two weak views
    of the clean samples plus one of the noisy ones); contrastive stacks one
    slot of each group.
    """

    clean: np.ndarray
    idn: np.ndarray
    ood: np.ndarray

    @property
    def supervised(self) -> np.ndarray:
        return np.concatenate([self.clean, self.clean, self.idn])

    @property
    def contrastive(self) -> np.ndarray:
        return np.concatenate([self.clean, self.idn, self.ood])


class _Cycler:
    """Draw from an index set in seeded shuffled passes, reshuffling on wrap."""

    def __init__(self, indices: np.ndarray, rng: np.random.Generator):
        self._indices = np.asarray(indices, dtype=np.int64)
        self._rng = rng
        self._perm = rng.permutation(self._indices)
        self._pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            avail = len(self._perm) - self._pos
            if avail == 0:
                self._perm = self._rng.permutation(self._indices)
                self._pos = 0
                avail = len(self._perm)
            step = min(k, avail)
            out.append(self._perm[self._pos : self._pos + step])
            self._pos += step
            k -= step
        return np.concatenate(out)


def equal_sampler(
    clean,
    idn,
    ood,
    batch_size: int,
    seed: int = 0,
    fill_idn_with_clean: bool = False,
) -> Iterator[BatchLayout]:
    """One epoch of equal-sized clean/ID-noisy/OOD mini-batches.

    An epoch is one pass over the largest group; smaller groups cycle with
    seeded reshuffling (minority over-sampling). batch_size must be divisible
    by 3. When the dataset has no ID-noisy samples (dataset-level GMM mode)
    pass fill_idn_with_clean=True to fill that slot with clean samples.
    """
    clean = np.asarray(clean, dtype=np.int64)
    idn = np.asarray(idn, dtype=np.int64)
    ood = np.asarray(ood, dtype=np.int64)
    if batch_size % 3 != 0 or batch_size <= 0:
        raise ConfigError(f"batch_size must be a positive multiple of 3, got {batch_size}")
    if idn.size == 0 and fill_idn_with_clean:
        idn = clean
    for name, group in (("clean", clean), ("idn", idn), ("ood", ood)):
        if group.size == 0:
            raise ConfigError(
                f"{name} group is empty; for datasets without ID noise "
                "(dataset-gmm mode) pass fill_idn_with_clean=True"
            )
    per = batch_size // 3
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0x5A,)))
    cyclers = [_Cycler(g, rng) for g in (clean, idn, ood)]
    largest = max(clean.size, idn.size, ood.size)
    n_batches = -(-largest // per)
    for _ in range(n_batches):
        c, i, o = (cy.take(per) for cy in cyclers)
        yield BatchLayout(clean=c, idn=i, ood=o)
