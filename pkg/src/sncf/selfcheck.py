"""Self-test for the loss functions: finite-difference gradient checks and
exact identities. Backs the `sncf losses-check` subcommand."""
from __future__ import annotations

import numpy as np

from .core import spawn_rng
from .losses import (
    SimMatrix,
    compute_sims,
    loss_ce_mixup,
    loss_guided_contrastive,
    loss_unsup,
    loss_unsup_mixup,
)

FD_STEP = 1e-5
REL_TOL = 1e-4


def _fd_grad(fn, x: np.ndarray) -> np.ndarray:
    """Central finite differences of a scalar function of a matrix."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + FD_STEP
        hi = fn(x)
        x[idx] = orig - FD_STEP
        lo = fn(x)
        x[idx] = orig
        g[idx] = (hi - lo) / (2.0 * FD_STEP)
    return g


def _rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-12)
    return float(np.linalg.norm(analytic - numeric) / scale)


def run_losses_check(n_batches: int = 20, batch: int = 6, dim: int = 8):
    """Return (max relative FD error, list of failure descriptions)."""
    failures: list[str] = []
    max_err = 0.0
    for trial in range(n_batches):
        rng = spawn_rng(trial, 0x10)
        a = rng.standard_normal((batch, dim))
        b = rng.standard_normal((batch, dim))
        tau = 0.2
        perm = rng.permutation(batch)
        mu = float(rng.uniform(0.1, 0.9))

        _, ga, gb = loss_unsup(a, b, tau)
        err = _rel_err(ga, _fd_grad(lambda x: loss_unsup(x, b, tau)[0], a.copy()))
        err = max(err, _rel_err(gb, _fd_grad(lambda x: loss_unsup(a, x, tau)[0], b.copy())))
        max_err = max(max_err, err)
        if err > REL_TOL:
            failures.append(f"loss_unsup gradient error {err:.2e} (trial {trial})")

        _, gs, gm = loss_unsup_mixup(a, b, mu, perm, tau)
        err = _rel_err(
            gs, _fd_grad(lambda x: loss_unsup_mixup(x, b, mu, perm, tau)[0], a.copy())
        )
        err = max(
            err,
            _rel_err(
                gm, _fd_grad(lambda x: loss_unsup_mixup(a, x, mu, perm, tau)[0], b.copy())
            ),
        )
        max_err = max(max_err, err)
        if err > REL_TOL:
            failures.append(f"loss_unsup_mixup gradient error {err:.2e} (trial {trial})")

        labels = rng.integers(-1, 3, size=batch)
        groups = np.where(labels == -1, rng.integers(-1, 2, size=batch), -1)
        sims = compute_sims(labels, groups)
        _, gw, gst = loss_guided_contrastive(a, b, sims, tau)
        err = _rel_err(
            gw,
            _fd_grad(lambda x: loss_guided_contrastive(x, b, sims, tau)[0], a.copy()),
        )
        err = max(
            err,
            _rel_err(
                gst,
                _fd_grad(lambda x: loss_guided_contrastive(a, x, sims, tau)[0], b.copy()),
            ),
        )
        max_err = max(max_err, err)
        if err > REL_TOL:
            failures.append(
                f"loss_guided_contrastive gradient error {err:.2e} (trial {trial})"
            )

        p = rng.uniform(0.05, 1.0, size=(batch, 4))
        p /= p.sum(axis=1, keepdims=True)
        y = np.eye(4)[rng.integers(0, 4, size=batch)]
        _, gp = loss_ce_mixup(p, y, mu, perm)
        err = _rel_err(gp, _fd_grad(lambda x: loss_ce_mixup(x, y, mu, perm)[0], p.copy()))
        max_err = max(max_err, err)
        if err > REL_TOL:
            failures.append(f"loss_ce_mixup gradient error {err:.2e} (trial {trial})")

        # exact identities
        if loss_unsup_mixup(a, b, 1.0, perm, tau)[0] != loss_unsup(b, a, tau)[0]:
            failures.append(f"mixup mu=1 identity violated (trial {trial})")
        ident = SimMatrix(np.eye(batch))
        if loss_guided_contrastive(a, b, ident, tau)[0] != loss_unsup(b, a, tau)[0]:
            failures.append(f"delta-sims identity violated (trial {trial})")
    return max_err, failures
