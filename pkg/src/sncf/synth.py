"""Synthetic hypersphere dataset generator, linear separability probe and
detection metrics.

The generator intentionally encodes the geometry the detection pipeline
assumes: in-distribution classes form von Mises-Fisher modes inside a cap
around +e1 while out-of-distribution samples are drawn from diffuse modes
in the opposite cap. It validates the pipeline, not that assumption.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ConfigError, FeatureMatrix, LabelVector, spawn_rng

TRUTH_CLEAN = 0
TRUTH_ID_NOISY = 1
TRUTH_OOD = 2

CAP_COS = 0.5  # half-angle 60 degrees


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of the synthetic corrupted dataset.

    Concentrations default to values that realize clear ID modes and a
    diffuse OOD cloud in high dimension (see the dimension-dependence of
    von Mises-Fisher concentration: the mean cosine to the mode scales
    roughly as kappa / d for small kappa).
    """

    d: int = 128
    n_classes: int = 10
    n_per_class: int = 500
    r_in: float = 0.2
    r_out: float = 0.2
    kappa_id: float = 600.0
    kappa_ood: float = 20.0
    ood_modes: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.d < 3:
            raise ConfigError("need d >= 3 for stable vMF sampling")
        if self.n_classes < 1 or self.n_per_class < 1 or self.ood_modes < 1:
            raise ConfigError("counts must be positive")
        if not (0 <= self.r_in < 1 and 0 <= self.r_out < 1):
            raise ConfigError("noise ratios must lie in [0, 1)")
        if self.r_in + self.r_out >= 1:
            raise ConfigError("r_in + r_out must be < 1")
        if self.kappa_id <= 0 or self.kappa_ood <= 0:
            raise ConfigError("concentrations must be > 0")


@dataclass(frozen=True)
class SynthDataset:
    features: FeatureMatrix
    observed_labels: LabelVector
    truth_kind: np.ndarray  # TRUTH_* codes
    truth_group: np.ndarray  # OOD mode id, -1 for non-OOD
    spec: SynthSpec = field(repr=False, default=None)


def sample_vmf(mu, kappa: float, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw n unit vectors from vMF(mu, kappa) by Wood's rejection scheme."""
    mu = np.asarray(mu, dtype=np.float64)
    d = mu.shape[0]
    b = (d - 1) / (np.sqrt(4.0 * kappa**2 + (d - 1) ** 2) + 2.0 * kappa)
    x0 = (1.0 - b) / (1.0 + b)
    c = kappa * x0 + (d - 1) * np.log(1.0 - x0**2)
    ws = np.empty(n)
    filled = 0
    while filled < n:
        m = n - filled
        z = rng.beta((d - 1) / 2.0, (d - 1) / 2.0, size=m)
        w = (1.0 - (1.0 + b) * z) / (1.0 - (1.0 - b) * z)
        u = rng.uniform(size=m)
        accept = kappa * w + (d - 1) * np.log(1.0 - x0 * w) - c >= np.log(u)
        k = int(accept.sum())
        ws[filled : filled + k] = w[accept]
        filled += k
    tang = rng.standard_normal((n, d))
    tang -= np.outer(tang @ mu, mu)
    tang /= np.linalg.norm(tang, axis=1, keepdims=True)
    return ws[:, None] * mu + np.sqrt(np.clip(1.0 - ws**2, 0.0, None))[:, None] * tang


def _cap_direction(pole: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction within the 60-degree cap around the given pole."""
    d = pole.shape[0]
    t = rng.uniform(CAP_COS, 1.0)
    v = rng.standard_normal(d)
    v -= (v @ pole) * pole
    v /= np.linalg.norm(v)
    return t * pole + np.sqrt(1.0 - t * t) * v


def generate(spec: SynthSpec) -> SynthDataset:
    """Deterministic synthetic dataset with planted clean/ID-noisy/OOD truth."""
    rng = spawn_rng(spec.seed, 0x5E)
    d, c = spec.d, spec.n_classes
    e1 = np.zeros(d)
    e1[0] = 1.0
    class_means = np.stack([_cap_direction(e1, rng) for _ in range(c)])
    ood_means = np.stack([_cap_direction(-e1, rng) for _ in range(spec.ood_modes)])

    n = spec.n_per_class
    n_ood = int(round(spec.r_out * n))
    n_idn = int(round(spec.r_in * n))
    n_clean = n - n_ood - n_idn
    if n_clean < 1:
        raise ConfigError("per-class clean count must be >= 1")

    feats, labels, kinds, groups = [], [], [], []
    for cls in range(c):
        feats.append(sample_vmf(class_means[cls], spec.kappa_id, n_clean, rng))
        labels.append(np.full(n_clean, cls))
        kinds.append(np.full(n_clean, TRUTH_CLEAN))
        groups.append(np.full(n_clean, -1))
        if n_idn:
            # true class drawn uniformly among the other classes
            true_cls = rng.integers(0, c - 1, size=n_idn)
            true_cls[true_cls >= cls] += 1
            rows = np.stack(
                [sample_vmf(class_means[t], spec.kappa_id, 1, rng)[0] for t in true_cls]
            )
            feats.append(rows)
            labels.append(np.full(n_idn, cls))
            kinds.append(np.full(n_idn, TRUTH_ID_NOISY))
            groups.append(np.full(n_idn, -1))
        if n_ood:
            mode = rng.integers(0, spec.ood_modes, size=n_ood)
            rows = np.empty((n_ood, d))
            for g in range(spec.ood_modes):
                mask = mode == g
                if mask.any():
                    rows[mask] = sample_vmf(
                        ood_means[g], spec.kappa_ood, int(mask.sum()), rng
                    )
            feats.append(rows)
            labels.append(np.full(n_ood, cls))
            kinds.append(np.full(n_ood, TRUTH_OOD))
            groups.append(mode)
    features = FeatureMatrix(np.vstack(feats), normalized=True)
    return SynthDataset(
        features=features,
        observed_labels=LabelVector(np.concatenate(labels), c),
        truth_kind=np.concatenate(kinds).astype(np.int64),
        truth_group=np.concatenate(groups).astype(np.int64),
        spec=spec,
    )


def linear_probe(features: FeatureMatrix, is_ood, seed: int = 0) -> float:
    """Training accuracy of a logistic regression separating OOD from ID.

    Full-batch gradient descent, learning rate 0.1, 500 steps, bias term,
    no regularization; reports separability of the given set, so accuracy
    is measured on the training data itself.
    """
    y = np.asarray(is_ood, dtype=np.float64)
    if y.min() == y.max():
        raise ValueError("linear_probe needs both ID and OOD samples")
    x = np.hstack([features.data, np.ones((features.n, 1))])
    w = np.zeros(x.shape[1])
    for _ in range(500):
        p = 1.0 / (1.0 + np.exp(-(x @ w)))
        w -= 0.1 * x.T @ (p - y) / len(y)
    return float(((x @ w > 0.0) == (y > 0.5)).mean())


def score_detection(report, truth_kind, truth_group=None) -> dict:
    """One-vs-rest precision/recall/F1 per category plus OOD-group purity."""
    from .detect import NoiseReport  # local import to avoid a cycle

    assert isinstance(report, NoiseReport)
    truth_kind = np.asarray(truth_kind, dtype=np.int64)
    if len(truth_kind) != len(report.kinds):
        raise ValueError("report and truth lengths differ")
    scores = {}
    for name, code in (("clean", TRUTH_CLEAN), ("id_noisy", TRUTH_ID_NOISY), ("ood", TRUTH_OOD)):
        pred = report.kinds == code
        true = truth_kind == code
        tp = int(np.sum(pred & true))
        prec = tp / max(int(pred.sum()), 1)
        rec = tp / max(int(true.sum()), 1)
        f1 = 2 * prec * rec / max(prec + rec, 1e-12)
        scores[name] = {"precision": prec, "recall": rec, "f1": f1}
    if truth_group is not None:
        truth_group = np.asarray(truth_group, dtype=np.int64)
        purities = []
        for g in range(report.ood_group_count):
            members = np.flatnonzero(report.ood_groups == g)
            if members.size == 0:
                continue
            modes = truth_group[members]
            best = max(np.sum(modes == m) for m in np.unique(modes))
            purities.append(best / members.size)
        scores["ood_group_purity"] = float(np.mean(purities)) if purities else 0.0
    return scores
