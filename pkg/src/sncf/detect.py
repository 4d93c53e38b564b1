"""Detection orchestration: per-class clustering of the spectral embedding,
density-based clean/OOD labeling, the dataset-level GMM mode, and OOD
re-embedding into similarity groups."""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import (
    FeatureMatrix,
    LabelVector,
    PipelineConfig,
    l2_normalize_rows,
    spawn_rng,
)
from .embed import Embedding, embed_pipeline
from .gmm import gmm_assign, gmm_fit
from .optics import ClusterExtraction, multi_scale_select

KIND_CLEAN = 0
KIND_ID_NOISY = 1
KIND_OOD = 2

_KIND_NAMES = {KIND_CLEAN: "clean", KIND_ID_NOISY: "id_noisy", KIND_OOD: "ood"}

DENSITY_SAMPLE_LIMIT = 2000
DENSITY_SAMPLE_PAIRS = 100_000
DENSITY_TIE_TOL = 1e-12
GMM_CONFIDENCE_RATIO = 1.2


@dataclass(frozen=True)
class ClassDiagnostics:
    label: int
    chosen_min_pts: int
    n_clusters: int
    outlier_count: int
    degraded: bool
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "chosen_min_pts": self.chosen_min_pts,
            "n_clusters": self.n_clusters,
            "outlier_count": self.outlier_count,
            "degraded": self.degraded,
            "flags": list(self.flags),
        }


@dataclass(frozen=True)
class NoiseReport:
    """Per-sample verdicts plus per-class clustering diagnostics."""

    kinds: np.ndarray  # KIND_* codes, length N
    ood_groups: np.ndarray  # group id for OOD samples, -1 otherwise
    ood_group_count: int
    per_class: tuple[ClassDiagnostics, ...]
    mode: str
    config: dict
    seed: int
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        kinds = np.asarray(self.kinds, dtype=np.int64)
        groups = np.asarray(self.ood_groups, dtype=np.int64)
        if np.any((kinds != KIND_OOD) & (groups != -1)):
            raise ValueError("only OOD samples may carry a group id")
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "ood_groups", groups)

    @property
    def counts(self) -> dict:
        return {
            name: int(np.sum(self.kinds == code))
            for code, name in _KIND_NAMES.items()
        }

    @property
    def beta_estimated(self) -> float:
        """Detected OOD fraction, usable as the contrastive loss weight."""
        return float(np.mean(self.kinds == KIND_OOD))

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config": self.config,
            "counts": self.counts,
            "beta_estimated": self.beta_estimated,
            "ood_group_count": self.ood_group_count,
            "flags": list(self.flags),
            "per_class": [c.to_dict() for c in self.per_class],
            "verdicts": [
                {"index": i, "kind": _KIND_NAMES[int(k)], "ood_group": int(g)}
                for i, (k, g) in enumerate(zip(self.kinds, self.ood_groups))
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def cluster_density(members, raw: FeatureMatrix, seed: int = 0) -> float:
    """Mean pairwise cosine distance of a cluster in the raw feature space.

    Lower means denser. Clusters above 2000 members estimate the mean from
    100000 seeded random pairs.
    """
    members = np.asarray(members, dtype=np.int64)
    m = members.size
    if m < 2:
        raise ValueError("cluster density needs at least 2 members")
    rows = raw.data[members]
    unit = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    if m <= DENSITY_SAMPLE_LIMIT:
        cos = unit @ unit.T
        total = cos.sum() - np.trace(cos)
        mean_cos = total / (m * (m - 1))
    else:
        rng = spawn_rng(seed, 0xDE)
        a = rng.integers(0, m, size=DENSITY_SAMPLE_PAIRS)
        b = rng.integers(0, m - 1, size=DENSITY_SAMPLE_PAIRS)
        b[b >= a] += 1  # distinct pair, uniform over off-diagonal
        mean_cos = float(np.mean(np.einsum("ij,ij->i", unit[a], unit[b])))
    return float(1.0 - mean_cos)


def classify_clusters(member_sets, raw: FeatureMatrix, seed: int = 0):
    """Label the single lowest-density cluster OOD, all others clean.

    member_sets is a list of global index arrays, one per cluster. With a
    single cluster everything is clean and the no-OOD flag is set. Density
    ties break toward the smaller cluster being OOD.
    """
    if not member_sets:
        raise ValueError("classify_clusters needs at least one cluster")
    densities = [cluster_density(ms, raw, seed) for ms in member_sets]
    flags: list[str] = []
    if len(member_sets) == 1:
        return [KIND_CLEAN], ["no_ood_cluster"]
    best = 0
    for i in range(1, len(member_sets)):
        gap = densities[i] - densities[best]
        if gap > DENSITY_TIE_TOL:
            best = i
        elif abs(gap) <= DENSITY_TIE_TOL and len(member_sets[i]) < len(member_sets[best]):
            best = i
    labels = [KIND_OOD if i == best else KIND_CLEAN for i in range(len(member_sets))]
    return labels, flags


def reembed_ood(
    features: FeatureMatrix, ood_indices, cfg: PipelineConfig
) -> np.ndarray:
    """Cluster detected OOD samples into similarity groups.

    Re-embeds only the OOD rows and runs the multi-scale clustering on the
    result; cluster members get group ids 0..G-1 and outliers -1 (similar
    to their own augmented view only). Returns one group id per entry of
    ood_indices.
    """
    ood_indices = np.asarray(ood_indices, dtype=np.int64)
    n = ood_indices.size
    if n < 2:
        return np.full(n, -1, dtype=np.int64)
    sub = FeatureMatrix(features.data[ood_indices], normalized=features.normalized)
    knn = min(cfg.knn, n - 1)
    k_eigen = min(cfg.k_eigen, n - 2) if n > 2 else 1
    if k_eigen < 1:
        return np.full(n, -1, dtype=np.int64)
    neighborhoods = [v for v in cfg.optics_neighborhoods if v < n]
    if not neighborhoods:
        return np.full(n, -1, dtype=np.int64)
    sub_cfg = PipelineConfig(
        **{
            **cfg.to_dict(),
            "knn": knn,
            "k_eigen": k_eigen,
            "optics_neighborhoods": tuple(neighborhoods),
        }
    )
    emb = embed_pipeline(sub, sub_cfg)
    extraction = multi_scale_select(
        emb.coords, neighborhoods, cfg.xi, cfg.min_cluster_size
    )
    return extraction.membership.astype(np.int64)


def _prepare(features: FeatureMatrix, cfg: PipelineConfig):
    if cfg.normalize_features and not features.normalized:
        features = l2_normalize_rows(features)
    embedding = embed_pipeline(features, cfg)
    return features, embedding


def detect_per_class(
    features: FeatureMatrix,
    labels: LabelVector,
    cfg: PipelineConfig,
    n_threads: int | None = None,
    embedding: Embedding | None = None,
) -> NoiseReport:
    """Per-class detection: cluster each class's rows of the dataset-level
    embedding, label clusters clean/OOD by raw-space density, mark outliers
    as ID-noisy, then group the OOD set by re-embedding."""
    if len(labels) != features.n:
        raise ValueError("labels length must match the feature row count")
    if cfg.normalize_features and not features.normalized:
        features = l2_normalize_rows(features)
    if embedding is None:
        embedding = embed_pipeline(features, cfg)
    n = features.n
    kinds = np.full(n, KIND_CLEAN, dtype=np.int64)
    groups = np.full(n, -1, dtype=np.int64)
    min_v = min(cfg.optics_neighborhoods)

    def run_class(cls: int) -> ClassDiagnostics:
        idx = np.flatnonzero(labels.labels == cls)
        if idx.size < min_v + 1:
            return ClassDiagnostics(
                label=cls,
                chosen_min_pts=0,
                n_clusters=0,
                outlier_count=0,
                degraded=True,
                flags=("class_too_small",),
            )
        extraction = multi_scale_select(
            embedding.coords[idx],
            cfg.optics_neighborhoods,
            cfg.xi,
            cfg.min_cluster_size,
        )
        member_sets = [
            idx[extraction.membership == cid]
            for cid in range(len(extraction.clusters))
        ]
        flags: list[str] = []
        if member_sets:
            cluster_kinds, cflags = classify_clusters(member_sets, features, cfg.seed)
            flags.extend(cflags)
            for cid, kind in enumerate(cluster_kinds):
                kinds[member_sets[cid]] = kind
            kinds[idx[extraction.membership == -1]] = KIND_ID_NOISY
        else:
            flags.append("no_clusters")
            kinds[idx] = KIND_ID_NOISY
        return ClassDiagnostics(
            label=cls,
            chosen_min_pts=extraction.chosen_min_pts,
            n_clusters=len(extraction.clusters),
            outlier_count=extraction.outlier_count,
            degraded=extraction.degraded,
            flags=tuple(flags),
        )

    class_ids = list(range(labels.n_classes))
    if n_threads and n_threads > 1:
        with ThreadPoolExecutor(max_workers=n_threads) as pool:
            diagnostics = list(pool.map(run_class, class_ids))
    else:
        diagnostics = [run_class(c) for c in class_ids]

    ood_idx = np.flatnonzero(kinds == KIND_OOD)
    ood_groups = reembed_ood(features, ood_idx, cfg)
    groups[ood_idx] = ood_groups
    group_count = int(ood_groups.max()) + 1 if ood_groups.size else 0
    return NoiseReport(
        kinds=kinds,
        ood_groups=groups,
        ood_group_count=max(group_count, 0),
        per_class=tuple(diagnostics),
        mode="per-class",
        config=cfg.to_dict(),
        seed=cfg.seed,
    )


def detect_dataset_gmm(
    features: FeatureMatrix,
    cfg: PipelineConfig,
    embedding: Embedding | None = None,
) -> NoiseReport:
    """Dataset-level detection for the no-ID-noise regime: fit a 2-component
    Gaussian mixture on the embedding and label the lower-density component
    (by raw-space density) OOD."""
    if cfg.normalize_features and not features.normalized:
        features = l2_normalize_rows(features)
    if embedding is None:
        embedding = embed_pipeline(features, cfg)
    model = gmm_fit(embedding.coords, cfg.covariance_kind, cfg.seed)
    ids, _ = gmm_assign(model, embedding.coords)
    members = [np.flatnonzero(ids == c) for c in range(2)]
    flags: list[str] = []
    if model.degenerate or min(len(m) for m in members) < 2:
        flags.append("degenerate_split")
        kinds = np.full(features.n, KIND_CLEAN, dtype=np.int64)
    else:
        densities = [cluster_density(m, features, cfg.seed) for m in members]
        ood_comp = int(np.argmax(densities))
        ratio = max(densities) / max(min(densities), 1e-12)
        if ratio < GMM_CONFIDENCE_RATIO:
            flags.append("low_confidence_split")
        kinds = np.full(features.n, KIND_CLEAN, dtype=np.int64)
        kinds[members[ood_comp]] = KIND_OOD
    groups = np.full(features.n, -1, dtype=np.int64)
    ood_idx = np.flatnonzero(kinds == KIND_OOD)
    ood_groups = reembed_ood(features, ood_idx, cfg)
    groups[ood_idx] = ood_groups
    group_count = int(ood_groups.max()) + 1 if ood_groups.size else 0
    return NoiseReport(
        kinds=kinds,
        ood_groups=groups,
        ood_group_count=max(group_count, 0),
        per_class=(),
        mode="dataset-gmm",
        config=cfg.to_dict(),
        seed=cfg.seed,
        flags=tuple(flags),
    )
