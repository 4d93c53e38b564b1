"""Noise detection for labeled feature datasets.

Spectrally embeds unsupervised representations, clusters them per class
with a multi-scale OPTICS vote (or a dataset-level Gaussian mixture) to
separate clean, label-noisy and out-of-distribution samples, and provides
the matching noise-robust training losses as verified pure functions.
"""

__version__ = "0.1.0"

from .core import (
    ConfigError,
    CovarianceKind,
    FeatureMatrix,
    LabelVector,
    LoadError,
    NumericalError,
    PipelineConfig,
    SampleVerdict,
    VerdictKind,
    cosine_sim,
    l2_normalize_rows,
    load_features,
    load_labels,
    save_features,
    save_labels,
)
from .detect import (
    NoiseReport,
    classify_clusters,
    cluster_density,
    detect_dataset_gmm,
    detect_per_class,
    reembed_ood,
)
from .embed import (
    Embedding,
    SparseAffinity,
    build_affinity,
    embed_pipeline,
    normalized_laplacian,
    spectral_embed,
)
from .gmm import GmmModel, gmm_assign, gmm_fit
from .losses import (
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
from .optics import (
    ClusterExtraction,
    ReachabilityOrdering,
    extract_xi_clusters,
    multi_scale_select,
    optics_order,
)
from .synth import (
    SynthDataset,
    SynthSpec,
    generate,
    linear_probe,
    sample_vmf,
    score_detection,
)
