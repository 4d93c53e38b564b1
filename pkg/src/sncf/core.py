"""Shared data model, configuration, seeded RNG and feature/label file I/O."""
from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field

import numpy as np

UNIT_NORM_TOL = 1e-5


class LoadError(ValueError):
    """A feature or label file could not be parsed."""


class ConfigError(ValueError):
    """A configuration value violates its constraints."""


class NumericalError(RuntimeError):
    """A numerical routine failed to converge or produced invalid output."""


def spawn_rng(seed: int, *path: int) -> np.random.Generator:
    """Deterministic generator for a (seed, sub-stream path) pair.

    Every stochastic operation in the pipeline derives its generator from
    the pipeline seed plus a fixed integer path, so the same seed yields
    bit-identical output regardless of call order.
    """
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=path))


@dataclass(frozen=True)
class FeatureMatrix:
    """N x d matrix of sample representations, one row per sample."""

    data: np.ndarray
    normalized: bool

    def __post_init__(self):
        data = np.ascontiguousarray(np.asarray(self.data, dtype=np.float64))
        if data.ndim != 2:
            raise LoadError(f"feature matrix must be 2-D, got shape {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 2:
            raise LoadError(f"need n >= 1 and d >= 2, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            i, j = np.argwhere(~np.isfinite(data))[0]
            raise LoadError(f"non-finite entry at row {i}, column {j}")
        object.__setattr__(self, "data", data)

    @classmethod
    def from_array(cls, data) -> "FeatureMatrix":
        """Build from an array, detecting the unit-row-norm flag by inspection."""
        data = np.asarray(data, dtype=np.float64)
        if data.ndim != 2 or not np.all(np.isfinite(data)):
            # delegate the error message to __post_init__
            return cls(data, normalized=False)
        norms = np.linalg.norm(data, axis=1)
        return cls(data, normalized=bool(np.all(np.abs(norms - 1.0) <= UNIT_NORM_TOL)))

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class LabelVector:
    """Length-N integer labels in [0, n_classes)."""

    labels: np.ndarray
    n_classes: int

    def __post_init__(self):
        labels = np.ascontiguousarray(np.asarray(self.labels, dtype=np.int64))
        if labels.ndim != 1:
            raise LoadError(f"labels must be 1-D, got shape {labels.shape}")
        if self.n_classes < 1:
            raise ConfigError(f"n_classes must be >= 1, got {self.n_classes}")
        if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
            bad = int(np.argmax((labels < 0) | (labels >= self.n_classes)))
            raise LoadError(
                f"label {labels[bad]} at row {bad} outside [0, {self.n_classes})"
            )
        object.__setattr__(self, "labels", labels)

    @classmethod
    def from_array(cls, labels) -> "LabelVector":
        labels = np.asarray(labels, dtype=np.int64)
        n_classes = int(labels.max()) + 1 if labels.size else 1
        return cls(labels, n_classes)

    def __len__(self) -> int:
        return self.labels.size


class VerdictKind(enum.Enum):
    CLEAN = "clean"
    ID_NOISY = "id_noisy"
    OOD = "ood"


@dataclass(frozen=True)
class SampleVerdict:
    kind: VerdictKind
    ood_group: int = -1

    def __post_init__(self):
        if self.kind is not VerdictKind.OOD and self.ood_group != -1:
            raise ConfigError("ood_group is only meaningful for OOD verdicts")
        if self.ood_group < -1:
            raise ConfigError(f"ood_group must be >= -1, got {self.ood_group}")


class CovarianceKind(enum.Enum):
    FULL = "full"
    SPHERICAL = "spherical"


@dataclass(frozen=True)
class PipelineConfig:
    """Hyper-parameters for the full detection pipeline.

    Defaults follow the reference configuration: 50 neighbors with affinity
    exponent 3, a 20-dimensional spectral embedding, clustering scans at
    neighborhood sizes 75/50/25 with minimum cluster size 75 and xi = 0.01,
    sharpening temperature 2, contrastive temperature 0.2.
    """

    knn: int = 50
    gamma: int = 3
    k_eigen: int = 20
    optics_neighborhoods: tuple[int, ...] = (75, 50, 25)
    min_cluster_size: int = 75
    xi: float = 0.01
    covariance_kind: CovarianceKind = CovarianceKind.FULL
    tau1: float = 2.0
    tau2: float = 0.2
    beta: float = 1.0
    mixup_alpha: float = 1.0
    seed: int = 0
    normalize_features: bool = True

    def __post_init__(self):
        object.__setattr__(
            self, "optics_neighborhoods", tuple(int(v) for v in self.optics_neighborhoods)
        )
        if isinstance(self.covariance_kind, str):
            object.__setattr__(
                self, "covariance_kind", CovarianceKind(self.covariance_kind.lower())
            )
        for name in ("knn", "gamma", "k_eigen", "min_cluster_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        vs = self.optics_neighborhoods
        if not vs:
            raise ConfigError("optics_neighborhoods must be non-empty")
        if any(v < 1 for v in vs) or any(nxt >= prev for prev, nxt in zip(vs, vs[1:])):
            raise ConfigError(
                f"optics_neighborhoods must be positive and strictly decreasing, got {vs}"
            )
        if not 0.0 < self.xi < 1.0:
            raise ConfigError(f"xi must lie in (0, 1), got {self.xi}")
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ConfigError("temperatures tau1 and tau2 must be > 0")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")
        if self.mixup_alpha <= 0:
            raise ConfigError(f"mixup_alpha must be > 0, got {self.mixup_alpha}")
        if self.seed < 0:
            raise ConfigError(f"seed must be unsigned, got {self.seed}")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["covariance_kind"] = self.covariance_kind.value
        out["optics_neighborhoods"] = list(self.optics_neighborhoods)
        return out


def l2_normalize_rows(m: FeatureMatrix) -> FeatureMatrix:
    """Scale every row to unit L2 norm, preserving direction."""
    norms = np.linalg.norm(m.data, axis=1)
    if np.any(norms == 0.0):
        row = int(np.argmax(norms == 0.0))
        raise ValueError(f"cannot normalize all-zero row {row}")
    return FeatureMatrix(m.data / norms[:, None], normalized=True)


def cosine_sim(u, v) -> float:
    """Cosine of the angle between two nonzero vectors."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch: {u.shape} vs {v.shape}")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return float(np.clip(np.dot(u, v) / (nu * nv), -1.0, 1.0))


def load_features(path, fmt: str | None = None) -> FeatureMatrix:
    """Load an N x d feature matrix from an NPY or CSV file.

    The format is inferred from the extension when not given explicitly.
    """
    path = str(path)
    if fmt is None:
        fmt = "npy" if path.endswith(".npy") else "csv"
    fmt = fmt.lower()
    if fmt == "npy":
        try:
            arr = np.load(path, allow_pickle=False)
        except Exception as exc:  # noqa: BLE001 - wrap every parse failure
            raise LoadError(f"cannot read NPY file {path}: {exc}") from exc
        if arr.ndim != 2:
            raise LoadError(f"{path}: expected a 2-D matrix, got shape {arr.shape}")
        return FeatureMatrix.from_array(arr.astype(np.float64))
    if fmt == "csv":
        return _load_csv(path)
    raise LoadError(f"unknown feature format {fmt!r}")


def _load_csv(path: str) -> FeatureMatrix:
    rows = []
    width = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if width is None:
                width = len(parts)
            elif len(parts) != width:
                raise LoadError(
                    f"{path}: row {lineno} has {len(parts)} columns, expected {width}"
                )
            try:
                row = [float(p) for p in parts]
            except ValueError as exc:
                bad = next(i for i, p in enumerate(parts) if not _is_float(p))
                raise LoadError(
                    f"{path}: cannot parse value {parts[bad]!r} at row {lineno}, "
                    f"column {bad}"
                ) from exc
            for col, val in enumerate(row):
                if not np.isfinite(val):
                    raise LoadError(
                        f"{path}: non-finite value at row {lineno}, column {col}"
                    )
            rows.append(row)
    if not rows:
        raise LoadError(f"{path}: empty CSV file")
    return FeatureMatrix.from_array(np.array(rows, dtype=np.float64))


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def save_features(m: FeatureMatrix, path, fmt: str | None = None) -> None:
    """Write features as NPY (little-endian float32, C order) or CSV."""
    path = str(path)
    if fmt is None:
        fmt = "npy" if path.endswith(".npy") else "csv"
    if fmt == "npy":
        np.save(path, np.ascontiguousarray(m.data.astype("<f4")))
    elif fmt == "csv":
        np.savetxt(path, m.data.astype(np.float32), delimiter=",", fmt="%.9g")
    else:
        raise LoadError(f"unknown feature format {fmt!r}")


def load_labels(path, n_expected: int | None = None) -> LabelVector:
    """Load one integer label per line."""
    labels = []
    with open(str(path), "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            line = line.strip()
            if not line:
                continue
            try:
                labels.append(int(line))
            except ValueError as exc:
                raise LoadError(
                    f"{path}: cannot parse label {line!r} at row {lineno}"
                ) from exc
    if n_expected is not None and len(labels) != n_expected:
        raise LoadError(
            f"{path}: {len(labels)} labels but {n_expected} feature rows"
        )
    return LabelVector.from_array(np.array(labels, dtype=np.int64))


def save_labels(labels: LabelVector, path) -> None:
    with open(str(path), "w", encoding="utf-8") as fh:
        for lab in labels.labels:
            fh.write(f"{int(lab)}\n")
