"""Per-class feature-distribution prototypes.

Each class is summarised by the mean and a shrunk, correlation-normalized
covariance of its Tukey-transformed backbone features. Raw samples are never
stored. Pipeline per class: covariance -> shrinkage (full rank) ->
correlation normalization (unit diagonal) -> SPD inversion.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, cholesky
from sklearn.base import BaseEstimator

from . import tensor as T
from ._validation import (
    as_float_array,
    as_label_array,
    check_consistent_length,
    check_square_matrix,
)
from .container import read_container, write_container
from .exceptions import (
    DegenerateDistributionError,
    InsufficientDataError,
    ScenarioError,
    ShapeError,
)
from .tensor import Tensor


def tukey_transform(x, delta: float):
    """Element-wise sign-preserving power transform sign(v)|v|^delta."""
    delta = float(delta)
    if not 0.0 < delta <= 1.0:
        raise ValueError(f"delta must lie in (0, 1], got {delta}")
    if isinstance(x, Tensor):
        return T.signed_pow(x, delta)
    arr = np.asarray(x, dtype=np.float64)
    return np.sign(arr) * np.abs(arr) ** delta


def shrink_covariance(S, gamma0: float, gamma1: float) -> np.ndarray:
    """Add gamma0*V0 to the diagonal and gamma1*V1 off-diagonal, where V0/V1
    are the mean diagonal variance and mean off-diagonal covariance of S."""
    S = check_square_matrix(S)
    if gamma0 < 0 or gamma1 < 0:
        raise ValueError("shrinkage weights must be non-negative")
    d = S.shape[0]
    v0 = float(np.trace(S)) / d
    off_mask = ~np.eye(d, dtype=bool)
    v1 = float(S[off_mask].mean()) if d > 1 else 0.0
    return S + gamma0 * v0 * np.eye(d) + gamma1 * v1 * (1.0 - np.eye(d))


def normalize_correlation(S) -> np.ndarray:
    """Scale S to unit diagonal: out[i,j] = S[i,j] / sqrt(S[i,i] S[j,j])."""
    S = check_square_matrix(S)
    diag = np.diag(S)
    if (diag <= 0).any():
        raise DegenerateDistributionError(
            f"correlation normalization needs positive variances, min diag {diag.min():.3g}"
        )
    sigma = np.sqrt(diag)
    return S / np.outer(sigma, sigma)


def _spd_inverse(S: np.ndarray, context: str) -> np.ndarray:
    try:
        chol = cholesky(S, lower=True)
    except np.linalg.LinAlgError as exc:
        raise DegenerateDistributionError(f"{context}: matrix not positive definite") from exc
    return cho_solve((chol, True), np.eye(S.shape[0]))


@dataclass
class ClassPrototype:
    """Frozen feature distribution of one class in Tukey space."""

    class_id: int
    mean: np.ndarray
    covariance: np.ndarray  # shrunk + correlation-normalized
    inverse: np.ndarray = field(repr=False)
    sample_count: int = 0


def mahalanobis(v, proto: ClassPrototype):
    """Distance sqrt((v - mean)^T inverse (v - mean)); differentiable in v."""
    if isinstance(v, Tensor):
        if v.shape != proto.mean.shape:
            raise ShapeError(f"vector dim {v.shape} != prototype dim {proto.mean.shape}")
        diff = T.reshape(v - Tensor(proto.mean), (1, -1))
        quad = T.tsum(T.mul(T.matmul(diff, Tensor(proto.inverse)), diff))
        return T.tsqrt(quad)
    arr = np.asarray(v, dtype=np.float64)
    if arr.shape != proto.mean.shape:
        raise ShapeError(f"vector dim {arr.shape} != prototype dim {proto.mean.shape}")
    diff = arr - proto.mean
    return float(np.sqrt(diff @ proto.inverse @ diff))


def nearest_wrong_distribution(v, true_class: int, prototypes) -> ClassPrototype:
    """The prototype closest to v among classes other than ``true_class``.

    Ties break toward the lowest class id.
    """
    candidates = [p for p in prototypes if p.class_id != true_class]
    if not candidates:
        raise ScenarioError("need at least one prototype of a different class")
    arr = np.asarray(v, dtype=np.float64)
    best = None
    best_dist = np.inf
    for proto in sorted(candidates, key=lambda p: p.class_id):
        dist = mahalanobis(arr, proto)
        if dist < best_dist:
            best, best_dist = proto, dist
    return best


class GaussianPrototypes(BaseEstimator):
    """Estimator that fits one :class:`ClassPrototype` per class.

    ``fit`` takes raw backbone features; the Tukey transform is applied
    internally, and all distance queries expect / apply Tukey space
    consistently.
    """

    def __init__(self, delta: float = 0.5, gamma0: float = 3.0, gamma1: float = 3.0):
        self.delta = delta
        self.gamma0 = gamma0
        self.gamma1 = gamma1

    def fit(self, F, y):
        F = as_float_array(F, ndim=2, name="features")
        y = as_label_array(y)
        check_consistent_length(F, y)
        transformed = tukey_transform(F, self.delta)
        self.classes_ = np.unique(y)
        self.feature_dim_ = F.shape[1]
        self.prototypes_ = []
        for k in self.classes_:
            rows = transformed[y == k]
            if len(rows) < 2:
                raise InsufficientDataError(f"class {int(k)} has {len(rows)} samples, need >= 2")
            mean = rows.mean(axis=0)
            centered = rows - mean
            cov = centered.T @ centered / (len(rows) - 1)
            shrunk = shrink_covariance(cov, self.gamma0, self.gamma1)
            normalized = normalize_correlation(shrunk)
            inverse = _spd_inverse(normalized, f"class {int(k)} covariance")
            self.prototypes_.append(
                ClassPrototype(
                    class_id=int(k),
                    mean=mean,
                    covariance=normalized,
                    inverse=inverse,
                    sample_count=len(rows),
                )
            )
        return self

    def _stack(self):
        means = np.stack([p.mean for p in self.prototypes_])
        inverses = np.stack([p.inverse for p in self.prototypes_])
        return means, inverses

    def distances(self, V: np.ndarray) -> np.ndarray:
        """Mahalanobis distance of each Tukey-space row to every prototype."""
        V = as_float_array(np.atleast_2d(V), ndim=2, name="V")
        if V.shape[1] != self.feature_dim_:
            raise ShapeError(f"feature dim {V.shape[1]} != fitted dim {self.feature_dim_}")
        means, inverses = self._stack()
        diff = V[:, None, :] - means[None, :, :]  # n x K x d
        quad = np.einsum("nkd,kde,nke->nk", diff, inverses, diff)
        return np.sqrt(np.maximum(quad, 0.0))

    def nearest_wrong(self, V: np.ndarray, true_classes: np.ndarray) -> np.ndarray:
        """Index into ``prototypes_`` of the closest other-class prototype per row."""
        dists = self.distances(V)
        true_classes = np.asarray(true_classes)
        class_ids = np.array([p.class_id for p in self.prototypes_])
        masked = dists.copy()
        masked[true_classes[:, None] == class_ids[None, :]] = np.inf
        if np.isinf(masked).all(axis=1).any():
            raise ScenarioError("no candidate prototype outside the true class")
        return masked.argmin(axis=1)

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        arrays = {}
        for proto in self.prototypes_:
            arrays[f"class_{proto.class_id:04d}/mean"] = proto.mean
            arrays[f"class_{proto.class_id:04d}/cov"] = proto.covariance
        meta = {
            "kind": "prototypes",
            "delta": float(self.delta),
            "gamma0": float(self.gamma0),
            "gamma1": float(self.gamma1),
            "classes": [int(p.class_id) for p in self.prototypes_],
            "counts": [int(p.sample_count) for p in self.prototypes_],
            "feature_dim": int(self.feature_dim_),
        }
        write_container(path, meta, arrays)

    @classmethod
    def load(cls, path) -> "GaussianPrototypes":
        meta, arrays = read_container(path)
        if meta.get("kind") != "prototypes":
            raise ValueError(f"{path} is not a prototype store")
        est = cls(delta=meta["delta"], gamma0=meta["gamma0"], gamma1=meta["gamma1"])
        est.feature_dim_ = meta["feature_dim"]
        est.classes_ = np.array(meta["classes"])
        est.prototypes_ = []
        for class_id, count in zip(meta["classes"], meta["counts"]):
            cov = arrays[f"class_{class_id:04d}/cov"]
            est.prototypes_.append(
                ClassPrototype(
                    class_id=int(class_id),
                    mean=arrays[f"class_{class_id:04d}/mean"],
                    covariance=cov,
                    inverse=_spd_inverse(cov, f"class {class_id} covariance"),
                    sample_count=int(count),
                )
            )
        return est


def fit_prototypes(model, dataset, delta: float = 0.5, gamma0: float = 3.0, gamma1: float = 3.0,
                   batch_size: int = 512) -> GaussianPrototypes:
    """Build prototypes from a trained model's backbone features over a dataset."""
    feats = extract_features(model, dataset.samples, batch_size=batch_size)
    return GaussianPrototypes(delta=delta, gamma0=gamma0, gamma1=gamma1).fit(feats, dataset.labels)


def extract_features(model, samples: np.ndarray, batch_size: int = 512) -> np.ndarray:
    chunks = []
    with T.no_grad():
        for start in range(0, len(samples), batch_size):
            chunks.append(model.features(samples[start:start + batch_size]).data)
    return np.concatenate(chunks, axis=0)
