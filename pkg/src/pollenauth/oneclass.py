"""One-class nearest-neighbour (k = 1) classifier for a single pollen type.

The anomaly score of a color is its distance to the closest training
prototype. The acceptance distance ``threshold`` is a quantile of the
leave-one-out nearest-neighbour distances of the training set, so that a
``rejection_fraction`` share of the training data falls outside it.
Scores are mapped to a confidence ``threshold / (threshold + score)``, which
is 1 on a prototype and exactly 0.5 on the acceptance boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, OutlierMixin
from sklearn.utils.validation import check_array, check_is_fitted

MIN_THRESHOLD = 1e-6


@dataclass(frozen=True, eq=False)
class OneClassModel:
    class_name: str
    prototypes: np.ndarray
    threshold: float
    rejection_fraction: float = 0.0
    degenerate: bool = False

    def __post_init__(self):
        protos = np.array(self.prototypes, dtype=np.float64).reshape(-1, 3)
        if len(protos) == 0:
            raise ValueError("prototypes must be non-empty")
        if not self.threshold > 0:
            raise ValueError(f"threshold must be > 0, got {self.threshold}")
        protos.setflags(write=False)
        object.__setattr__(self, "prototypes", protos)
        object.__setattr__(self, "threshold", float(self.threshold))

    def __len__(self):
        return len(self.prototypes)


def _pairwise(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.sqrt((diff * diff).sum(axis=-1))


def loo_distances(points) -> np.ndarray:
    """Distance from each point to its nearest *other* point."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(points) < 2:
        raise ValueError("need at least 2 points")
    d = _pairwise(points, points)
    np.fill_diagonal(d, np.inf)
    return d.min(axis=1)


def quantile_threshold(distances, rejection_fraction: float) -> float:
    """Smallest d_i such that a share >= 1 - rejection_fraction of d_j is <= d_i."""
    if not 0 <= rejection_fraction < 1:
        raise ValueError(f"rejection_fraction must lie in [0, 1), got {rejection_fraction}")
    d = np.sort(np.asarray(distances, dtype=np.float64))
    n = len(d)
    # guard against (1 - f) * n landing a hair above an integer
    keep = max(1, math.ceil((1.0 - rejection_fraction) * n - 1e-9))
    return float(d[keep - 1])


def train_oneclass(instances, rejection_fraction: float = 0.0) -> OneClassModel:
    """Train the per-class model from labelled ColorInstances.

    When duplicate-heavy data leaves a zero threshold it is floored at
    ``MIN_THRESHOLD`` and the model is marked ``degenerate``.
    """
    if len(instances) < 2:
        raise ValueError(f"need at least 2 instances, got {len(instances)}")
    labels = {inst.label for inst in instances}
    if len(labels) != 1:
        raise ValueError(f"instances carry mixed labels: {sorted(map(str, labels))}")
    (label,) = labels
    if label is None:
        raise ValueError("instances must be labelled")
    protos = np.array([inst.color for inst in instances], dtype=np.float64)
    return fit_prototypes(label, protos, rejection_fraction)


def fit_prototypes(class_name: str, prototypes, rejection_fraction: float = 0.0) -> OneClassModel:
    protos = np.asarray(prototypes, dtype=np.float64).reshape(-1, 3)
    theta = quantile_threshold(loo_distances(protos), rejection_fraction)
    degenerate = theta < MIN_THRESHOLD
    if degenerate:
        theta = MIN_THRESHOLD
    return OneClassModel(class_name, protos, theta, rejection_fraction, degenerate)


def raw_scores(model: OneClassModel, X) -> np.ndarray:
    """Nearest-prototype distance for each row of ``X``."""
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    return _pairwise(X, model.prototypes).min(axis=1)


def raw_score(model: OneClassModel, x) -> float:
    return float(raw_scores(model, [x])[0])


def confidences(model: OneClassModel, X) -> np.ndarray:
    d = raw_scores(model, X)
    return model.threshold / (model.threshold + d)


def confidence(model: OneClassModel, x) -> float:
    return float(confidences(model, [x])[0])


class OneClassNearestNeighbor(OutlierMixin, BaseEstimator):
    """scikit-learn wrapper around :func:`fit_prototypes`.

    Parameters
    ----------
    rejection_fraction : float, default=0.0
        Share of training points left outside the acceptance distance.
    class_name : str, default="target"
        Name stored on the fitted model.

    Attributes
    ----------
    model_ : OneClassModel
    threshold_ : float
    """

    def __init__(self, rejection_fraction=0.0, class_name="target"):
        self.rejection_fraction = rejection_fraction
        self.class_name = class_name

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != 3:
            raise ValueError(f"expected 3 color features, got {X.shape[1]}")
        self.model_ = fit_prototypes(self.class_name, X, self.rejection_fraction)
        self.threshold_ = self.model_.threshold
        self.n_features_in_ = 3
        return self

    def score_samples(self, X):
        """Negated nearest-prototype distance (higher is more normal)."""
        check_is_fitted(self, "model_")
        return -raw_scores(self.model_, check_array(X, dtype=np.float64))

    def predict_confidence(self, X):
        check_is_fitted(self, "model_")
        return confidences(self.model_, check_array(X, dtype=np.float64))

    def decision_function(self, X):
        return self.predict_confidence(X) - 0.5

    def predict(self, X):
        return np.where(self.decision_function(X) >= 0, 1, -1)
