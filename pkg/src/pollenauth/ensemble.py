"""Multi-classifier over one-class models, pollen dictionary and ambiguity discovery.

Per-class confidences are fused by taking the most confident class ``omega``
(``t_oc`` is its confidence) and the margin ``t_m`` to the runner-up. The
prediction is accepted only when ``t_oc >= t_oc_min`` and ``t_m >= t_m_min``;
otherwise the color is an ``OUTLIER``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .evaluation import OUTLIER, confusion, macro_f
from .meanshift import ColorInstance
from .oneclass import MIN_THRESHOLD, OneClassModel, confidences, fit_prototypes, train_oneclass

FORMAT_VERSION = 1
DEFAULT_T_OC_MIN = 0.5
DEFAULT_T_M_MIN = 0.001
DEFAULT_DELTA_THRESHOLD = 0.05


class DictionaryError(ValueError):
    pass


@dataclass(frozen=True)
class PollenDictionary:
    models: tuple = ()
    t_oc_min: float = DEFAULT_T_OC_MIN
    t_m_min: float = DEFAULT_T_M_MIN
    rejection_fraction: float = 0.0
    version: int = FORMAT_VERSION

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        names = [m.class_name for m in self.models]
        if len(set(names)) != len(names):
            raise DictionaryError(f"duplicate class names in {names}")
        if OUTLIER in names:
            raise DictionaryError(f"{OUTLIER!r} is a reserved class name")
        if not 0 < self.t_oc_min < 1:
            raise DictionaryError(f"t_oc_min must lie in (0, 1), got {self.t_oc_min}")
        if not 0 <= self.t_m_min < 1:
            raise DictionaryError(f"t_m_min must lie in [0, 1), got {self.t_m_min}")

    @property
    def class_names(self) -> list[str]:
        return [m.class_name for m in self.models]

    def __len__(self):
        return len(self.models)

    def __contains__(self, name):
        return name in self.class_names

    def model(self, name) -> OneClassModel:
        for m in self.models:
            if m.class_name == name:
                return m
        raise KeyError(f"unknown class {name!r}")

    def with_model(self, model: OneClassModel) -> "PollenDictionary":
        return replace(self, models=self.models + (model,))

    def without(self, name) -> "PollenDictionary":
        self.model(name)
        return replace(self, models=tuple(m for m in self.models if m.class_name != name))

    def with_thresholds(self, t_oc_min=None, t_m_min=None) -> "PollenDictionary":
        return replace(self,
                       t_oc_min=self.t_oc_min if t_oc_min is None else t_oc_min,
                       t_m_min=self.t_m_min if t_m_min is None else t_m_min)


@dataclass(frozen=True)
class Decision:
    predicted: str
    omega: str
    t_oc: float
    t_m: float
    per_class_cf: Mapping[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"predicted": self.predicted, "omega": self.omega, "t_oc": self.t_oc,
                "t_m": self.t_m, "per_class_cf": dict(self.per_class_cf)}


@dataclass(frozen=True)
class AmbiguityReport:
    epsilon_before: float
    epsilon_after: float
    delta: float
    triggered: bool
    conflicting_pair: Optional[tuple] = None


# --------------------------------------------------------------------------
# Training

def train_dictionary(labeled: Mapping[str, Sequence[ColorInstance]],
                     rejection_fraction: float = 0.0,
                     t_oc_min: float = DEFAULT_T_OC_MIN,
                     t_m_min: float = DEFAULT_T_M_MIN) -> PollenDictionary:
    """One one-class model per entry of ``labeled`` (class name -> instances)."""
    if not labeled:
        raise DictionaryError("need at least one class")
    models = []
    for name, instances in labeled.items():
        if name == OUTLIER:
            raise DictionaryError(f"{OUTLIER!r} is a reserved class name")
        if len(instances) < 2:
            raise DictionaryError(f"class {name!r} has {len(instances)} instances, need >= 2")
        relabeled = [inst if inst.label == name else replace(inst, label=name)
                     for inst in instances]
        models.append(train_oneclass(relabeled, rejection_fraction))
    return PollenDictionary(tuple(models), t_oc_min, t_m_min, rejection_fraction)


def add_class(d: PollenDictionary, name: str, instances) -> PollenDictionary:
    if name in d:
        raise DictionaryError(f"class {name!r} already exists")
    if name == OUTLIER:
        raise DictionaryError(f"{OUTLIER!r} is a reserved class name")
    protos = np.array([inst.color for inst in instances], dtype=np.float64).reshape(-1, 3)
    if len(protos) < 2:
        raise DictionaryError(f"class {name!r} has {len(protos)} instances, need >= 2")
    return d.with_model(fit_prototypes(name, protos, d.rejection_fraction))


def merge_classes(d: PollenDictionary, ci: str, cj: str) -> PollenDictionary:
    """Fold class ``cj`` into ``ci`` and retrain ``ci`` on the union."""
    if ci == cj:
        raise DictionaryError("cannot merge a class into itself")
    for name in (ci, cj):
        if name not in d:
            raise DictionaryError(f"unknown class {name!r}")
    union = np.vstack([d.model(ci).prototypes, d.model(cj).prototypes])
    merged = fit_prototypes(ci, union, d.rejection_fraction)
    models = tuple(merged if m.class_name == ci else m
                   for m in d.models if m.class_name != cj)
    return replace(d, models=models)


# --------------------------------------------------------------------------
# Fusion

def fuse(cf, class_names: Sequence[str], t_oc_min: float, t_m_min: float):
    """Apply the accept/reject rule to a (n, |C|) confidence matrix.

    Returns ``(omega_index, t_oc, t_m, accepted)`` arrays. Exact ties for
    the top confidence resolve to the lexicographically smallest class name,
    which leaves ``t_m = 0``. With a single class ``t_m = t_oc``.
    """
    cf = np.asarray(cf, dtype=np.float64)
    if cf.ndim != 2 or cf.shape[1] != len(class_names):
        raise ValueError(f"confidence matrix shape {cf.shape} does not match "
                         f"{len(class_names)} classes")
    order = sorted(range(len(class_names)), key=lambda i: class_names[i])
    sorted_cf = cf[:, order]
    best = np.argmax(sorted_cf, axis=1)
    omega = np.asarray(order)[best]
    t_oc = sorted_cf[np.arange(len(cf)), best]
    if cf.shape[1] == 1:
        t_m = t_oc.copy()
    else:
        runner_up = np.partition(cf, -2, axis=1)[:, -2]
        t_m = t_oc - runner_up
    accepted = (t_oc >= t_oc_min) & (t_m >= t_m_min)
    return omega, t_oc, t_m, accepted


def decide(per_class_cf: Mapping[str, float], t_oc_min: float = DEFAULT_T_OC_MIN,
           t_m_min: float = DEFAULT_T_M_MIN) -> Decision:
    names = list(per_class_cf)
    if not names:
        raise ValueError("need at least one class confidence")
    cf = np.array([[per_class_cf[n] for n in names]], dtype=np.float64)
    omega, t_oc, t_m, acc = fuse(cf, names, t_oc_min, t_m_min)
    w = names[omega[0]]
    return Decision(w if acc[0] else OUTLIER, w, float(t_oc[0]), float(t_m[0]),
                    {n: float(c) for n, c in zip(names, cf[0])})


def confidence_matrix(d: PollenDictionary, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64).reshape(-1, 3)
    return np.column_stack([confidences(m, X) for m in d.models]) if d.models \
        else np.empty((len(X), 0))


def classify_colors(d: PollenDictionary, X) -> list[Decision]:
    if not d.models:
        raise DictionaryError("dictionary has no classes")
    names = d.class_names
    cf = confidence_matrix(d, X)
    omega, t_oc, t_m, acc = fuse(cf, names, d.t_oc_min, d.t_m_min)
    out = []
    for i in range(len(cf)):
        w = names[omega[i]]
        out.append(Decision(w if acc[i] else OUTLIER, w, float(t_oc[i]), float(t_m[i]),
                            dict(zip(names, cf[i].tolist()))))
    return out


def predict_labels(d: PollenDictionary, X) -> list[str]:
    if not d.models:
        raise DictionaryError("dictionary has no classes")
    names = d.class_names
    omega, _, _, acc = fuse(confidence_matrix(d, X), names, d.t_oc_min, d.t_m_min)
    return [names[w] if a else OUTLIER for w, a in zip(omega, acc)]


def classify_instance(d: PollenDictionary, x) -> Decision:
    return classify_colors(d, [x])[0]


@dataclass(frozen=True)
class SampleVerdict:
    label: str
    decisions: tuple
    votes: Mapping[str, int]


def classify_sample(d: PollenDictionary, instances: Sequence[ColorInstance]) -> SampleVerdict:
    """Classify every instance and take the weight-summed plurality label.

    ``OUTLIER`` competes like any class; a tie for first place is reported
    as ``OUTLIER``.
    """
    if len(instances) == 0:
        raise ValueError("empty instance list")
    decisions = classify_colors(d, [inst.color for inst in instances])
    votes = {}
    for inst, dec in zip(instances, decisions):
        votes[dec.predicted] = votes.get(dec.predicted, 0) + inst.weight
    top = max(votes.values())
    leaders = [lab for lab, v in votes.items() if v == top]
    label = leaders[0] if len(leaders) == 1 else OUTLIER
    return SampleVerdict(label, tuple(decisions), votes)


# --------------------------------------------------------------------------
# Ambiguity discovery

def _epsilon(d: PollenDictionary, X, truth):
    labels = d.class_names + [OUTLIER]
    cm = confusion(truth, predict_labels(d, X), labels=labels)
    return 1.0 - macro_f(cm), cm


def detect_ambiguity(before: PollenDictionary, after: PollenDictionary,
                     test: Sequence[ColorInstance],
                     delta_threshold: float = DEFAULT_DELTA_THRESHOLD) -> AmbiguityReport:
    """Compare the error ``1 - macro F`` before and after adding one class.

    ``before`` is scored on the test instances outside the new class. When
    the error grows by more than ``delta_threshold`` the largest
    off-diagonal entry between known classes in ``after``'s confusion matrix
    names the conflicting (real, predicted) pair.
    """
    old, new = set(before.class_names), set(after.class_names)
    added = new - old
    if not old <= new or len(added) != 1:
        raise DictionaryError("'after' must extend 'before' by exactly one class")
    (added_name,) = added
    if not test:
        raise ValueError("empty test set")
    X = [inst.color for inst in test]
    truth_after = [inst.label if inst.label is not None else OUTLIER for inst in test]
    unknown = set(truth_after) - new - {OUTLIER}
    if unknown:
        raise ValueError(f"test labels not in dictionary: {sorted(unknown)}")
    keep = [i for i, t in enumerate(truth_after) if t != added_name]

    if before.models and keep:
        eps_before, _ = _epsilon(before, [X[i] for i in keep], [truth_after[i] for i in keep])
    else:
        eps_before = 0.0
    eps_after, cm = _epsilon(after, X, truth_after)
    delta = eps_after - eps_before
    triggered = bool(delta > delta_threshold)

    pair = None
    if triggered:
        best = 0
        known = after.class_names
        for ri, rname in enumerate(known):
            for ci, cname in enumerate(known):
                if ri == ci:
                    continue
                c = int(cm.counts[ri, ci])
                if c > best or (c == best and c > 0 and (rname, cname) < pair):
                    best, pair = c, (rname, cname)
    return AmbiguityReport(eps_before, eps_after, delta, triggered, pair)


# --------------------------------------------------------------------------
# Persistence

def dictionary_to_json(d: PollenDictionary) -> str:
    doc = {
        "version": d.version,
        "rejection_fraction": d.rejection_fraction,
        "t_oc_min": d.t_oc_min,
        "t_m_min": d.t_m_min,
        "models": [
            {
                "class_name": m.class_name,
                "threshold": m.threshold,
                "prototypes": m.prototypes.tolist(),
            }
            for m in d.models
        ],
    }
    return json.dumps(doc, indent=1) + "\n"


def dictionary_from_json(text: str) -> PollenDictionary:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DictionaryError(f"malformed dictionary: {exc}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise DictionaryError("malformed dictionary: missing version")
    if doc["version"] != FORMAT_VERSION:
        raise DictionaryError(
            f"dictionary version mismatch: file has {doc['version']!r}, "
            f"expected {FORMAT_VERSION}")
    try:
        rej = float(doc["rejection_fraction"])
        models = tuple(
            OneClassModel(str(m["class_name"]), np.array(m["prototypes"], dtype=np.float64),
                          float(m["threshold"]), rej,
                          degenerate=float(m["threshold"]) <= MIN_THRESHOLD)
            for m in doc["models"]
        )
        return PollenDictionary(models, float(doc["t_oc_min"]), float(doc["t_m_min"]), rej)
    except DictionaryError as exc:
        raise DictionaryError(f"malformed dictionary: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        raise DictionaryError(f"malformed dictionary: {exc!r}") from None


def save_dictionary(d: PollenDictionary, path) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(dictionary_to_json(d))
    os.replace(tmp, path)


def load_dictionary(path) -> PollenDictionary:
    with open(path) as fh:
        return dictionary_from_json(fh.read())


# --------------------------------------------------------------------------
# Estimator

class PollenAuthenticator(ClassifierMixin, BaseEstimator):
    """Multi-classifier over one one-class model per label.

    Parameters
    ----------
    rejection_fraction : float, default=0.0
    t_oc_min : float, default=0.5
        Minimum top confidence for accepting a class.
    t_m_min : float, default=0.001
        Minimum margin between the top two confidences.

    Attributes
    ----------
    dictionary_ : PollenDictionary
    classes_ : ndarray of str
        Known classes; ``predict`` may also return ``"OUTLIER"``.
    """

    def __init__(self, rejection_fraction=0.0, t_oc_min=DEFAULT_T_OC_MIN,
                 t_m_min=DEFAULT_T_M_MIN):
        self.rejection_fraction = rejection_fraction
        self.t_oc_min = t_oc_min
        self.t_m_min = t_m_min

    def fit(self, X, y):
        X = check_array(X, dtype=np.float64)
        y = np.asarray(y, dtype=object)
        if len(y) != len(X):
            raise ValueError(f"X has {len(X)} rows but y has {len(y)}")
        if np.any(y == OUTLIER):
            raise ValueError("training data may not contain OUTLIER instances")
        self.classes_ = np.array(sorted(set(y.tolist())), dtype=object)
        groups = {c: [ColorInstance(tuple(x), c) for x in X[y == c]] for c in self.classes_}
        self.dictionary_ = train_dictionary(groups, self.rejection_fraction,
                                            self.t_oc_min, self.t_m_min)
        self.n_features_in_ = X.shape[1]
        return self

    @classmethod
    def from_dictionary(cls, d: PollenDictionary) -> "PollenAuthenticator":
        est = cls(d.rejection_fraction, d.t_oc_min, d.t_m_min)
        est.dictionary_ = d
        est.classes_ = np.array(d.class_names, dtype=object)
        est.n_features_in_ = 3
        return est

    def predict_confidence(self, X):
        """Confidence of every known class, columns ordered as ``classes_``."""
        check_is_fitted(self, "dictionary_")
        return confidence_matrix(self.dictionary_, check_array(X, dtype=np.float64))

    def decide(self, X) -> list[Decision]:
        check_is_fitted(self, "dictionary_")
        d = self.dictionary_.with_thresholds(self.t_oc_min, self.t_m_min)
        return classify_colors(d, check_array(X, dtype=np.float64))

    def predict(self, X):
        check_is_fitted(self, "dictionary_")
        d = self.dictionary_.with_thresholds(self.t_oc_min, self.t_m_min)
        return np.array(predict_labels(d, check_array(X, dtype=np.float64)), dtype=object)
