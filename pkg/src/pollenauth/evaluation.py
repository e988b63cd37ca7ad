"""Confusion matrices, authentication metrics, data splitting and synthetic data.

Two denominator conventions are supported for the target/outlier rates:

``standard``
    fn_rate = FN / real targets, fp_rate = FP / real outliers.
``paper52``
    fn_rate = FN / real outliers, fp_rate = FP / real targets. This is the
    convention behind the reference multi-classifier figures and is only
    offered so that those figures can be replayed.

Here a false negative is a target instance predicted as ``OUTLIER`` and a
false positive is an outlier predicted as any target class.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .imaging import Luv
from .meanshift import ColorInstance

OUTLIER = "OUTLIER"
PAPER_S52 = "paper52"
STANDARD = "standard"
CONVENTIONS = (PAPER_S52, STANDARD)


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Rows are real classes, columns predicted classes."""

    labels: tuple
    counts: np.ndarray

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.labels)
        if counts.shape != (n, n):
            raise ValueError(f"counts shape {counts.shape} does not match {n} labels")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if len(set(self.labels)) != n:
            raise ValueError("labels must be unique")
        counts.setflags(write=False)
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "counts", counts)

    def index(self, label) -> int:
        return self.labels.index(label)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def format_table(self) -> str:
        names = list(self.labels) + ["Total"]
        width = max(8, *(len(str(s)) for s in names)) + 1
        head = " " * width + "".join(f"{s:>{width}}" for s in names)
        lines = [head]
        for lab, row in zip(self.labels, self.counts):
            cells = "".join(f"{c:>{width}d}" for c in row) + f"{row.sum():>{width}d}"
            lines.append(f"{lab:<{width}}" + cells)
        col = self.counts.sum(axis=0)
        lines.append(f"{'Total':<{width}}" + "".join(f"{c:>{width}d}" for c in col)
                     + f"{self.total:>{width}d}")
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {"labels": list(self.labels), "counts": self.counts.tolist()}


@dataclass(frozen=True)
class MetricReport:
    accuracy: float
    fn_rate: float
    fp_rate: float
    f_measure: float
    convention: str

    def to_dict(self) -> dict:
        return {
            "convention": self.convention,
            "accuracy": self.accuracy,
            "fn_rate": self.fn_rate,
            "fp_rate": self.fp_rate,
            "f_measure": self.f_measure,
        }

    def format_table(self) -> str:
        return "\n".join([
            f"convention  {self.convention}",
            f"accuracy    {self.accuracy:.6f}",
            f"fn_rate     {self.fn_rate:.4f}",
            f"fp_rate     {self.fp_rate:.4f}",
            f"f_measure   {self.f_measure:.4f}",
        ])


def confusion(truth: Sequence, predicted: Sequence,
              labels: Optional[Sequence] = None) -> ConfusionMatrix:
    """Count (truth, predicted) pairs.

    ``labels`` fixes the row/column order; by default it is the sorted set of
    observed target labels followed by ``OUTLIER``.
    """
    if len(truth) != len(predicted):
        raise ValueError(f"length mismatch: {len(truth)} truths, {len(predicted)} predictions")
    if labels is None:
        seen = sorted({*truth, *predicted} - {OUTLIER})
        labels = seen + [OUTLIER]
    labels = list(labels)
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=np.int64)
    for t, p in zip(truth, predicted):
        try:
            counts[pos[t], pos[p]] += 1
        except KeyError as exc:
            raise ValueError(f"unknown label {exc.args[0]!r}") from None
    return ConfusionMatrix(tuple(labels), counts)


def _f(precision, recall):
    return 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)


def per_class_f(cm: ConfusionMatrix) -> dict:
    """F-measure of every target (non-OUTLIER) class of the matrix."""
    out = {}
    for i, lab in enumerate(cm.labels):
        if lab == OUTLIER:
            continue
        tp = cm.counts[i, i]
        pred = cm.counts[:, i].sum()
        real = cm.counts[i, :].sum()
        p = tp / pred if pred else 0.0
        r = tp / real if real else 0.0
        out[lab] = float(_f(p, r))
    return out


def macro_f(cm: ConfusionMatrix) -> float:
    scores = per_class_f(cm)
    return float(np.mean(list(scores.values()))) if scores else 0.0


def multiclass_metrics(cm: ConfusionMatrix, convention: str) -> MetricReport:
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention {convention!r}; expected one of {CONVENTIONS}")
    if OUTLIER not in cm.labels:
        raise ValueError("confusion matrix has no OUTLIER label")
    o = cm.index(OUTLIER)
    counts = cm.counts
    total = counts.sum()
    targets = total - counts[o, :].sum()
    outliers = counts[o, :].sum()
    fn = counts[:, o].sum() - counts[o, o]
    fp = counts[o, :].sum() - counts[o, o]
    if convention == PAPER_S52:
        fn_den, fp_den = outliers, targets
    else:
        fn_den, fp_den = targets, outliers
    return MetricReport(
        accuracy=float(np.trace(counts) / total) if total else 0.0,
        fn_rate=float(fn / fn_den) if fn_den else 0.0,
        fp_rate=float(fp / fp_den) if fp_den else 0.0,
        f_measure=macro_f(cm),
        convention=convention,
    )


def binary_metrics(tp: int, fp: int, fn: int, tn: int) -> MetricReport:
    """Per-classifier measures: miss rate over positives, FP rate over negatives."""
    if min(tp, fp, fn, tn) < 0:
        raise ValueError("counts must be non-negative")
    if tp + fn == 0:
        raise ValueError("no positive instances")
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn)
    return MetricReport(
        accuracy=(tp + tn) / (tp + fp + fn + tn),
        fn_rate=fn / (tp + fn),
        fp_rate=fp / (fp + tn) if fp + tn else 0.0,
        f_measure=_f(precision, recall),
        convention=STANDARD,
    )


# --------------------------------------------------------------------------
# Data sets

def split_dataset(instances: Sequence[ColorInstance],
                  counts: Sequence[Mapping[str, int]], seed: int = 0):
    """Deterministically partition labelled instances into disjoint splits.

    ``counts`` holds one ``{label: n}`` mapping per split, in output order
    (conventionally train, test, validation). The first split is the
    training set and may not request ``OUTLIER`` instances.
    """
    if counts and counts[0].get(OUTLIER, 0) > 0:
        raise ValueError("the training split may not contain OUTLIER instances")
    by_label = {}
    for i, inst in enumerate(instances):
        by_label.setdefault(inst.label, []).append(i)
    rng = np.random.default_rng(seed)
    pools = {}
    for lab in sorted(by_label, key=str):
        idx = np.array(by_label[lab])
        pools[lab] = list(idx[rng.permutation(len(idx))])
    for lab in {lab for split in counts for lab in split}:
        need = sum(split.get(lab, 0) for split in counts)
        have = len(pools.get(lab, []))
        if need > have:
            raise ValueError(f"insufficient instances for {lab!r}: need {need}, have {have}")
    splits = []
    for split in counts:
        chosen = []
        for lab in sorted(split, key=str):
            n = split[lab]
            chosen.extend(pools[lab][:n])
            pools[lab] = pools[lab][n:]
        chosen.sort()
        splits.append([instances[i] for i in chosen])
    return tuple(splits)


@dataclass(frozen=True)
class ClusterSpec:
    label: str
    mean: tuple
    std: float
    count: int


@dataclass(frozen=True)
class OutlierSpec:
    low: tuple
    high: tuple
    count: int
    exclusion_sigmas: float = 3.0


def synth_dataset(clusters: Iterable[ClusterSpec], outliers: Optional[OutlierSpec] = None,
                  seed: int = 0, max_attempts: int = 1000) -> list[ColorInstance]:
    """Isotropic Gaussian clusters in L*u*v* plus uniform outliers.

    Outliers are drawn from the ``[low, high]`` box and rejected when they
    fall within ``exclusion_sigmas`` standard deviations of any cluster
    mean. Raises when ``max_attempts`` batches yield no acceptable outlier.
    """
    clusters = list(clusters)
    rng = np.random.default_rng(seed)
    out = []
    for c in clusters:
        if not c.std > 0:
            raise ValueError(f"std must be > 0 for {c.label!r}")
        if c.count < 1:
            raise ValueError(f"count must be >= 1 for {c.label!r}")
        pts = rng.normal(np.asarray(c.mean, float), c.std, size=(c.count, 3))
        out.extend(ColorInstance(Luv(*p), c.label) for p in pts)
    if outliers is not None and outliers.count > 0:
        low = np.asarray(outliers.low, float)
        high = np.asarray(outliers.high, float)
        means = np.array([c.mean for c in clusters], float).reshape(-1, 3)
        radii = np.array([outliers.exclusion_sigmas * c.std for c in clusters])
        got = []
        attempts = 0
        while len(got) < outliers.count:
            batch = rng.uniform(low, high, size=(max(64, outliers.count), 3))
            if len(means):
                d = np.linalg.norm(batch[:, None, :] - means[None], axis=-1)
                batch = batch[np.all(d > radii, axis=1)]
            if len(batch) == 0:
                attempts += 1
                if attempts >= max_attempts:
                    raise ValueError("outlier box is covered by the cluster exclusion balls")
                continue
            got.extend(batch[: outliers.count - len(got)])
        out.extend(ColorInstance(Luv(*p), OUTLIER) for p in got)
    return out


# --------------------------------------------------------------------------
# CSV exchange

CSV_HEADER = ["L", "u", "v", "label", "weight"]


def write_instances_csv(path_or_file, instances: Iterable[ColorInstance]) -> None:
    def _write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for inst in instances:
            w.writerow([repr(inst.color.L), repr(inst.color.u), repr(inst.color.v),
                        inst.label or "", inst.weight])

    if hasattr(path_or_file, "write"):
        _write(path_or_file)
    else:
        with open(path_or_file, "w", newline="") as fh:
            _write(fh)


def read_instances_csv(path) -> list[ColorInstance]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not set(CSV_HEADER[:3]) <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header {','.join(CSV_HEADER)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                color = Luv(float(row["L"]), float(row["u"]), float(row["v"]))
                weight = int(row.get("weight") or 1)
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            out.append(ColorInstance(color, row.get("label") or None, weight))
    return out
