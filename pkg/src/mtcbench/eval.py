"""Prediction quality metrics, ROC curves and normalized cost tables.

Rates whose denominator is empty are reported as ``nan`` and listed in the
``undefined`` attribute of the result, never silently as 0.
"""
import csv
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .exceptions import DomainError, MeasurementError, ShapeError
from .predictors.arima import ArimaPredictor

__all__ = [
    "RecallResult",
    "recall_metric",
    "ConfusionCounts",
    "Rates",
    "confusion",
    "rates",
    "RocCurve",
    "roc",
    "CostReport",
    "cost_report",
    "EvalReport",
    "score_split",
    "evaluate",
]

COST_KINDS = ("inference", "training", "size")


@dataclass(frozen=True)
class RecallResult:
    """Value of the inter-arrival recall measure; ``clamped`` marks a negative bracket."""

    value: float
    clamped: bool = False

    def __float__(self):
        return float(self.value)


def recall_metric(estimates, truths):
    """``sqrt(1 - mean((1 - est / truth)**2))``, clamped to 0 when the bracket is negative."""
    est = np.asarray(estimates, dtype=float).ravel()
    tru = np.asarray(truths, dtype=float).ravel()
    if est.shape != tru.shape:
        raise ShapeError(f"{len(est)} estimates vs {len(tru)} truths")
    if tru.size == 0:
        raise ShapeError("recall_metric needs at least one pair")
    if np.any(~np.isfinite(tru)) or np.any(tru <= 0):
        raise DomainError("true inter-arrival values must be positive")
    if np.any(~np.isfinite(est)):
        raise DomainError("estimates must be finite")
    bracket = 1.0 - np.mean((1.0 - est / tru) ** 2)
    if bracket < 0:
        return RecallResult(0.0, True)
    return RecallResult(float(np.sqrt(bracket)), False)


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise DomainError("confusion counts must be non-negative")

    @property
    def n(self):
        return self.tp + self.fp + self.tn + self.fn


def _bits(a, name):
    a = np.asarray(a).ravel()
    if a.size and not np.all((a == 0) | (a == 1)):
        raise DomainError(f"{name} must contain only 0/1")
    return a.astype(bool)


def confusion(pred_bits, true_bits):
    pred = _bits(pred_bits, "pred_bits")
    true = _bits(true_bits, "true_bits")
    if pred.shape != true.shape:
        raise ShapeError(f"{len(pred)} predictions vs {len(true)} labels")
    return ConfusionCounts(
        tp=int(np.sum(pred & true)),
        fp=int(np.sum(pred & ~true)),
        tn=int(np.sum(~pred & ~true)),
        fn=int(np.sum(~pred & true)),
    )


@dataclass(frozen=True)
class Rates:
    tpr: float
    tnr: float
    accuracy: float
    undefined: tuple = ()


def rates(counts):
    """``(tpr, tnr, accuracy)``; empty classes give ``nan`` listed in ``undefined``."""
    undefined = []
    pos, neg = counts.tp + counts.fn, counts.tn + counts.fp
    tpr = counts.tp / pos if pos else math.nan
    tnr = counts.tn / neg if neg else math.nan
    acc = (counts.tp + counts.tn) / counts.n if counts.n else math.nan
    for name, denom in (("tpr", pos), ("tnr", neg), ("accuracy", counts.n)):
        if not denom:
            undefined.append(name)
    return Rates(tpr, tnr, acc, tuple(undefined))


@dataclass(frozen=True)
class RocCurve:
    """Operating points from ``(0, 0)`` to ``(1, 1)`` and their trapezoidal area."""

    fpr: np.ndarray
    tpr: np.ndarray
    thresholds: np.ndarray
    auc: float

    @property
    def points(self):
        return list(zip(self.fpr.tolist(), self.tpr.tolist()))

    def to_csv(self, path, header_comment=None):
        with open(path, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["fpr", "tpr"])
            for x, y in zip(self.fpr, self.tpr):
                w.writerow([repr(float(x)), repr(float(y))])


def roc(scores, labels):
    """Sweep every distinct score as a threshold (``score >= t`` is positive)."""
    s = np.asarray(scores, dtype=float).ravel()
    y = _bits(labels, "labels")
    if s.shape != y.shape:
        raise ShapeError(f"{len(s)} scores vs {len(y)} labels")
    if np.any(~np.isfinite(s)):
        raise DomainError("scores must be finite")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DomainError("roc needs both positive and negative labels")
    order = np.argsort(-s, kind="mergesort")
    s_sorted, y_sorted = s[order], y[order]
    # last index of each run of equal scores
    last = np.r_[np.flatnonzero(np.diff(s_sorted) != 0), len(s_sorted) - 1]
    tp = np.cumsum(y_sorted)[last]
    fp = (last + 1) - tp
    tpr = np.r_[0.0, tp / n_pos]
    fpr = np.r_[0.0, fp / n_neg]
    thr = np.r_[np.inf, s_sorted[last]]
    # drop collinear-duplicate points
    keep = np.r_[True, (np.diff(fpr) != 0) | (np.diff(tpr) != 0)]
    fpr, tpr, thr = fpr[keep], tpr[keep], thr[keep]
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1]) / 2.0))
    return RocCurve(fpr, tpr, thr, auc)


@dataclass(frozen=True)
class CostReport:
    """Raw and per-kind normalized costs; rows follow ``names``."""

    names: tuple
    raw: np.ndarray
    normalized: np.ndarray

    def as_dict(self):
        return {n: dict(zip(COST_KINDS, row.tolist())) for n, row in zip(self.names, self.normalized)}


def _raw_costs(model):
    return (model.infer_time, model.train_time, model.size_bytes)


def cost_report(models, names=None):
    """Divide each raw cost by its total over the compared models.

    ``models`` is a sequence of trained models (anything with ``infer_time``,
    ``train_time`` and ``size_bytes``) or a mapping from names to them.
    """
    if isinstance(models, dict):
        names, models = tuple(models), list(models.values())
    models = list(models)
    if len(models) < 2:
        raise MeasurementError("cost normalization needs at least two models")
    if names is None:
        names = tuple(m.spec.kind for m in models)
    if len(names) != len(models):
        raise ShapeError("one name per model required")
    raw = np.array([[np.nan if v is None else float(v) for v in _raw_costs(m)] for m in models])
    if not np.all(np.isfinite(raw)) or np.any(raw <= 0):
        raise MeasurementError("all raw costs must be measured and positive")
    return CostReport(tuple(names), raw, raw / raw.sum(axis=0))


@dataclass
class EvalReport:
    """Quality metrics on the test split plus raw and normalized costs."""

    model: str
    r_metric: float
    tpr: float
    tnr: float
    accuracy: float
    auc: float
    infer_time: float = math.nan
    train_time: float = math.nan
    size_bytes: float = math.nan
    norm_inference: float = math.nan
    norm_training: float = math.nan
    norm_size: float = math.nan
    r_clamped: bool = False
    n_cls: int = 0
    n_reg: int = 0
    undefined: tuple = field(default_factory=tuple)

    QUALITY = ("r_metric", "tpr", "tnr", "accuracy", "auc")
    COSTS = ("infer_time", "train_time", "size_bytes", "norm_inference", "norm_training", "norm_size")

    def to_dict(self):
        d = asdict(self)
        d["undefined"] = ";".join(self.undefined)
        return d

    def to_record(self):
        """Flat ``key=value`` text, one pair per line."""
        return "\n".join(f"{k}={_fmt(v)}" for k, v in self.to_dict().items()) + "\n"

    @classmethod
    def csv_header(cls):
        return ",".join(f.name for f in fields(cls))

    def csv_row(self):
        return ",".join(_fmt(v) for v in self.to_dict().values())

    @classmethod
    def from_dict(cls, d):
        kw = dict(d)
        und = kw.get("undefined", ())
        if isinstance(und, str):
            und = tuple(u for u in und.split(";") if u)
        kw["undefined"] = tuple(und)
        return cls(**kw)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def score_split(model, split):
    """Per-slot activity scores for ``split``'s classification windows."""
    est = model.estimator
    if isinstance(est, ArimaPredictor):
        return est.predict_slot_scores(split.starts, split.cls_device, split.cls_slot)
    return est.predict_score(split.X_cls)


def evaluate(model, split, threshold=0.5, return_scores=False):
    """Quality metrics of a trained model on one split (normally the test split)."""
    est = model.estimator
    labels = np.asarray(split.y_cls).astype(int)
    scores = score_split(model, split)
    counts = confusion((scores >= threshold).astype(int), labels)
    r = rates(counts)
    undefined = list(r.undefined)
    try:
        auc = roc(scores, labels).auc
    except DomainError:
        auc = math.nan
        undefined.append("auc")
    if len(split.y_reg):
        rec = recall_metric(est.predict_interarrival(split.X_reg), split.y_reg)
        r_value, clamped = rec.value, rec.clamped
    else:
        r_value, clamped = math.nan, False
        undefined.append("r_metric")
    report = EvalReport(
        model=model.spec.kind,
        r_metric=r_value,
        tpr=r.tpr,
        tnr=r.tnr,
        accuracy=r.accuracy,
        auc=auc,
        infer_time=math.nan if model.infer_time is None else float(model.infer_time),
        train_time=float(model.train_time),
        size_bytes=float(model.size_bytes),
        r_clamped=clamped,
        n_cls=len(labels),
        n_reg=len(split.y_reg),
        undefined=tuple(undefined),
    )
    if return_scores:
        return report, scores, labels
    return report
