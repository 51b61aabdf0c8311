"""Binary-classification metrics: confusion counts, F1, sensitivity,
specificity, and rank-based AUROC with midrank tie handling.

Edge cases are pinned explicitly: F1 with tp=fp=fn=0 is 1.0 (no errors made),
F1 with tp=0 and any fp/fn is 0.0. AUROC uses the Mann-Whitney formulation
P(score+ > score-) + 0.5 P(tie), which equals the trapezoidal ROC area.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, UndefinedMetricError


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self):
        return self.tp + self.fp + self.tn + self.fn


def confusion(labels, predictions):
    """Standard confusion counts for binary labels/predictions of equal length."""
    y = np.asarray(labels)
    p = np.asarray(predictions)
    if y.shape != p.shape or y.ndim != 1:
        raise ContractError(f"labels {y.shape} and predictions {p.shape} must be equal-length vectors")
    if not (np.isin(y, (0, 1)).all() and np.isin(p, (0, 1)).all()):
        raise ContractError("labels and predictions must be binary")
    return ConfusionCounts(
        tp=int(((y == 1) & (p == 1)).sum()),
        fp=int(((y == 0) & (p == 1)).sum()),
        tn=int(((y == 0) & (p == 0)).sum()),
        fn=int(((y == 1) & (p == 0)).sum()),
    )


def accuracy(c):
    if c.total == 0:
        raise UndefinedMetricError("accuracy of zero samples")
    return (c.tp + c.tn) / c.total


def f1(c):
    if c.tp == 0 and c.fp == 0 and c.fn == 0:
        return 1.0  # vacuous perfection: nothing to get wrong
    if c.tp == 0:
        return 0.0
    return 2 * c.tp / (2 * c.tp + c.fp + c.fn)


def sensitivity(c):
    if c.tp + c.fn == 0:
        raise UndefinedMetricError("sensitivity undefined: no positive labels")
    return c.tp / (c.tp + c.fn)


def specificity(c):
    if c.tn + c.fp == 0:
        raise UndefinedMetricError("specificity undefined: no negative labels")
    return c.tn / (c.tn + c.fp)


def _midranks(values):
    """1-based ranks where tied values share the mean of their rank range."""
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def auroc(labels, scores):
    """Probability a positive outscores a negative, ties counted half."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    if y.shape != s.shape or y.ndim != 1:
        raise ContractError(f"labels {y.shape} and scores {s.shape} must be equal-length vectors")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("auroc needs both classes present")
    ranks = _midranks(s)
    rank_sum = ranks[y == 1].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


@dataclass
class SlotMetrics:
    """Metrics for one biomarker slot (sensitivity/specificity kept for averaging)."""

    name: str
    accuracy: float
    f1: float
    auroc: float
    sensitivity: float
    specificity: float


@dataclass
class MetricsReport:
    """Per-slot metrics plus cross-slot averages, optionally with seed statistics."""

    slots: list
    averages: dict
    seeds: dict | None = None
    per_seed: list = field(default_factory=list)

    def to_json_dict(self):
        out = {
            "slots": [
                {"name": s.name, "accuracy": s.accuracy, "f1": s.f1, "auroc": s.auroc}
                for s in self.slots
            ],
            "averages": dict(self.averages),
            "seeds": self.seeds,
        }
        if self.per_seed:
            out["per_seed"] = list(self.per_seed)
        return out


def slot_metrics(name, labels, scores, threshold=0.5):
    """Confusion-derived metrics at the given score threshold, plus AUROC."""
    y = np.asarray(labels)
    s = np.asarray(scores, dtype=np.float64)
    preds = (s >= threshold).astype(np.int64)
    c = confusion(y, preds)
    return SlotMetrics(
        name=name,
        accuracy=accuracy(c),
        f1=f1(c),
        auroc=auroc(y, s),
        sensitivity=sensitivity(c),
        specificity=specificity(c),
    )


def build_report(slots):
    """Single-run report: averages of AUROC/specificity/sensitivity across slots."""
    if not slots:
        raise ContractError("report needs at least one slot")
    return MetricsReport(
        slots=list(slots),
        averages={
            "auroc": float(np.mean([s.auroc for s in slots])),
            "specificity": float(np.mean([s.specificity for s in slots])),
            "sensitivity": float(np.mean([s.sensitivity for s in slots])),
        },
    )


def _std(values):
    # sample std across runs; a single run has no spread
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1))


def aggregate_reports(reports, seeds):
    """Combine per-seed reports into one report with mean/std seed statistics."""
    if not reports:
        raise ContractError("nothing to aggregate")
    names = [s.name for s in reports[0].slots]
    mean_slots = []
    slot_mean = {}
    slot_std = {}
    for j, name in enumerate(names):
        per = {k: [r.slots[j].__dict__[k] for r in reports] for k in ("accuracy", "f1", "auroc", "sensitivity", "specificity")}
        mean_slots.append(SlotMetrics(name=name, **{k: float(np.mean(v)) for k, v in per.items()}))
        slot_mean[name] = {k: float(np.mean(per[k])) for k in ("accuracy", "f1", "auroc")}
        slot_std[name] = {k: _std(per[k]) for k in ("accuracy", "f1", "auroc")}
    avg_keys = ("auroc", "specificity", "sensitivity")
    avgs = {k: [r.averages[k] for r in reports] for k in avg_keys}
    report = MetricsReport(
        slots=mean_slots,
        averages={k: float(np.mean(v)) for k, v in avgs.items()},
        seeds={
            "n": len(reports),
            "mean": {"slots": slot_mean, "averages": {k: float(np.mean(avgs[k])) for k in avg_keys}},
            "std": {"slots": slot_std, "averages": {k: _std(avgs[k]) for k in avg_keys}},
        },
    )
    if len(reports) > 1:
        report.per_seed = [
            {"seed": int(seed), "averages": dict(r.averages)} for seed, r in zip(seeds, reports)
        ]
    return report
