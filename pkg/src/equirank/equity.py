"""Per-user evaluation and equity metrics over a 3-class preference problem.

Predicted and true score differences are classified into left / tie / right
with a tie band of +-tie_epsilon (boundary inclusive). Equity is summarized
by the max gap, the population standard deviation, and the Gini coefficient
of the per-user accuracies, plus the Lorenz curve of their cumulative shares.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .dataset import Comparison

CLASSES = ("left", "tie", "right")


def classify(value: float, tie_epsilon: float) -> str:
    """left if value < -tie_epsilon, right if value > tie_epsilon, else tie."""
    if not np.isfinite(value):
        raise ValueError(f"value must be finite, got {value}")
    if tie_epsilon < 0:
        raise ValueError(f"tie_epsilon must be >= 0, got {tie_epsilon}")
    if value < -tie_epsilon:
        return "left"
    if value > tie_epsilon:
        return "right"
    return "tie"


def _macro_recall(truth: Sequence[str], predicted: Sequence[str]) -> float:
    """Unweighted mean of per-class recall over classes present in `truth`."""
    recalls = []
    for cls in CLASSES:
        total = sum(1 for t in truth if t == cls)
        if total == 0:
            continue
        hit = sum(1 for t, p in zip(truth, predicted) if t == cls and p == cls)
        recalls.append(hit / total)
    return float(np.mean(recalls))


def per_user_metrics(
    predictions: Sequence[tuple[Comparison, float]], tie_epsilon: float
) -> tuple[dict[str, float], dict[str, float]]:
    """Per-user accuracy and macro recall of classified predictions."""
    if not predictions:
        raise ValueError("predictions must be non-empty")
    by_user: dict[str, tuple[list[str], list[str]]] = {}
    for comparison, predicted in predictions:
        truth_cls = classify(comparison.score, tie_epsilon)
        pred_cls = classify(predicted, tie_epsilon)
        truths, preds = by_user.setdefault(comparison.user_id, ([], []))
        truths.append(truth_cls)
        preds.append(pred_cls)
    accuracy = {}
    recall = {}
    for user, (truths, preds) in by_user.items():
        accuracy[user] = sum(t == p for t, p in zip(truths, preds)) / len(truths)
        recall[user] = _macro_recall(truths, preds)
    return accuracy, recall


def max_gap(values: Mapping[str, float]) -> float:
    """Largest pairwise difference: max_i v_i - min_j v_j."""
    if not values:
        raise ValueError("max_gap of an empty map")
    vals = list(values.values())
    return max(vals) - min(vals)


def std_dev(values: Mapping[str, float]) -> float:
    """Population standard deviation (N denominator)."""
    if not values:
        raise ValueError("std_dev of an empty map")
    return float(np.std(np.array(list(values.values()), dtype=np.float64)))


def gini(values: Mapping[str, float]) -> float:
    """Relative mean absolute difference: sum_{i,j} |v_i - v_j| / (2 N^2 mean).

    Both orders of each pair are counted and the diagonal is zero. Undefined
    (error) when the mean is zero.
    """
    if not values:
        raise ValueError("gini of an empty map")
    v = np.array(list(values.values()), dtype=np.float64)
    mean = v.mean()
    if mean == 0:
        raise ValueError("gini undefined for zero mean")
    diffs = np.abs(v[:, None] - v[None, :]).sum()
    return float(diffs / (2.0 * v.size**2 * mean))


def lorenz_curve(values: Mapping[str, float]) -> list[tuple[float, float]]:
    """Cumulative sorted shares: point k is (k/N, sum of k smallest / total)."""
    if not values:
        raise ValueError("lorenz_curve of an empty map")
    v = np.sort(np.array(list(values.values()), dtype=np.float64))
    total = v.sum()
    if total == 0:
        raise ValueError("lorenz_curve undefined for zero mean")
    cum = np.cumsum(v) / total
    n = v.size
    points = [(0.0, 0.0)]
    points.extend(((k + 1) / n, float(cum[k])) for k in range(n))
    return points


@dataclass
class EquityReport:
    per_user_accuracy: dict[str, float]
    per_user_recall: dict[str, float]
    overall_accuracy: float
    overall_recall: float
    acc_max_gap: float
    acc_std: float
    recall_max_gap: float
    recall_std: float
    gini_accuracy: float
    mean_accuracy: float
    n_users: int
    lorenz: list[tuple[float, float]]

    def to_dict(self) -> dict:
        return {
            "per_user_accuracy": dict(sorted(self.per_user_accuracy.items())),
            "per_user_recall": dict(sorted(self.per_user_recall.items())),
            "overall_accuracy": self.overall_accuracy,
            "overall_recall": self.overall_recall,
            "acc_max_gap": self.acc_max_gap,
            "acc_std": self.acc_std,
            "recall_max_gap": self.recall_max_gap,
            "recall_std": self.recall_std,
            "gini_accuracy": self.gini_accuracy,
            "mean_accuracy": self.mean_accuracy,
            "n_users": self.n_users,
            "lorenz": [[p, s] for p, s in self.lorenz],
        }


def build_report(
    predictions: Sequence[tuple[Comparison, float]], tie_epsilon: float
) -> EquityReport:
    """Assemble the full equity report.

    Overall accuracy pools all comparisons (it is not the mean of per-user
    accuracies, which is reported separately as mean_accuracy).
    """
    accuracy, recall = per_user_metrics(predictions, tie_epsilon)
    truth_cls = [classify(c.score, tie_epsilon) for c, _ in predictions]
    pred_cls = [classify(d, tie_epsilon) for _, d in predictions]
    overall_accuracy = sum(t == p for t, p in zip(truth_cls, pred_cls)) / len(truth_cls)
    return EquityReport(
        per_user_accuracy=accuracy,
        per_user_recall=recall,
        overall_accuracy=overall_accuracy,
        overall_recall=_macro_recall(truth_cls, pred_cls),
        acc_max_gap=max_gap(accuracy),
        acc_std=std_dev(accuracy),
        recall_max_gap=max_gap(recall),
        recall_std=std_dev(recall),
        gini_accuracy=gini(accuracy),
        mean_accuracy=float(np.mean(list(accuracy.values()))),
        n_users=len(accuracy),
        lorenz=lorenz_curve(accuracy),
    )


def write_report(report: EquityReport, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8"
    )


def write_lorenz(report: EquityReport, path: str | Path) -> None:
    """Plot-ready CSV: population_fraction,cumulative_share."""
    with Path(path).open("w", newline="\n", encoding="utf-8") as fh:
        fh.write("population_fraction,cumulative_share\n")
        for frac, share in report.lorenz:
            fh.write(f"{frac!r},{share!r}\n")
