"""Evaluation metrics (rank-based AUROC, MAE, MRR, normalized averages) and
the evaluation report record shared by the ablation harness."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    pass


def auroc(scores, labels) -> float:
    """Pairwise win fraction with ties counting one half, via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.float64)
    if set(np.unique(labels).tolist()) - {0.0, 1.0}:
        raise MetricError("labels must be binary (0/1)")
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise MetricError("AUROC needs both classes present")
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    ranks[order] = np.arange(1, len(scores) + 1)
    # average ranks within tied groups
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        if j > i:
            ranks[order[i:j + 1]] = (i + j + 2) / 2.0
        i = j + 1
    pos_rank_sum = ranks[labels == 1.0].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def mae(predictions, targets) -> float:
    predictions = np.asarray(predictions, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(predictions) != len(targets):
        raise MetricError(f"length mismatch: {len(predictions)} vs {len(targets)}")
    if len(predictions) == 0:
        raise MetricError("MAE of empty input")
    return float(np.abs(predictions - targets).mean())


def mrr(ranked_classes, true_classes) -> float:
    """Mean of 1/rank of the true class within each ranking."""
    total = 0.0
    n = 0
    for ranking, true in zip(ranked_classes, true_classes):
        ranking = list(ranking)
        if true not in ranking:
            raise MetricError(f"true class {true!r} missing from ranking")
        total += 1.0 / (ranking.index(true) + 1)
        n += 1
    if n == 0:
        raise MetricError("MRR of empty input")
    return total / n


def normalized_average(values: dict, baseline: dict) -> float:
    """Mean over tasks of value/baseline."""
    if set(values) != set(baseline):
        raise MetricError(f"task sets differ: {sorted(values)} vs {sorted(baseline)}")
    if not values:
        raise MetricError("no tasks")
    out = 0.0
    for task, v in values.items():
        b = baseline[task]
        if b == 0:
            raise MetricError(f"zero baseline for task {task!r}")
        out += v / b
    return out / len(values)


@dataclass
class EvalReport:
    task_id: str
    metric_name: str
    metric_value: float
    n: int
    fingerprint: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"task_id": self.task_id, "metric": self.metric_name,
                "value": self.metric_value, "n": self.n,
                "fingerprint": self.fingerprint}


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def reports_to_csv(path, reports) -> None:
    import csv
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["task_id", "metric", "value", "n", "fingerprint"])
        for r in reports:
            w.writerow([r.task_id, r.metric_name, r.metric_value, r.n,
                        json.dumps(r.fingerprint, sort_keys=True)])


def sweep_plot_data(points) -> list[dict]:
    """Aggregate (x, values-over-seeds) pairs into x / mean / stderr rows."""
    out = []
    for x, values in points:
        arr = np.asarray(values, dtype=np.float64)
        stderr = float(arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
        out.append({"x": x, "y": float(arr.mean()), "stderr": stderr,
                    "n_seeds": len(arr)})
    return out
