"""Prequential (test-then-train) evaluation and F1 bookkeeping."""
from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .forest import MondrianForest
from .stream import StreamSample, to_arrays

__all__ = [
    "EmptyMatrix",
    "CheckpointMismatch",
    "ConfusionMatrix",
    "PrequentialReport",
    "Curves",
    "macro_f1",
    "micro_f1",
    "f1_score",
    "prequential_run",
    "delta_f1",
    "aggregate_orderings",
]


class EmptyMatrix(ValueError):
    pass


class CheckpointMismatch(ValueError):
    pass


class ConfusionMatrix:
    """Rows are true labels, columns predicted labels."""

    def __init__(self, n_classes: int, counts=None):
        self.n_classes = n_classes
        if counts is None:
            self.counts = np.zeros((n_classes, n_classes), dtype=np.int64)
        else:
            self.counts = np.array(counts, dtype=np.int64)
            if self.counts.shape != (n_classes, n_classes):
                raise ValueError(f"expected a {n_classes}x{n_classes} matrix")
            if (self.counts < 0).any():
                raise ValueError("counts must be non-negative")

    @classmethod
    def from_counts(cls, counts) -> "ConfusionMatrix":
        counts = np.asarray(counts)
        return cls(counts.shape[0], counts)

    def add(self, true: int, predicted: int) -> None:
        self.counts[true, predicted] += 1

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def _classes(cm: ConfusionMatrix, include_class0: bool) -> np.ndarray:
    if cm.total == 0:
        raise EmptyMatrix("no samples evaluated yet")
    seen = cm.counts.sum(axis=1) > 0
    if not include_class0:
        seen[0] = False
    return np.flatnonzero(seen)


def macro_f1(cm: ConfusionMatrix, include_class0: bool = True) -> float:
    """Unweighted mean of per-class F1 over classes seen as true labels."""
    classes = _classes(cm, include_class0)
    if classes.size == 0:
        return 0.0
    c = cm.counts
    tp = np.diag(c)[classes].astype(np.float64)
    fp = c.sum(axis=0)[classes] - tp
    fn = c.sum(axis=1)[classes] - tp
    denom = 2 * tp + fp + fn
    per_class = np.divide(2 * tp, denom, out=np.zeros_like(tp), where=denom > 0)
    return float(per_class.mean())


def micro_f1(cm: ConfusionMatrix, include_class0: bool = True) -> float:
    classes = _classes(cm, include_class0)
    if classes.size == 0:
        return 0.0
    c = cm.counts
    tp = float(np.diag(c)[classes].sum())
    fp = float((c.sum(axis=0)[classes]).sum()) - tp
    fn = float((c.sum(axis=1)[classes]).sum()) - tp
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def f1_score(cm: ConfusionMatrix, average: str = "macro", include_class0: bool = True) -> float:
    if average == "macro":
        return macro_f1(cm, include_class0)
    if average == "micro":
        return micro_f1(cm, include_class0)
    raise ValueError(f"unknown averaging {average!r}")


@dataclass
class PrequentialReport:
    checkpoints: list[tuple[int, float]]
    report_interval: int = 50
    config: dict = field(default_factory=dict)
    seed: int | None = None
    ordering: int | None = None
    predictions: np.ndarray | None = field(default=None, repr=False)
    confusion: ConfusionMatrix | None = field(default=None, repr=False)

    @property
    def final_f1(self) -> float:
        return self.checkpoints[-1][1]

    @property
    def elements_seen(self) -> list[int]:
        return [n for n, _ in self.checkpoints]

    @property
    def f1(self) -> np.ndarray:
        return np.array([f for _, f in self.checkpoints])

    def checkpoints_csv(self) -> str:
        buf = io.StringIO()
        buf.write("elements_seen,f1\n")
        for n, f in self.checkpoints:
            buf.write(f"{n},{f!r}\n")
        return buf.getvalue()


def prequential_run(forest: MondrianForest, stream, report_interval: int = 50,
                    average: str = "macro", include_class0: bool = True,
                    seed: int | None = None, ordering: int | None = None) -> PrequentialReport:
    """Test then train on every sample; record cumulative F1 every ``report_interval``.

    ``stream`` is a sequence of :class:`StreamSample` or an ``(X, y)`` pair.
    Non-finite errors from the forest propagate with ``elements_seen`` set.
    """
    if report_interval < 1:
        raise ValueError("report_interval must be positive")
    if isinstance(stream, tuple) and len(stream) == 2 and not isinstance(stream[0], StreamSample):
        X, y = np.asarray(stream[0], dtype=np.float64), np.asarray(stream[1], dtype=np.int64)
    else:
        X, y = to_arrays(list(stream))
    if len(y) == 0:
        raise ValueError("stream is empty")
    preds = forest.prequential_predictions(X, y)

    cm = ConfusionMatrix(forest.config.n_classes)
    checkpoints = []
    n = len(y)
    for i in range(n):
        cm.counts[y[i], preds[i]] += 1
        seen = i + 1
        if seen % report_interval == 0 or seen == n:
            checkpoints.append((seen, f1_score(cm, average, include_class0)))
    cfg = forest.config
    echo = {
        "n_trees": cfg.n_trees,
        "memory_bytes": cfg.memory_bytes,
        "budget": cfg.budget,
        "discount": cfg.discount,
        "base_count": cfg.base_count,
        "mode": str(cfg.mode),
    }
    return PrequentialReport(checkpoints, report_interval, echo, seed if seed is not None else cfg.seed,
                             ordering, preds, cm)


def _grid(report) -> list[int]:
    return report.elements_seen if isinstance(report, PrequentialReport) else [n for n, _ in report]


def _values(report) -> np.ndarray:
    return report.f1 if isinstance(report, PrequentialReport) else np.array([f for _, f in report])


def delta_f1(report_reduced, report_baseline) -> list[tuple[int, float]]:
    """Pointwise ``F1_reduced - F1_baseline``; negative means the reduced run did worse."""
    grid = _grid(report_reduced)
    if grid != _grid(report_baseline):
        raise CheckpointMismatch("reports are sampled at different checkpoints")
    diff = _values(report_reduced) - _values(report_baseline)
    return list(zip(grid, diff.tolist()))


class Curves(NamedTuple):
    elements_seen: list[int]
    mean: np.ndarray
    std: np.ndarray


def aggregate_orderings(reports: Sequence) -> Curves:
    """Pointwise mean and population std of F1 across orderings."""
    if len(reports) < 2:
        raise ValueError("need at least two reports")
    grid = _grid(reports[0])
    for r in reports[1:]:
        if _grid(r) != grid:
            raise CheckpointMismatch("reports are sampled at different checkpoints")
    values = np.vstack([_values(r) for r in reports])
    # shifting by the first run keeps identical runs at exactly zero spread
    shifted = values - values[0]
    return Curves(grid, values[0] + shifted.mean(axis=0), shifted.std(axis=0))
