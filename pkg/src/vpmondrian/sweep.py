"""Experiment grids: precision x exponent x trees x memory x mode x ordering.

Every cell is seeded from a stable hash of the base seed and the cell's
(trees, memory, ordering) coordinates. Precision and mode are deliberately
left out of the hash so that every format in a group sees the same forest
randomness and the same sample order, which makes F1 differences paired.
"""
from __future__ import annotations

import csv
import io
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .evaluation import prequential_run
from .forest import MB, ForestConfig, MondrianForest
from .instrument import InstrumentationMode, Mode, NonFiniteValue
from .rng import stable_hash
from .stream import (
    featurize_windows,
    normalize,
    permutation,
    read_featurized_csv,
    read_raw_csv,
    read_relabel_csv,
    synthesize,
    to_arrays,
)
from .vprec import PrecisionFormat

__all__ = [
    "REPORT_COLUMNS",
    "GridMismatch",
    "SweepSpec",
    "Cell",
    "load_dataset",
    "expand_grid",
    "run_cell",
    "run_sweep",
    "write_report",
    "read_report",
    "compare",
]

REPORT_COLUMNS = [
    "run_id", "dataset", "instrumentation", "p", "e", "trees", "memory_bytes",
    "seed", "ordering", "elements_seen", "f1", "status",
]
_MODE_ORDER = {"uninstrumented": 0, "node": 1, "whole": 2}
_MASK63 = (1 << 63) - 1


class GridMismatch(ValueError):
    pass


@dataclass
class SweepSpec:
    dataset: str | None = None
    schema: str = "featurized"
    window: int = 50
    axes: Sequence[str] | None = None
    relabel: str | None = None
    synthetic: bool = False
    classes: int = 10
    features: int = 12
    samples: int = 5000
    separation: float = 6.0
    normalize: bool = False
    trees: Sequence[int] = (5,)
    memory_mb: Sequence[float] = (3.0,)
    modes: Sequence[str] = ("uninstrumented",)
    p: Sequence[int] = (52,)
    e: Sequence[int] = (11,)
    orderings: int = 7
    seed: int = 0
    report_interval: int = 50
    f1: str = "macro"
    include_class0: bool = True
    budget: float | None = None
    discount: float | None = None
    base_count: float | None = None
    dataset_name: str | None = None

    def __post_init__(self):
        if (self.dataset is None) == (not self.synthetic):
            raise ValueError("give exactly one of a dataset path or synthetic=True")
        if self.schema not in ("raw", "featurized"):
            raise ValueError(f"unknown schema {self.schema!r}")
        for name in ("trees", "memory_mb", "modes", "p", "e"):
            if not list(getattr(self, name)):
                raise ValueError(f"grid axis {name!r} is empty")
        self.modes = [Mode.parse(m).label for m in self.modes]
        for p in self.p:
            if not 1 <= p <= 52:
                raise ValueError(f"p={p} outside [1, 52]")
        for e in self.e:
            if not 2 <= e <= 11:
                raise ValueError(f"e={e} outside [2, 11]")
        if any(t < 1 for t in self.trees) or any(m <= 0 for m in self.memory_mb):
            raise ValueError("trees and memory must be positive")
        if self.orderings < 1 or self.report_interval < 1 or self.window < 1:
            raise ValueError("orderings, report interval and window must be positive")
        if self.f1 not in ("macro", "micro"):
            raise ValueError(f"unknown F1 averaging {self.f1!r}")

    @property
    def name(self) -> str:
        if self.dataset_name:
            return self.dataset_name
        if self.synthetic:
            return "synthetic"
        return Path(self.dataset).stem


@dataclass(frozen=True)
class Cell:
    mode: str
    p: int
    e: int
    trees: int
    memory_bytes: int
    ordering: int
    expected_error: bool = False

    @property
    def run_id(self) -> str:
        return f"{self.mode}-p{self.p}-e{self.e}-t{self.trees}-m{self.memory_bytes}-o{self.ordering}"

    def forest_seed(self, base_seed: int) -> int:
        return stable_hash(base_seed, "forest", self.trees, self.memory_bytes, self.ordering) & _MASK63

    def instrumentation(self) -> InstrumentationMode:
        kind = Mode.parse(self.mode)
        if kind is Mode.UNINSTRUMENTED:
            return InstrumentationMode()
        return InstrumentationMode(kind, PrecisionFormat(self.p, self.e))


def ordering_seed(base_seed: int, ordering: int) -> int:
    return stable_hash(base_seed, "ordering", ordering)


def load_dataset(spec: SweepSpec) -> tuple[np.ndarray, np.ndarray, int]:
    """Return ``(X, y, n_classes)`` for the spec's data source."""
    if spec.synthetic:
        samples = synthesize(spec.classes, spec.features, spec.samples, spec.seed, spec.separation)
        n_classes = spec.classes
    else:
        relabel = read_relabel_csv(spec.relabel) if spec.relabel else None
        if spec.schema == "raw":
            rows = read_raw_csv(spec.dataset, spec.axes, relabel)
            samples = featurize_windows(rows, spec.window)
        else:
            samples = read_featurized_csv(spec.dataset, relabel)
        if not samples:
            raise ValueError(f"{spec.dataset} holds no samples")
        n_classes = max(s.label for s in samples) + 1
    if spec.normalize:
        samples = normalize(samples)
    X, y = to_arrays(samples)
    return X, y, n_classes


def expand_grid(spec: SweepSpec) -> list[Cell]:
    cells = []
    for trees in spec.trees:
        for mb in spec.memory_mb:
            memory_bytes = int(round(mb * MB))
            for ordering in range(spec.orderings):
                for mode in spec.modes:
                    if mode == "uninstrumented":
                        cells.append(Cell(mode, 52, 11, trees, memory_bytes, ordering))
                        continue
                    for p in spec.p:
                        for e in spec.e:
                            cells.append(Cell(mode, p, e, trees, memory_bytes, ordering,
                                              expected_error=(mode == "whole" and e == 2)))
    return sorted(set(cells), key=_cell_key)


def _cell_key(c: Cell):
    return (_MODE_ORDER[c.mode], c.p, c.e, c.trees, c.memory_bytes, c.ordering)


def _config(spec: SweepSpec, cell: Cell, n_features: int, n_classes: int) -> ForestConfig:
    overrides = {k: v for k, v in (("budget", spec.budget), ("discount", spec.discount),
                                   ("base_count", spec.base_count)) if v is not None}
    return ForestConfig.from_table(cell.trees, cell.memory_bytes, n_features, n_classes,
                                   seed=cell.forest_seed(spec.seed), mode=cell.instrumentation(),
                                   **overrides)


def run_cell(spec: SweepSpec, cell: Cell, X: np.ndarray, y: np.ndarray, n_classes: int) -> list[dict]:
    order = permutation(len(y), ordering_seed(spec.seed, cell.ordering))
    Xo, yo = X[order], y[order]
    config = _config(spec, cell, X.shape[1], n_classes)
    base = {
        "run_id": cell.run_id, "dataset": spec.name, "instrumentation": cell.mode,
        "p": cell.p, "e": cell.e, "trees": cell.trees, "memory_bytes": cell.memory_bytes,
        "seed": config.seed, "ordering": cell.ordering,
    }
    forest = MondrianForest(config)
    try:
        report = prequential_run(forest, (Xo, yo), spec.report_interval, spec.f1,
                                 spec.include_class0, ordering=cell.ordering)
    except NonFiniteValue as err:
        return [{**base, "elements_seen": err.elements_seen, "f1": "", "status": "overflow"}]
    return [{**base, "elements_seen": n, "f1": repr(f), "status": "ok"} for n, f in report.checkpoints]


_WORKER: dict = {}


def _init_worker(spec, X, y, n_classes):
    _WORKER.update(spec=spec, X=X, y=y, n_classes=n_classes)


def _run_in_worker(cell: Cell) -> list[dict]:
    w = _WORKER
    return run_cell(w["spec"], cell, w["X"], w["y"], w["n_classes"])


def run_sweep(spec: SweepSpec, jobs: int = 1, data=None) -> list[dict]:
    """Run every cell; rows come back in canonical order regardless of ``jobs``."""
    X, y, n_classes = data if data is not None else load_dataset(spec)
    cells = expand_grid(spec)
    for mb in spec.memory_mb:
        for trees in spec.trees:
            cfg = ForestConfig.from_table(trees, int(round(mb * MB)), X.shape[1], n_classes)
            if cfg.capacity_nodes < trees:
                raise ValueError(f"{mb} MB cannot hold the roots of {trees} trees")
    if jobs <= 1:
        results = [run_cell(spec, c, X, y, n_classes) for c in cells]
    else:
        with ProcessPoolExecutor(max_workers=jobs, initializer=_init_worker,
                                 initargs=(spec, X, y, n_classes)) as pool:
            results = list(pool.map(_run_in_worker, cells))
    rows = [r for chunk in results for r in chunk]
    rows.sort(key=_row_key)
    return rows


def _row_key(r: dict):
    return (_MODE_ORDER[r["instrumentation"]], int(r["p"]), int(r["e"]), int(r["trees"]),
            int(r["memory_bytes"]), int(r["ordering"]), int(r["elements_seen"]))


def report_text(rows: Sequence[dict], columns: Sequence[str] = REPORT_COLUMNS) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def write_report(path, rows: Sequence[dict], columns: Sequence[str] = REPORT_COLUMNS) -> None:
    Path(path).write_text(report_text(rows, columns), encoding="utf-8")


def read_report(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(REPORT_COLUMNS) - set(reader.fieldnames or [])
        if missing:
            raise GridMismatch(f"{path}: missing report columns {sorted(missing)}")
        return list(reader)


# -- comparison -----------------------------------------------------------------

_COORDS = ("dataset", "instrumentation", "p", "e", "trees", "memory_bytes", "ordering")
_TABLE_KEYS = ("instrumentation", "dataset", "memory_bytes", "trees", "e")


def _final_rows(rows: Sequence[dict]) -> dict[tuple, dict]:
    """Last checkpoint of every run, keyed by its grid coordinates."""
    final: dict[tuple, dict] = {}
    for r in rows:
        key = tuple(r[c] for c in _COORDS)
        if key not in final or int(r["elements_seen"]) > int(final[key]["elements_seen"]):
            final[key] = r
    return final


def _f1(row: dict) -> float | None:
    if row["status"] != "ok" or row["f1"] == "":
        return None
    return float(row["f1"])


def compare(baseline_rows: Sequence[dict], reduced_rows: Sequence[dict],
            match_on: Sequence[str] | None = None) -> tuple[list[dict], list[dict]]:
    """Final-checkpoint F1 differences of ``reduced`` against ``baseline``.

    Cells are paired on ``match_on``; by default on every coordinate that
    varies within the baseline, so a single-configuration baseline is
    broadcast to all reduced cells. Returns per-cell rows and a table with
    one row per (mode, dataset, memory, trees, e) and mean/std/percentage
    columns per precision.
    """
    base = _final_rows(baseline_rows)
    red = _final_rows(reduced_rows)
    if match_on is None:
        match_on = [c for i, c in enumerate(_COORDS) if len({k[i] for k in base}) > 1]
    unknown = set(match_on) - set(_COORDS)
    if unknown:
        raise ValueError(f"cannot match on {sorted(unknown)}")
    idx = [_COORDS.index(c) for c in match_on]
    lookup: dict[tuple, dict] = {}
    for key, row in base.items():
        k = tuple(key[i] for i in idx)
        if k in lookup:
            raise GridMismatch(f"baseline holds several runs for {dict(zip(match_on, k))}")
        lookup[k] = row

    cells = []
    for key in sorted(red, key=lambda k: (_MODE_ORDER.get(k[1], 9), k[0], int(k[2]), int(k[3]),
                                          int(k[4]), int(k[5]), int(k[6]))):
        r = red[key]
        k = tuple(key[i] for i in idx)
        if k not in lookup:
            raise GridMismatch(f"no baseline run for cell {dict(zip(_COORDS, key))}")
        b = lookup[k]
        fb, fr = _f1(b), _f1(r)
        ok = fb is not None and fr is not None
        cells.append({
            **dict(zip(_COORDS, key)),
            "f1_baseline": "" if fb is None else repr(fb),
            "f1_reduced": "" if fr is None else repr(fr),
            "delta_f1": repr(fr - fb) if ok else "",
            "pct_change": repr(100.0 * (fr - fb) / fb) if ok and fb else "",
            "status": "ok" if ok else "overflow",
        })

    groups: dict[tuple, dict[int, list[dict]]] = defaultdict(lambda: defaultdict(list))
    for c in cells:
        groups[tuple(c[k] for k in _TABLE_KEYS)][int(c["p"])].append(c)
    ps = sorted({int(c["p"]) for c in cells})
    table = []
    for gkey in sorted(groups, key=lambda g: (_MODE_ORDER.get(g[0], 9), g[1], int(g[2]), int(g[3]), int(g[4]))):
        row = dict(zip(_TABLE_KEYS, gkey))
        for p in ps:
            members = groups[gkey].get(p, [])
            deltas = [float(c["delta_f1"]) for c in members if c["delta_f1"] != ""]
            pcts = [float(c["pct_change"]) for c in members if c["pct_change"] != ""]
            if members and len(deltas) < len(members):
                row[f"p{p}_mean"] = row[f"p{p}_std"] = row[f"p{p}_pct"] = "overflow"
            elif deltas:
                row[f"p{p}_mean"] = repr(float(np.mean(deltas)))
                row[f"p{p}_std"] = repr(float(np.std(deltas)))
                row[f"p{p}_pct"] = repr(float(np.mean(pcts))) if pcts else ""
            else:
                row[f"p{p}_mean"] = row[f"p{p}_std"] = row[f"p{p}_pct"] = ""
        table.append(row)
    return cells, table


CELL_COLUMNS = [*_COORDS, "f1_baseline", "f1_reduced", "delta_f1", "pct_change", "status"]


def table_columns(table: Sequence[dict]) -> list[str]:
    cols = list(_TABLE_KEYS)
    for row in table:
        for k in row:
            if k not in cols:
                cols.append(k)
    return cols


def summarize(rows: Sequence[dict]) -> dict[tuple, tuple[float, float, int]]:
    """Mean and population std of final F1 across orderings per configuration."""
    acc: dict[tuple, list[float]] = defaultdict(list)
    for key, r in _final_rows(rows).items():
        f = _f1(r)
        cfg = tuple(v for c, v in zip(_COORDS, key) if c != "ordering")
        acc[cfg].append(math.nan if f is None else f)
    return {k: (float(np.mean(v)), float(np.std(v)), len(v)) for k, v in acc.items()}
