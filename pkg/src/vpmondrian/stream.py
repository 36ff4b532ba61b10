"""Stream ingestion: raw sensor windows, featurized CSVs, synthetic blobs."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .rng import Xoshiro256

__all__ = [
    "RawSensorRow",
    "StreamSample",
    "EmptyStream",
    "SchemaError",
    "featurize_windows",
    "shuffle_stream",
    "permutation",
    "synthesize",
    "normalize",
    "to_arrays",
    "from_arrays",
    "read_raw_csv",
    "read_featurized_csv",
    "read_relabel_csv",
    "write_featurized_csv",
    "write_raw_csv",
]

DEFAULT_AXES = ("acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z")


class EmptyStream(ValueError):
    pass


class SchemaError(ValueError):
    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}:{line}: " if line is not None else f"{path}: "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class RawSensorRow:
    values: tuple[float, ...]
    label: int


@dataclass(frozen=True)
class StreamSample:
    features: tuple[float, ...]
    label: int


def featurize_windows(rows: Sequence[RawSensorRow], window: int = 50) -> list[StreamSample]:
    """Mean and population std per axis over non-overlapping windows.

    Each window is labelled with its most frequent label (smallest label on
    ties). A trailing partial window is dropped.
    """
    if window < 1:
        raise ValueError("window must be at least 1")
    if len(rows) < window:
        raise EmptyStream(f"{len(rows)} rows cannot fill a window of {window}")
    values = np.array([r.values for r in rows], dtype=np.float64)
    labels = np.array([r.label for r in rows], dtype=np.int64)
    n_windows = len(rows) // window
    out = []
    for w in range(n_windows):
        block = values[w * window:(w + 1) * window]
        mean = block.mean(axis=0)
        std = block.std(axis=0)
        modal = int(np.argmax(np.bincount(labels[w * window:(w + 1) * window])))
        out.append(StreamSample(tuple(mean.tolist()) + tuple(std.tolist()), modal))
    return out


def permutation(n: int, seed: int) -> list[int]:
    """Fisher-Yates permutation of ``range(n)`` driven by xoshiro256**."""
    rng = Xoshiro256(seed)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.next_u64() % (i + 1)
        order[i], order[j] = order[j], order[i]
    return order


def shuffle_stream(samples: Sequence, ordering_seed: int) -> list:
    return [samples[i] for i in permutation(len(samples), ordering_seed)]


def synthesize(n_classes: int, n_features: int, n_samples: int, seed: int,
               separation: float) -> list[StreamSample]:
    """Isotropic unit-variance Gaussian blob per class.

    Class ``k`` is centred at ``k * separation`` along the main diagonal, so
    consecutive class means are ``separation`` apart. Labels cycle through
    the classes in order.
    """
    if separation < 0:
        raise ValueError("separation must be non-negative")
    if n_samples == 0:
        return []
    rng = np.random.default_rng(seed)
    labels = np.arange(n_samples) % n_classes
    direction = np.full(n_features, 1.0 / np.sqrt(n_features))
    X = rng.standard_normal((n_samples, n_features)) + np.outer(labels * separation, direction)
    return from_arrays(X, labels)


def normalize(samples: Sequence[StreamSample], low: float = -1.0,
              high: float = 1.0) -> list[StreamSample]:
    """Min-max scale every feature of a finite stream into ``[low, high]``."""
    if not samples:
        return []
    X, y = to_arrays(samples)
    mn, mx = X.min(axis=0), X.max(axis=0)
    span = np.where(mx > mn, mx - mn, 1.0)
    scaled = low + (X - mn) / span * (high - low)
    return from_arrays(np.clip(scaled, low, high), y)


def to_arrays(samples: Sequence[StreamSample]) -> tuple[np.ndarray, np.ndarray]:
    if not samples:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    X = np.array([s.features for s in samples], dtype=np.float64)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return X, y


def from_arrays(X, y) -> list[StreamSample]:
    return [StreamSample(tuple(row), int(label)) for row, label in zip(np.asarray(X).tolist(), y)]


# -- CSV ----------------------------------------------------------------------

def _parse_float(text: str, path, line: int, column: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise SchemaError(f"column {column!r}: {text!r} is not a number", path, line) from None
    if not np.isfinite(v):
        raise SchemaError(f"column {column!r}: non-finite value {text!r}", path, line)
    return v


def _parse_label(text: str, path, line: int, relabel: dict[int, int] | None) -> int:
    try:
        label = int(text)
    except ValueError:
        raise SchemaError(f"label {text!r} is not an integer", path, line) from None
    if label < 0:
        raise SchemaError(f"negative label {label}", path, line)
    if relabel is not None:
        label = relabel.get(label, label)
    return label


def _reader(path):
    f = open(path, newline="", encoding="utf-8")
    reader = csv.reader(f)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        f.close()
        raise SchemaError("file is empty", path, 1) from None
    if "label" not in header:
        f.close()
        raise SchemaError("header has no 'label' column", path, 1)
    return f, reader, header


def _columns(header: list[str], wanted: Sequence[str] | None, path) -> list[int]:
    if wanted is None:
        return [i for i, h in enumerate(header) if h != "label"]
    missing = [c for c in wanted if c not in header]
    if missing:
        raise SchemaError(f"missing columns {missing}", path, 1)
    return [header.index(c) for c in wanted]


def _rows(path, axes, relabel):
    f, reader, header = _reader(path)
    with f:
        cols = _columns(header, axes, path)
        if not cols:
            raise SchemaError("no value columns", path, 1)
        li = header.index("label")
        for line, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise SchemaError(f"expected {len(header)} fields, got {len(rec)}", path, line)
            values = tuple(_parse_float(rec[i], path, line, header[i]) for i in cols)
            yield values, _parse_label(rec[li], path, line, relabel)


def read_raw_csv(path, axes: Sequence[str] | None = None,
                 relabel: dict[int, int] | None = None) -> list[RawSensorRow]:
    """One raw sensor reading per row; ``axes`` selects value columns by name."""
    return [RawSensorRow(v, label) for v, label in _rows(path, axes, relabel)]


def read_featurized_csv(path, relabel: dict[int, int] | None = None) -> list[StreamSample]:
    """Precomputed feature vectors: every non-``label`` column is a feature."""
    return [StreamSample(v, label) for v, label in _rows(path, None, relabel)]


def read_relabel_csv(path) -> dict[int, int]:
    mapping = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for line, rec in enumerate(reader, start=1):
            if not rec:
                continue
            if line == 1 and rec[0].strip() == "old_label":
                continue
            if len(rec) != 2:
                raise SchemaError("expected old_label,new_label", path, line)
            try:
                mapping[int(rec[0])] = int(rec[1])
            except ValueError:
                raise SchemaError(f"non-integer labels {rec}", path, line) from None
    return mapping


def write_featurized_csv(path, samples: Iterable[StreamSample], names: Sequence[str] | None = None):
    samples = list(samples)
    n = len(samples[0].features) if samples else len(names or ())
    names = list(names) if names else [f"f{i}" for i in range(n)]
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([*names, "label"])
        for s in samples:
            w.writerow([*(repr(v) for v in s.features), s.label])


def write_raw_csv(path, rows: Iterable[RawSensorRow], axes: Sequence[str] = DEFAULT_AXES):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow([*axes, "label"])
        for r in rows:
            w.writerow([*(repr(v) for v in r.values), r.label])
