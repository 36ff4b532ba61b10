"""Online Mondrian Forest over a fixed-capacity node pool.

All trees share one pool sized from a byte budget. A sample arriving at a
node extends the node's box; an exponential clock whose rate is the amount
of extension decides whether a new split is inserted above the node. Once
the pool cannot hold two more nodes, trees stop growing but keep updating
their bounds and label counts.

Prediction walks each tree to a leaf, smoothing the label distribution from
the root down with absolute discounting, and averages the trees.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import _backend
from .instrument import (
    UNINSTRUMENTED,
    Instrument,
    InstrumentationMode,
    NonFiniteBound,
    NonFiniteFeature,
    NonFiniteValue,
)
from .rng import Xoshiro256
from .vprec import BINARY64, PrecisionFormat

__all__ = [
    "DimensionMismatch",
    "NonFiniteValue",
    "NonFiniteFeature",
    "NonFiniteBound",
    "PRESETS",
    "ForestConfig",
    "MondrianNode",
    "NodePool",
    "Footprint",
    "MondrianForest",
    "node_bytes",
    "footprint_bytes",
    "sample_split",
]

MB = 10**6

# n_trees -> (base_count, discount, budget)
PRESETS = {
    1: (0.0, 1.0, 1.0),
    5: (0.0, 1.0, 0.4),
    10: (0.0, 1.0, 0.4),
    50: (0.0, 1.0, 0.2),
}


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int
    memory_bytes: int
    n_features: int
    n_classes: int
    base_count: float = 0.0
    discount: float = 1.0
    budget: float = 0.4
    seed: int = 0
    mode: InstrumentationMode = field(default=UNINSTRUMENTED)

    def __post_init__(self):
        if self.n_trees < 1:
            raise ValueError("n_trees must be positive")
        if self.n_features < 1 or self.n_classes < 1:
            raise ValueError("n_features and n_classes must be positive")
        if not 0.0 <= self.discount <= 1.0:
            raise ValueError(f"discount must lie in [0, 1], got {self.discount}")
        if not self.budget > 0.0:
            raise ValueError(f"budget must be positive, got {self.budget}")
        if self.base_count < 0.0:
            raise ValueError(f"base_count must be non-negative, got {self.base_count}")
        if self.memory_bytes <= 0:
            raise ValueError("memory_bytes must be positive")

    @classmethod
    def from_table(cls, n_trees: int, memory_bytes: int, n_features: int, n_classes: int,
                   **kw) -> "ForestConfig":
        """Config with the published hyperparameters for ``n_trees``.

        Tree counts outside the table fall back to the 5/10-tree row.
        """
        base_count, discount, budget = PRESETS.get(n_trees, PRESETS[5])
        kw.setdefault("base_count", base_count)
        kw.setdefault("discount", discount)
        kw.setdefault("budget", budget)
        return cls(n_trees=n_trees, memory_bytes=int(memory_bytes),
                   n_features=n_features, n_classes=n_classes, **kw)

    @property
    def fmt(self) -> PrecisionFormat:
        return self.mode.fmt

    @property
    def node_size_bytes(self) -> int:
        # Reduced formats are emulated inside binary64 storage, so every mode
        # allocates binary64-sized nodes. footprint_bytes models the savings.
        return node_bytes(self.n_features).total

    @property
    def modeled_node_bytes(self) -> int:
        return node_bytes(self.n_features, self.mode.storage_format).total

    @property
    def capacity_nodes(self) -> int:
        return self.memory_bytes // self.node_size_bytes


class Footprint(NamedTuple):
    int_bytes: int
    float_bytes: int
    total: int


def node_bytes(n_features: int, fmt: PrecisionFormat = BINARY64) -> Footprint:
    """Bytes one node occupies.

    Bounds dominate: ``2 * n_features`` values of 8 bytes in binary64, and
    the integer fields are sized to match. Float storage scales with the
    format width and is rounded up to whole bytes.
    """
    int_bytes = 8 * 2 * n_features
    float_bytes = math.ceil(int_bytes * fmt.width / 64)
    return Footprint(int_bytes, float_bytes, int_bytes + float_bytes)


def footprint_bytes(config: ForestConfig, fmt: PrecisionFormat | None = None,
                    n_nodes: int | None = None) -> Footprint:
    """Memory held by ``n_nodes`` nodes stored in ``fmt``.

    ``n_nodes`` defaults to the number of binary64 nodes the config's budget
    holds, so footprints of different formats compare like for like.
    """
    if fmt is None:
        fmt = config.mode.storage_format
    if n_nodes is None:
        n_nodes = config.memory_bytes // node_bytes(config.n_features).total
    per = node_bytes(config.n_features, fmt)
    return Footprint(n_nodes * per.int_bytes, n_nodes * per.float_bytes, n_nodes * per.total)


def sample_split(lower: Sequence[float], upper: Sequence[float], x: Sequence[float],
                 tau_parent: float, rng: Xoshiro256,
                 mode: InstrumentationMode = UNINSTRUMENTED) -> tuple[int, float, float]:
    """Draw a cut separating ``x`` from the box ``[lower, upper]``.

    Returns ``(dim, threshold, time)``. The dimension is chosen with
    probability proportional to how far ``x`` sticks out of the box along
    it, the threshold uniformly between the box face and ``x``, and the
    time as ``tau_parent`` plus an exponential variate whose rate is the
    total extension. Draw order matches the forest kernels.
    """
    inst = Instrument(mode)
    ext = []
    eta = 0.0
    for lo, hi, v in zip(lower, upper, x):
        if v < lo:
            e = inst.sub(lo, v)
        elif v > hi:
            e = inst.sub(v, hi)
        else:
            e = 0.0
        ext.append(e)
        if e:
            eta = inst.add(eta, e)
    if not eta > 0.0:
        raise ValueError("x lies inside the box; the split clock never fires")
    e_time = -math.log(rng.uniform()) / eta
    if inst.whole:
        e_time = inst.value(e_time)
    time = inst.add(tau_parent, e_time)
    target = inst.mul(rng.uniform(), eta)
    dim = -1
    acc = 0.0
    for d, e in enumerate(ext):
        if e > 0.0:
            dim = d
            acc = inst.add(acc, e)
            if target < acc:
                break
    start = upper[dim] if x[dim] > upper[dim] else x[dim]
    threshold = inst.add(start, inst.mul(rng.uniform(), ext[dim]))
    return dim, threshold, time


@dataclass
class MondrianNode:
    index: int
    lower_bound: tuple[float, ...]
    upper_bound: tuple[float, ...]
    split_dim: int | None
    split_threshold: float | None
    split_time: float
    label_counts: tuple[int, ...]
    parent: int | None
    left_child: int | None
    right_child: int | None

    @property
    def is_leaf(self) -> bool:
        return self.split_dim is None


@dataclass(frozen=True)
class NodePool:
    capacity_bytes: int
    node_size_bytes: int
    capacity_nodes: int
    allocated: int

    @property
    def allocated_bytes(self) -> int:
        return self.allocated * self.node_size_bytes

    @property
    def full(self) -> bool:
        return self.allocated + 2 > self.capacity_nodes


class MondrianForest:
    """Online Mondrian Forest classifier.

    >>> cfg = ForestConfig.from_table(5, 30_000, n_features=2, n_classes=2)
    >>> forest = MondrianForest(cfg)
    >>> forest.predict_proba([0.0, 0.0]).tolist()
    [0.5, 0.5]
    """

    def __init__(self, config: ForestConfig, backend: str | None = None):
        self.config = config
        if backend is None:
            kernel_cls = _backend.ForestKernel
        elif backend == "python":
            kernel_cls = _backend.PyForestKernel
        elif backend == "cython":
            if _backend.CForestKernel is None:
                raise ImportError("compiled kernel is not available")
            kernel_cls = _backend.CForestKernel
        else:
            raise ValueError(f"unknown backend {backend!r}")
        capacity = config.capacity_nodes
        if capacity < config.n_trees:
            raise ValueError(
                f"{config.memory_bytes} bytes hold {capacity} nodes of "
                f"{config.node_size_bytes} bytes, fewer than {config.n_trees} trees"
            )
        self._kernel = kernel_cls(
            config.n_trees, config.n_features, config.n_classes, capacity,
            config.budget, config.discount, config.base_count, config.mode, config.seed,
        )

    @property
    def backend(self) -> str:
        return self._kernel.backend

    @property
    def pool(self) -> NodePool:
        cfg = self.config
        return NodePool(cfg.memory_bytes, cfg.node_size_bytes, self._kernel.capacity,
                        self._kernel.n_allocated)

    @property
    def hyperparameters(self) -> dict[str, float]:
        """Hyperparameters as the kernel holds them (rounded under whole instrumentation)."""
        k = self._kernel
        return {"budget": k.budget, "discount": k.discount, "base_count": k.base_count}

    def counters(self) -> dict[str, int]:
        return dict(self._kernel.counters())

    def _row(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if x.ndim != 1 or x.shape[0] != self.config.n_features:
            raise DimensionMismatch(
                f"expected {self.config.n_features} features, got shape {x.shape}")
        return x

    def _label(self, label) -> int:
        y = int(label)
        if not 0 <= y < self.config.n_classes:
            raise ValueError(f"label {y} outside [0, {self.config.n_classes})")
        return y

    def partial_fit(self, sample, label=None) -> "MondrianForest":
        """Absorb one sample: a ``StreamSample`` or ``(features, label)``."""
        if label is None:
            features, label = sample.features, sample.label
        else:
            features = sample
        self._kernel.learn_one(self._row(features), self._label(label))
        return self

    def fit_stream(self, X, y) -> "MondrianForest":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.config.n_features:
            raise DimensionMismatch(f"expected (n, {self.config.n_features}) features, got {X.shape}")
        if len(y) and (y.min() < 0 or y.max() >= self.config.n_classes):
            raise ValueError("label outside the configured class range")
        self._kernel.learn_many(X, y)
        return self

    def predict_proba(self, features) -> np.ndarray:
        return self._kernel.predict_proba_one(self._row(features))

    def predict(self, features) -> int:
        # np.argmax breaks ties toward the smallest index
        return int(np.argmax(self.predict_proba(features)))

    def prequential_predictions(self, X, y) -> np.ndarray:
        """Predict each sample, then learn it; return the predictions.

        On a non-finite value the raised error carries ``elements_seen``.
        """
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.ascontiguousarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[1] != self.config.n_features:
            raise DimensionMismatch(f"expected (n, {self.config.n_features}) features, got {X.shape}")
        if len(y) != len(X):
            raise DimensionMismatch("features and labels differ in length")
        if len(y) and (y.min() < 0 or y.max() >= self.config.n_classes):
            raise ValueError("label outside the configured class range")
        return self._kernel.prequential(X, y)

    # -- inspection -------------------------------------------------------

    def export(self) -> dict[str, np.ndarray]:
        return self._kernel.export()

    def roots(self) -> list[int]:
        return [int(r) for r in self._kernel.export()["roots"]]

    def nodes(self) -> list[MondrianNode]:
        arr = self._kernel.export()

        def opt(v):
            return None if v < 0 else int(v)

        out = []
        for i in range(len(arr["split_dim"])):
            leaf = arr["split_dim"][i] < 0
            out.append(MondrianNode(
                index=i,
                lower_bound=tuple(arr["lower"][i].tolist()),
                upper_bound=tuple(arr["upper"][i].tolist()),
                split_dim=None if leaf else int(arr["split_dim"][i]),
                split_threshold=None if leaf else float(arr["threshold"][i]),
                split_time=float(arr["tau"][i]),
                label_counts=tuple(arr["counts"][i].tolist()),
                parent=opt(arr["parent"][i]),
                left_child=opt(arr["left"][i]),
                right_child=opt(arr["right"][i]),
            ))
        return out

    def tree(self, t: int) -> Iterator[MondrianNode]:
        """Nodes of tree ``t`` in depth-first order."""
        nodes = self.nodes()
        stack = [self.roots()[t]]
        while stack:
            node = nodes[stack.pop()]
            yield node
            if not node.is_leaf:
                stack.append(node.right_child)
                stack.append(node.left_child)
