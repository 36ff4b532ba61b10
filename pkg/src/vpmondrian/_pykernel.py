"""Pure-Python forest kernel.

Reference implementation and import-time fallback for ``_ckernel``. Both
kernels execute the same floating-point operations in the same order, so
for a given seed they produce identical trees, predictions and counters.
"""
from __future__ import annotations

import math

import numpy as np

from .instrument import Instrument, InstrumentationMode, NonFiniteFeature, NonFiniteValue
from .rng import Xoshiro256, substream_seed

_INF = math.inf


class ForestKernel:
    backend = "python"

    def __init__(self, n_trees: int, n_features: int, n_classes: int, capacity: int,
                 budget: float, discount: float, base_count: float,
                 mode: InstrumentationMode, seed: int):
        if capacity < n_trees:
            raise ValueError(f"pool holds {capacity} nodes, fewer than {n_trees} tree roots")
        self.n_trees = n_trees
        self.n_features = n_features
        self.n_classes = n_classes
        self.capacity = capacity
        self.mode = mode
        self.inst = inst = Instrument(mode)
        self.budget = inst.value(float(budget))
        self.discount = inst.value(float(discount))
        self.base_count = inst.value(float(base_count))
        self.rngs = [Xoshiro256(substream_seed(seed, t)) for t in range(n_trees)]

        self.lower: list[list[float]] = []
        self.upper: list[list[float]] = []
        self.split_dim: list[int] = []
        self.threshold: list[float] = []
        self.tau: list[float] = []
        self.counts: list[list[int]] = []
        self.parent: list[int] = []
        self.left: list[int] = []
        self.right: list[int] = []
        self.roots = [self._alloc() for _ in range(n_trees)]

    @property
    def n_allocated(self) -> int:
        return len(self.split_dim)

    def _alloc(self) -> int:
        if len(self.split_dim) >= self.capacity:
            raise MemoryError("node pool exhausted")
        d = self.n_features
        self.lower.append([0.0] * d)
        self.upper.append([0.0] * d)
        self.split_dim.append(-1)
        self.threshold.append(0.0)
        self.tau.append(_INF)
        self.counts.append([0] * self.n_classes)
        self.parent.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        return len(self.split_dim) - 1

    def counters(self) -> dict[str, int]:
        return self.inst.counters()

    # -- training ---------------------------------------------------------

    def _features(self, x) -> list[float]:
        inst = self.inst
        out = []
        for v in x:
            v = float(v)
            if not math.isfinite(v):
                raise NonFiniteFeature(f"non-finite feature {v!r}", v)
            out.append(inst.value(v, NonFiniteFeature))
        return out

    def learn_one(self, x, y: int) -> None:
        xs = self._features(x)
        for t in range(self.n_trees):
            self._extend(t, xs, int(y))

    def _extend(self, t: int, xs: list[float], y: int) -> None:
        inst = self.inst
        lower, upper, counts = self.lower, self.upper, self.counts
        node = self.roots[t]
        if sum(counts[node]) == 0:
            lo, hi = lower[node], upper[node]
            for d, v in enumerate(xs):
                lo[d] = inst.store(v)
                hi[d] = inst.store(v)
            counts[node][y] += 1
            return
        rng = self.rngs[t]
        n_features = self.n_features
        ext = [0.0] * n_features
        tp = 0.0
        while True:
            lo, hi = lower[node], upper[node]
            eta = 0.0
            for d in range(n_features):
                v = xs[d]
                if v < lo[d]:
                    e = inst.sub(lo[d], v)
                elif v > hi[d]:
                    e = inst.sub(v, hi[d])
                else:
                    ext[d] = 0.0
                    continue
                ext[d] = e
                eta = inst.add(eta, e)
            leaf = self.split_dim[node] < 0
            if eta > 0.0 and self.n_allocated + 2 <= self.capacity:
                u = rng.uniform()
                t_new = self._split_time(tp, -math.log(u) / eta)
                limit = self.budget if leaf else min(self.tau[node], self.budget)
                if tp < t_new < limit:
                    d, thr = self._sample_cut(rng, ext, eta, xs, lo, hi)
                    self._insert_above(t, node, xs, y, d, thr, t_new)
                    return
            for d in range(n_features):
                v = xs[d]
                if v < lo[d]:
                    lo[d] = inst.store(v)
                elif v > hi[d]:
                    hi[d] = inst.store(v)
            counts[node][y] += 1
            if leaf:
                return
            tp = self.tau[node]
            node = self.left[node] if xs[self.split_dim[node]] <= self.threshold[node] else self.right[node]

    def _split_time(self, tp: float, e: float) -> float:
        # an overflowing clock never fires
        inst = self.inst
        if not inst.whole:
            return tp + e
        try:
            e = inst.value(e)
            return inst.add(tp, e)
        except NonFiniteValue:
            return _INF

    def _sample_cut(self, rng: Xoshiro256, ext: list[float], eta: float,
                    xs: list[float], lo: list[float], hi: list[float]) -> tuple[int, float]:
        inst = self.inst
        target = inst.mul(rng.uniform(), eta)
        dim = -1
        acc = 0.0
        for d, e in enumerate(ext):
            if e > 0.0:
                dim = d
                acc = inst.add(acc, e)
                if target < acc:
                    break
        v = xs[dim]
        start = hi[dim] if v > hi[dim] else v
        thr = inst.add(start, inst.mul(rng.uniform(), ext[dim]))
        return dim, thr

    def _insert_above(self, t: int, node: int, xs: list[float], y: int,
                      dim: int, thr: float, tau: float) -> None:
        inst = self.inst
        par = self._alloc()
        leaf = self._alloc()
        lo, hi = self.lower[node], self.upper[node]
        plo, phi = self.lower[par], self.upper[par]
        llo, lhi = self.lower[leaf], self.upper[leaf]
        for d, v in enumerate(xs):
            plo[d] = inst.store(v if v < lo[d] else lo[d])
            phi[d] = inst.store(v if v > hi[d] else hi[d])
            llo[d] = inst.store(v)
            lhi[d] = inst.store(v)
        self.split_dim[par] = dim
        self.threshold[par] = thr
        self.tau[par] = tau
        pc = self.counts[par]
        pc[:] = self.counts[node]
        pc[y] += 1
        self.counts[leaf][y] += 1

        grand = self.parent[node]
        self.parent[par] = grand
        if grand < 0:
            self.roots[t] = par
        elif self.left[grand] == node:
            self.left[grand] = par
        else:
            self.right[grand] = par
        if xs[dim] > hi[dim]:
            self.left[par], self.right[par] = node, leaf
        else:
            self.left[par], self.right[par] = leaf, node
        self.parent[node] = par
        self.parent[leaf] = par

    # -- prediction -------------------------------------------------------

    def predict_proba_one(self, x) -> np.ndarray:
        return np.array(self._predict(self._features(x)))

    def _predict(self, xs: list[float]) -> list[float]:
        inst = self.inst
        k = self.n_classes
        total = [0.0] * k
        for t in range(self.n_trees):
            post = self._tree_posterior(t, xs)
            for c in range(k):
                total[c] = inst.add(total[c], post[c])
        n = float(self.n_trees)
        return [inst.div(s, n) for s in total]

    def _tree_posterior(self, t: int, xs: list[float]) -> list[float]:
        inst = self.inst
        k = self.n_classes
        delta = self.discount
        q = [inst.div(1.0, float(k))] * k
        node = self.roots[t]
        root = True
        while True:
            cnt = self.counts[node]
            n = sum(cnt)
            distinct = sum(1 for c in cnt if c > 0)
            dt = inst.mul(delta, float(distinct))
            if root:
                mass = inst.add(dt, self.base_count)
                den = inst.add(float(n), self.base_count)
                root = False
            else:
                mass = dt
                den = float(n)
            if den > 0.0:
                p = []
                for c in range(k):
                    a = inst.sub(float(cnt[c]), delta) if cnt[c] > 0 else 0.0
                    num = inst.add(a, inst.mul(mass, q[c]))
                    p.append(inst.div(num, den))
                q = p
            if self.split_dim[node] < 0:
                return q
            node = self.left[node] if xs[self.split_dim[node]] <= self.threshold[node] else self.right[node]

    def prequential(self, X, y) -> np.ndarray:
        """Test-then-train over a whole stream; returns the predictions."""
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        preds = np.empty(len(y), dtype=np.int64)
        for i in range(len(y)):
            try:
                xs = self._features(X[i])
                proba = self._predict(xs)
                preds[i] = max(range(self.n_classes), key=proba.__getitem__)
                label = int(y[i])
                for t in range(self.n_trees):
                    self._extend(t, xs, label)
            except NonFiniteValue as err:
                err.elements_seen = i
                raise
        return preds

    def learn_many(self, X, y) -> None:
        for row, label in zip(np.asarray(X, dtype=np.float64), np.asarray(y, dtype=np.int64)):
            self.learn_one(row, int(label))

    def export(self) -> dict[str, np.ndarray]:
        """Snapshot of the allocated part of the pool."""
        return {
            "lower": np.array(self.lower, dtype=np.float64).reshape(-1, self.n_features),
            "upper": np.array(self.upper, dtype=np.float64).reshape(-1, self.n_features),
            "split_dim": np.array(self.split_dim, dtype=np.int64),
            "threshold": np.array(self.threshold, dtype=np.float64),
            "tau": np.array(self.tau, dtype=np.float64),
            "counts": np.array(self.counts, dtype=np.int64).reshape(-1, self.n_classes),
            "parent": np.array(self.parent, dtype=np.int64),
            "left": np.array(self.left, dtype=np.int64),
            "right": np.array(self.right, dtype=np.int64),
            "roots": np.array(self.roots, dtype=np.int64),
        }
