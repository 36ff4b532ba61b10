# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled forest kernel.

Mirrors ``_pykernel.ForestKernel`` operation for operation; see that module
for the algorithm. Only the storage layout differs: the pool is a set of
preallocated arrays instead of growing lists.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport log, isinf, INFINITY, copysign
from libc.stdint cimport uint64_t, int64_t
from libc.string cimport memcpy

from .instrument import NonFiniteValue, NonFiniteFeature, NonFiniteBound
from .rng import Xoshiro256, substream_seed

cnp.import_array()

cdef enum:
    EXC_VALUE = 0
    EXC_FEATURE = 1
    EXC_BOUND = 2


cdef inline double round_bits(double x, int p, int emin, int emax, bint saturate, double maxf) noexcept nogil:
    cdef uint64_t bits, low, half, mask
    cdef int drop, ef, ue
    if x != x or x == 0.0 or isinf(x):
        return x
    memcpy(&bits, &x, 8)
    drop = 52 - p
    if drop > 0:
        mask = ((<uint64_t>1) << drop) - 1
        half = (<uint64_t>1) << (drop - 1)
        low = bits & mask
        bits = bits & ~mask
        if low > half or (low == half and ((bits >> drop) & 1)):
            bits += (<uint64_t>1) << drop
    ef = <int>((bits >> 52) & 0x7FF)
    ue = ef - 1023 if ef != 0 else -1022
    if ef == 0x7FF or ue > emax:
        if saturate:
            return copysign(maxf, x)
        return copysign(INFINITY, x)
    if ue < emin:
        return copysign(0.0, x)
    memcpy(&x, &bits, 8)
    return x


def round_array(double[::1] x, int p, int emin, int emax, bint saturate, double maxf):
    """Elementwise ``round_bits`` into a new array."""
    cdef Py_ssize_t i, n = x.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for i in range(n):
            o[i] = round_bits(x[i], p, emin, emax, saturate, maxf)
    return out


cdef inline uint64_t rotl(uint64_t x, int k) noexcept nogil:
    return (x << k) | (x >> (64 - k))


cdef class ForestKernel:
    cdef public int n_trees, n_features, n_classes, capacity, n_allocated
    cdef public object mode
    cdef int kind, p, emin, emax
    cdef bint saturate
    cdef double maxf
    cdef public double budget, discount, base_count
    cdef public long long n_values, n_ops, n_stores
    cdef double[:, ::1] lower, upper
    cdef int64_t[::1] split_dim, parent, left, right, roots
    cdef double[::1] threshold, tau
    cdef int64_t[:, ::1] counts
    cdef uint64_t[:, ::1] rng
    cdef double[::1] xs, ext, total, q, post
    cdef object _arrays

    backend = "cython"

    def __init__(self, int n_trees, int n_features, int n_classes, int capacity,
                 double budget, double discount, double base_count, mode, seed):
        if capacity < n_trees:
            raise ValueError(f"pool holds {capacity} nodes, fewer than {n_trees} tree roots")
        self.n_trees = n_trees
        self.n_features = n_features
        self.n_classes = n_classes
        self.capacity = capacity
        self.mode = mode
        self.kind = int(mode.kind)
        fmt = mode.fmt
        self.p = fmt.p
        self.emin = fmt.e_min
        self.emax = fmt.e_max
        self.saturate = int(fmt.overflow_policy) == 1
        self.maxf = fmt.max_finite
        self.n_values = 0
        self.n_ops = 0
        self.n_stores = 0
        self.budget = self._val(budget, EXC_VALUE)
        self.discount = self._val(discount, EXC_VALUE)
        self.base_count = self._val(base_count, EXC_VALUE)

        arrays = {
            "lower": np.zeros((capacity, n_features)),
            "upper": np.zeros((capacity, n_features)),
            "split_dim": np.full(capacity, -1, dtype=np.int64),
            "threshold": np.zeros(capacity),
            "tau": np.full(capacity, np.inf),
            "counts": np.zeros((capacity, n_classes), dtype=np.int64),
            "parent": np.full(capacity, -1, dtype=np.int64),
            "left": np.full(capacity, -1, dtype=np.int64),
            "right": np.full(capacity, -1, dtype=np.int64),
            "roots": np.zeros(n_trees, dtype=np.int64),
        }
        self._arrays = arrays
        self.lower = arrays["lower"]
        self.upper = arrays["upper"]
        self.split_dim = arrays["split_dim"]
        self.threshold = arrays["threshold"]
        self.tau = arrays["tau"]
        self.counts = arrays["counts"]
        self.parent = arrays["parent"]
        self.left = arrays["left"]
        self.right = arrays["right"]
        self.roots = arrays["roots"]
        self.xs = np.zeros(n_features)
        self.ext = np.zeros(n_features)
        self.total = np.zeros(n_classes)
        self.q = np.zeros(n_classes)
        self.post = np.zeros(n_classes)

        states = np.zeros((n_trees, 4), dtype=np.uint64)
        for t in range(n_trees):
            states[t] = Xoshiro256(substream_seed(int(seed), t)).state()
        self.rng = states
        self.n_allocated = 0
        cdef int i
        for i in range(n_trees):
            self.roots[i] = self._alloc()

    def counters(self):
        return {"values": self.n_values, "ops": self.n_ops, "stores": self.n_stores}

    # -- instrumentation sites --------------------------------------------

    cdef int _raise(self, double x, int exc) except -1:
        cls = {EXC_FEATURE: NonFiniteFeature, EXC_BOUND: NonFiniteBound}.get(exc, NonFiniteValue)
        raise cls(f"{x!r} overflows {self.mode.fmt}", x, self.mode.fmt)

    cdef inline double _round(self, double x, int exc) except? -1.0:
        cdef double r = round_bits(x, self.p, self.emin, self.emax, self.saturate, self.maxf)
        if isinf(r) and not isinf(x):
            self._raise(x, exc)
        return r

    cdef inline double _val(self, double x, int exc) except? -1.0:
        if self.kind != 2:
            return x
        self.n_values += 1
        return self._round(x, exc)

    cdef inline double _add(self, double a, double b) except? -1.0:
        if self.kind != 2:
            return a + b
        self.n_ops += 1
        return self._round(a + b, EXC_VALUE)

    cdef inline double _sub(self, double a, double b) except? -1.0:
        if self.kind != 2:
            return a - b
        self.n_ops += 1
        return self._round(a - b, EXC_VALUE)

    cdef inline double _mul(self, double a, double b) except? -1.0:
        if self.kind != 2:
            return a * b
        self.n_ops += 1
        return self._round(a * b, EXC_VALUE)

    cdef inline double _div(self, double a, double b) except? -1.0:
        if self.kind != 2:
            return a / b
        self.n_ops += 1
        return self._round(a / b, EXC_VALUE)

    cdef inline double _store(self, double x) except? -1.0:
        if self.kind == 0:
            return x
        self.n_stores += 1
        return self._round(x, EXC_BOUND)

    # -- pool and rng -----------------------------------------------------

    cdef int _alloc(self) except -1:
        if self.n_allocated >= self.capacity:
            raise MemoryError("node pool exhausted")
        cdef int i = self.n_allocated
        self.n_allocated += 1
        return i

    cdef inline double _uniform(self, int t) noexcept:
        cdef uint64_t s0 = self.rng[t, 0], s1 = self.rng[t, 1], s2 = self.rng[t, 2], s3 = self.rng[t, 3]
        cdef uint64_t result = rotl(s1 * 5, 7) * 9
        cdef uint64_t tt = s1 << 17
        s2 ^= s0
        s3 ^= s1
        s1 ^= s2
        s0 ^= s3
        s2 ^= tt
        s3 = rotl(s3, 45)
        self.rng[t, 0] = s0
        self.rng[t, 1] = s1
        self.rng[t, 2] = s2
        self.rng[t, 3] = s3
        return (<double>(result >> 11) + 0.5) * (1.0 / 9007199254740992.0)

    # -- training ---------------------------------------------------------

    cdef int _load_features(self, x) except -1:
        cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        cdef int d
        if xv.shape[0] != self.n_features:
            raise ValueError("feature length mismatch")
        for d in range(self.n_features):
            if isinf(xv[d]) or xv[d] != xv[d]:
                raise NonFiniteFeature(f"non-finite feature {xv[d]!r}", xv[d])
            self.xs[d] = self._val(xv[d], EXC_FEATURE)
        return 0

    cdef int _load_row(self, const double[:, ::1] X, Py_ssize_t i) except -1:
        cdef int d
        cdef double v
        for d in range(self.n_features):
            v = X[i, d]
            if isinf(v) or v != v:
                raise NonFiniteFeature(f"non-finite feature {v!r}", v)
            self.xs[d] = self._val(v, EXC_FEATURE)
        return 0

    def learn_one(self, x, long long y):
        self._load_features(x)
        cdef int t
        for t in range(self.n_trees):
            self._extend(t, y)

    cdef int _extend(self, int t, long long y) except -1:
        cdef int64_t node = self.roots[t]
        cdef int d, nf = self.n_features, c, dim
        cdef long long n = 0
        cdef double v, e, eta, tp, u, t_new, limit, thr
        cdef bint leaf
        for c in range(self.n_classes):
            n += self.counts[node, c]
        if n == 0:
            for d in range(nf):
                self.lower[node, d] = self._store(self.xs[d])
                self.upper[node, d] = self._store(self.xs[d])
            self.counts[node, y] += 1
            return 0
        tp = 0.0
        while True:
            eta = 0.0
            for d in range(nf):
                v = self.xs[d]
                if v < self.lower[node, d]:
                    e = self._sub(self.lower[node, d], v)
                elif v > self.upper[node, d]:
                    e = self._sub(v, self.upper[node, d])
                else:
                    self.ext[d] = 0.0
                    continue
                self.ext[d] = e
                eta = self._add(eta, e)
            leaf = self.split_dim[node] < 0
            if eta > 0.0 and self.n_allocated + 2 <= self.capacity:
                u = self._uniform(t)
                t_new = self._split_time(tp, -log(u) / eta)
                if leaf:
                    limit = self.budget
                else:
                    limit = self.tau[node] if self.tau[node] <= self.budget else self.budget
                if tp < t_new and t_new < limit:
                    dim = self._sample_cut(t, eta, node)
                    v = self.xs[dim]
                    if v > self.upper[node, dim]:
                        thr = self._add(self.upper[node, dim], self._mul(self._uniform(t), self.ext[dim]))
                    else:
                        thr = self._add(v, self._mul(self._uniform(t), self.ext[dim]))
                    self._insert_above(t, node, y, dim, thr, t_new)
                    return 0
            for d in range(nf):
                v = self.xs[d]
                if v < self.lower[node, d]:
                    self.lower[node, d] = self._store(v)
                elif v > self.upper[node, d]:
                    self.upper[node, d] = self._store(v)
            self.counts[node, y] += 1
            if leaf:
                return 0
            tp = self.tau[node]
            if self.xs[self.split_dim[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]

    cdef double _split_time(self, double tp, double e) except? -1.0:
        # an overflowing clock never fires
        if self.kind != 2:
            return tp + e
        try:
            e = self._val(e, EXC_VALUE)
            return self._add(tp, e)
        except NonFiniteValue:
            return INFINITY

    cdef int _sample_cut(self, int t, double eta, int64_t node) except -1:
        cdef double target = self._mul(self._uniform(t), eta)
        cdef double acc = 0.0, e
        cdef int d, dim = -1
        for d in range(self.n_features):
            e = self.ext[d]
            if e > 0.0:
                dim = d
                acc = self._add(acc, e)
                if target < acc:
                    break
        return dim

    cdef int _insert_above(self, int t, int64_t node, long long y, int dim, double thr, double tau) except -1:
        cdef int64_t par = self._alloc()
        cdef int64_t leaf = self._alloc()
        cdef int d, c
        cdef double v
        cdef int64_t grand
        for d in range(self.n_features):
            v = self.xs[d]
            self.lower[par, d] = self._store(v if v < self.lower[node, d] else self.lower[node, d])
            self.upper[par, d] = self._store(v if v > self.upper[node, d] else self.upper[node, d])
            self.lower[leaf, d] = self._store(v)
            self.upper[leaf, d] = self._store(v)
        self.split_dim[par] = dim
        self.threshold[par] = thr
        self.tau[par] = tau
        for c in range(self.n_classes):
            self.counts[par, c] = self.counts[node, c]
        self.counts[par, y] += 1
        self.counts[leaf, y] += 1

        grand = self.parent[node]
        self.parent[par] = grand
        if grand < 0:
            self.roots[t] = par
        elif self.left[grand] == node:
            self.left[grand] = par
        else:
            self.right[grand] = par
        if self.xs[dim] > self.upper[node, dim]:
            self.left[par] = node
            self.right[par] = leaf
        else:
            self.left[par] = leaf
            self.right[par] = node
        self.parent[node] = par
        self.parent[leaf] = par
        return 0

    # -- prediction -------------------------------------------------------

    def predict_proba_one(self, x):
        self._load_features(x)
        self._predict()
        return np.array(self.total)

    cdef int _predict(self) except -1:
        cdef int t, c, k = self.n_classes
        for c in range(k):
            self.total[c] = 0.0
        for t in range(self.n_trees):
            self._tree_posterior(t)
            for c in range(k):
                self.total[c] = self._add(self.total[c], self.q[c])
        cdef double n = <double>self.n_trees
        for c in range(k):
            self.total[c] = self._div(self.total[c], n)
        return 0

    cdef int _tree_posterior(self, int t) except -1:
        cdef int k = self.n_classes, c, distinct
        cdef double delta = self.discount, dt, mass, den, a, num, qk
        cdef long long n, cnt
        cdef bint root = True
        cdef int64_t node = self.roots[t]
        qk = self._div(1.0, <double>k)
        for c in range(k):
            self.q[c] = qk
        while True:
            n = 0
            distinct = 0
            for c in range(k):
                cnt = self.counts[node, c]
                n += cnt
                if cnt > 0:
                    distinct += 1
            dt = self._mul(delta, <double>distinct)
            if root:
                mass = self._add(dt, self.base_count)
                den = self._add(<double>n, self.base_count)
                root = False
            else:
                mass = dt
                den = <double>n
            if den > 0.0:
                for c in range(k):
                    cnt = self.counts[node, c]
                    if cnt > 0:
                        a = self._sub(<double>cnt, delta)
                    else:
                        a = 0.0
                    num = self._add(a, self._mul(mass, self.q[c]))
                    self.post[c] = self._div(num, den)
                for c in range(k):
                    self.q[c] = self.post[c]
            if self.split_dim[node] < 0:
                return 0
            if self.xs[self.split_dim[node]] <= self.threshold[node]:
                node = self.left[node]
            else:
                node = self.right[node]

    cdef int _argmax(self) noexcept:
        cdef int c, best = 0
        for c in range(1, self.n_classes):
            if self.total[c] > self.total[best]:
                best = c
        return best

    def prequential(self, X, y):
        """Test-then-train over a whole stream; returns the predictions."""
        cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
        cdef const int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
        cdef Py_ssize_t i, n = yv.shape[0]
        cdef int t
        preds = np.empty(n, dtype=np.int64)
        cdef int64_t[::1] pv = preds
        for i in range(n):
            try:
                self._load_row(Xv, i)
                self._predict()
                pv[i] = self._argmax()
                for t in range(self.n_trees):
                    self._extend(t, yv[i])
            except NonFiniteValue as err:
                err.elements_seen = i
                raise
        return preds

    def learn_many(self, X, y):
        cdef const double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
        cdef const int64_t[::1] yv = np.ascontiguousarray(y, dtype=np.int64)
        cdef Py_ssize_t i
        cdef int t
        for i in range(yv.shape[0]):
            self._load_row(Xv, i)
            for t in range(self.n_trees):
                self._extend(t, yv[i])

    def export(self):
        """Snapshot of the allocated part of the pool."""
        n = self.n_allocated
        out = {}
        for name, arr in self._arrays.items():
            out[name] = arr.copy() if name == "roots" else arr[:n].copy()
        return out
