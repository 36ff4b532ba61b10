"""Acceptance criteria, one test each. Every test prints a PASS/FAIL line;
the lines are repeated in the pytest terminal summary."""
import time
from fractions import Fraction
from functools import lru_cache

import numpy as np
import pytest

from oracles import histogram, oracle_round
from verdicts import verdict
from vpmondrian import _backend, sweep
from vpmondrian.evaluation import ConfusionMatrix, delta_f1, macro_f1, prequential_run
from vpmondrian.forest import ForestConfig, MondrianForest, footprint_bytes, node_bytes
from vpmondrian.instrument import UNINSTRUMENTED, InstrumentationMode, NonFiniteValue
from vpmondrian.rng import stable_hash
from vpmondrian.stream import normalize, permutation, synthesize, to_arrays
from vpmondrian.vprec import PrecisionFormat, dynamic_range, round_array, round_to_precision

N_ORDERINGS = 7
SEED = 0


# -- shared synthetic experiment ------------------------------------------------

@lru_cache(maxsize=None)
def separable_stream(normalized: bool):
    samples = synthesize(10, 12, 20_000, SEED, 6.0)
    if normalized:
        samples = normalize(samples)
    return to_arrays(samples)


@lru_cache(maxsize=None)
def final_f1(mode: InstrumentationMode, memory_bytes: int = 300_000, normalized: bool = False):
    """Final macro F1 per ordering; NaN where the run overflowed."""
    X, y = separable_stream(normalized)
    out = []
    for k in range(N_ORDERINGS):
        order = permutation(len(y), sweep.ordering_seed(SEED, k))
        seed = stable_hash(SEED, "forest", 5, memory_bytes, k) & ((1 << 63) - 1)
        cfg = ForestConfig.from_table(5, memory_bytes, 12, 10, seed=seed, mode=mode)
        try:
            out.append(prequential_run(MondrianForest(cfg), (X[order], y[order])).final_f1)
        except NonFiniteValue:
            out.append(float("nan"))
    return np.array(out)


def paired_delta(mode, **kw):
    return final_f1(mode, **kw) - final_f1(UNINSTRUMENTED, **kw)


# -- criteria -------------------------------------------------------------------

def test_criterion_01_rounding_oracle():
    start = time.perf_counter()
    mismatches = 0
    n_inputs = 100_000
    checked = 0
    ckernel = _backend.CForestKernel is not None
    if ckernel:
        from vpmondrian import _ckernel
    for p in range(1, 5):
        for e in range(2, 5):
            fmt = PrecisionFormat(p, e)
            rng = np.random.default_rng(1000 * p + e)
            x = np.exp2(rng.uniform(fmt.e_min - 3, fmt.e_max + 2, n_inputs)) * rng.choice([-1.0, 1.0], n_inputs)
            expected = oracle_round(x, p, e)
            vector = round_array(x, fmt)
            scalar = np.array([round_to_precision(v, fmt) for v in x.tolist()])
            mismatches += int(np.sum(vector != expected)) + int(np.sum(scalar != expected))
            if ckernel:
                compiled = _ckernel.round_array(x, p, fmt.e_min, fmt.e_max, False, fmt.max_finite)
                mismatches += int(np.sum(np.asarray(compiled) != expected))
            checked += 1
    elapsed = time.perf_counter() - start
    verdict(1, "rounding oracle equivalence", mismatches == 0 and checked == 12 and elapsed < 10.0,
            f"{checked} formats x {n_inputs} inputs, {mismatches} mismatches, {elapsed:.2f}s")


def test_criterion_02_format_identities():
    results = {
        "width(23,8)": PrecisionFormat(23, 8).width == 32,
        "width(52,11)": PrecisionFormat(52, 11).width == 64,
        "range(8)": dynamic_range(8) == (-126, 127),
        "range(11)": dynamic_range(11) == (-1022, 1023),
        "range(2)": dynamic_range(2) == (0, 1),
    }
    bad = [k for k, ok in results.items() if not ok]
    verdict(2, "format identities", not bad, "all exact" if not bad else f"wrong: {bad}")


def _full_precision_reports():
    spec = sweep.SweepSpec(synthetic=True, samples=5000, classes=10, features=12, trees=[5],
                           memory_mb=[0.3], orderings=1, seed=SEED)
    data = sweep.load_dataset(spec)
    columns = [c for c in sweep.REPORT_COLUMNS if c not in ("run_id", "instrumentation")]
    texts = {}
    for mode in ("uninstrumented", "node", "whole"):
        spec.modes = [mode]
        spec.p, spec.e = [52], [11]
        rows = sweep.run_sweep(spec, data=data)
        texts[mode] = sweep.report_text(rows, columns)
    X, y, _ = data
    checkpoints = {}
    for name, mode in (("uninstrumented", UNINSTRUMENTED), ("node", InstrumentationMode.node(52, 11)),
                       ("whole", InstrumentationMode.whole(52, 11))):
        cfg = ForestConfig.from_table(5, 300_000, 12, 10, seed=7, mode=mode)
        checkpoints[name] = prequential_run(MondrianForest(cfg), (X, y)).checkpoints_csv()
    return texts, checkpoints


def test_criterion_03_full_precision_equivalence():
    texts, checkpoints = _full_precision_reports()
    same_sweep = len({t.encode() for t in texts.values()}) == 1
    same_checkpoints = len({t.encode() for t in checkpoints.values()}) == 1
    n_rows = texts["node"].count("\n") - 1
    verdict(3, "full-precision equivalence", same_sweep and same_checkpoints and n_rows == 100,
            f"sweep reports identical={same_sweep}, checkpoint CSVs identical={same_checkpoints}, {n_rows} rows")


def test_criterion_04_memory_ceiling():
    X, y = to_arrays(synthesize(10, 12, 100_000, 4, 6.0))
    failures = []
    for mb in (0.06, 0.12, 0.3):
        budget = int(round(mb * sweep.MB))
        f = MondrianForest(ForestConfig.from_table(5, budget, 12, 10, seed=3))
        frozen_at = None
        for i in range(len(y)):
            f.partial_fit(X[i], y[i])
            pool = f.pool
            if pool.allocated_bytes > budget:
                failures.append(f"{mb} MB exceeded at sample {i}")
                break
            if frozen_at is None and pool.full:
                frozen_at = pool.allocated
            elif frozen_at is not None and pool.allocated != frozen_at:
                failures.append(f"{mb} MB grew after filling")
                break
        exported = f.export()
        root_totals = exported["counts"][exported["roots"]].sum(axis=1)
        if frozen_at is None:
            failures.append(f"{mb} MB never filled")
        if not (root_totals == len(y)).all():
            failures.append(f"{mb} MB root counts {root_totals.tolist()}")
    # single-leaf oracle at capacity 1
    Xs, ys = to_arrays(synthesize(3, 4, 2000, 5, 3.0))
    one = MondrianForest(ForestConfig(1, node_bytes(4).total, 4, 3, discount=0.0, seed=1))
    for i in range(len(ys)):
        one.partial_fit(Xs[i], ys[i])
        hist = histogram(ys[: i + 1], 3)
        if not np.allclose(one.predict_proba(Xs[i]), hist / (i + 1), rtol=0, atol=1e-15):
            failures.append(f"single-leaf posterior differs at {i}")
            break
    if one.pool.allocated != 1:
        failures.append("capacity-1 pool grew")
    verdict(4, "memory ceiling", not failures,
            "3 budgets x 100000 samples checked every sample; single-leaf oracle exact"
            if not failures else "; ".join(failures))


def test_criterion_05_node_instrumentation_robustness():
    start = time.perf_counter()
    base = final_f1(UNINSTRUMENTED)
    bound = 2 * base.std()
    deltas = {p: float(np.mean(paired_delta(InstrumentationMode.node(p, 11)))) for p in range(2, 9)}
    elapsed = time.perf_counter() - start
    worst = max(abs(d) for d in deltas.values())
    ok = all(abs(d) <= bound for d in deltas.values()) and elapsed < 300
    verdict(5, "NI robust for p in 2..8", ok,
            f"baseline F1 {base.mean():.4f}, 2*std {bound:.4f}, max |mean dF1| {worst:.4f}, {elapsed:.0f}s; "
            + ", ".join(f"p{p}:{d:+.4f}" for p, d in deltas.items()))


def test_criterion_06_whole_instrumentation_extremes():
    base = final_f1(UNINSTRUMENTED)
    bound = 2 * base.std()
    d1 = float(np.mean(paired_delta(InstrumentationMode.whole(1, 11))))
    high = {p: float(np.mean(paired_delta(InstrumentationMode.whole(p, 11)))) for p in range(8, 53)}
    worst_p = max(high, key=lambda p: abs(high[p]))
    ok = abs(d1) > bound and all(abs(d) <= bound for d in high.values()) and not np.isnan(d1)
    verdict(6, "WI degrades at p=1, holds at p>=8", ok,
            f"2*std {bound:.4f}; p1 mean dF1 {d1:+.4f}; worst p>=8 is p{worst_p} at {high[worst_p]:+.4f}")


def test_criterion_07_exponent_cliff():
    base = final_f1(UNINSTRUMENTED, normalized=True)
    bound = 2 * base.std()
    d = {e: float(np.mean(paired_delta(InstrumentationMode.node(52, e), normalized=True))) for e in (2, 4, 5)}
    wi2 = final_f1(InstrumentationMode.whole(52, 2), normalized=True)
    spec = sweep.SweepSpec(synthetic=True, samples=2000, normalize=True, modes=["whole"], e=[2],
                           trees=[5], memory_mb=[0.3], orderings=2)
    statuses = {r["status"] for r in sweep.run_sweep(spec)}
    parts = {
        "NI e4/e5 within 2 std": abs(d[4]) <= bound and abs(d[5]) <= bound,
        "NI e2 loses > 0.05": d[2] < -0.05,
        "WI e2 overflows": bool(np.isnan(wi2).all()) and statuses == {"overflow"},
    }
    verdict(7, "exponent cliff", all(parts.values()),
            f"2*std {bound:.4f}; NI mean dF1 e2 {d[2]:+.4f}, e4 {d[4]:+.4f}, e5 {d[5]:+.4f}; "
            + ", ".join(f"{k}={v}" for k, v in parts.items()))


def test_criterion_08_memory_ratio():
    cfg = ForestConfig.from_table(5, 600_000, 12, 10)
    full = footprint_bytes(cfg, PrecisionFormat(52, 11))
    eight = footprint_bytes(cfg, PrecisionFormat(3, 4))
    ratio = Fraction(full.total, eight.total)
    verdict(8, "memory-ratio model", ratio == Fraction(16, 9) and full.int_bytes == full.float_bytes,
            f"uninstrumented/NI(gamma=8) = {ratio}")


def test_criterion_09_capacity_trade():
    budget = 60_000
    base = final_f1(UNINSTRUMENTED, memory_bytes=budget)
    reduced = final_f1(InstrumentationMode.node(3, 4), memory_bytes=2 * budget)
    pct = 100 * (reduced.mean() - base.mean()) / base.mean()
    verdict(9, "capacity vs precision", reduced.mean() >= base.mean(),
            f"uninstrumented@{budget}B F1 {base.mean():.4f}, NI(3,4)@{2 * budget}B F1 {reduced.mean():.4f} "
            f"({pct:+.2f}%), orderings improved {int((reduced > base).sum())}/{N_ORDERINGS}")


def test_criterion_10_determinism_and_causality():
    first, first_cp = _full_precision_reports()
    again, again_cp = _full_precision_reports()
    replay = first == again and first_cp == again_cp
    X, y = to_arrays(synthesize(10, 12, 5000, SEED, 6.0))
    cfg = ForestConfig.from_table(5, 300_000, 12, 10, seed=21, mode=InstrumentationMode.node(4, 8))
    full = prequential_run(MondrianForest(cfg), (X, y))
    rng = np.random.default_rng(10)
    cuts = sorted(rng.choice(np.arange(1, len(y)), 10, replace=False).tolist())
    bad = []
    for c in cuts:
        f = MondrianForest(cfg).fit_stream(X[:c], y[:c])
        if f.predict(X[c]) != full.predictions[c]:
            bad.append(f"prediction@{c}")
        prefix = prequential_run(MondrianForest(cfg), (X[:c], y[:c]))
        expected = [cp for cp in full.checkpoints if cp[0] <= c]
        got = [cp for cp in prefix.checkpoints if cp[0] % 50 == 0]
        if got != expected:
            bad.append(f"checkpoints@{c}")
    verdict(10, "determinism and causality", replay and not bad,
            f"replay identical={replay}; truncation at {cuts}: {'all equal' if not bad else bad}")


def test_criterion_11_evaluator_values():
    half = macro_f1(ConfusionMatrix.from_counts([[1, 1], [1, 1]]))
    perfect = macro_f1(ConfusionMatrix.from_counts(np.diag([4, 2, 9])))
    X, y = to_arrays(synthesize(3, 4, 300, 1, 3.0))
    rep = prequential_run(MondrianForest(ForestConfig.from_table(5, 100_000, 4, 3)), (X, y))
    zero = all(d == 0.0 for _, d in delta_f1(rep, rep))
    verdict(11, "evaluator unit values", half == 0.5 and perfect == 1.0 and zero,
            f"macro_f1([[1,1],[1,1]])={half}, diagonal={perfect}, delta_f1(r,r) all zero={zero}")


@pytest.mark.skipif(_backend.CForestKernel is None, reason="compiled kernel not built")
def test_kernels_agree_on_acceptance_stream():
    X, y = separable_stream(False)
    X, y = X[:1500], y[:1500]
    cfg = ForestConfig.from_table(5, 60_000, 12, 10, seed=5, mode=InstrumentationMode.whole(6, 11))
    a = MondrianForest(cfg, backend="python").prequential_predictions(X, y)
    b = MondrianForest(cfg, backend="cython").prequential_predictions(X, y)
    np.testing.assert_array_equal(a, b)
