"""Compare the compiled and pure-Python forest kernels.

    python3 benchmarks/bench_kernel.py [--samples 1500] [--repeat 3]

Both kernels run the same prequential pass (predict, then learn) on the
same stream and seed; the script checks that their predictions agree and
reports the best wall time of each.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from vpmondrian import _backend
from vpmondrian.forest import ForestConfig, MondrianForest
from vpmondrian.instrument import InstrumentationMode
from vpmondrian.stream import synthesize, to_arrays

MODES = {
    "uninstrumented": InstrumentationMode(),
    "node(3,4)": InstrumentationMode.node(3, 4),
    "whole(8,11)": InstrumentationMode.whole(8, 11),
}


def best_time(backend: str, mode, X, y, repeat: int) -> tuple[float, np.ndarray]:
    cfg = ForestConfig.from_table(5, 300_000, X.shape[1], int(y.max()) + 1, seed=1, mode=mode)
    best, preds = float("inf"), None
    for _ in range(repeat):
        forest = MondrianForest(cfg, backend=backend)
        t0 = time.perf_counter()
        preds = forest.prequential_predictions(X, y)
        best = min(best, time.perf_counter() - t0)
    return best, preds


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--samples", type=int, default=1500)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if _backend.CForestKernel is None:
        print("compiled kernel not built; nothing to compare")
        return 1
    X, y = to_arrays(synthesize(10, 12, args.samples, 0, 6.0))
    print(f"{args.samples} samples, 5 trees, 12 features, best of {args.repeat}")
    print(f"{'mode':<16}{'python s':>10}{'cython s':>10}{'speedup':>10}  agree")
    for name, mode in MODES.items():
        tp, pp = best_time("python", mode, X, y, args.repeat)
        tc, pc = best_time("cython", mode, X, y, args.repeat)
        print(f"{name:<16}{tp:>10.3f}{tc:>10.4f}{tp / tc:>9.0f}x  {np.array_equal(pp, pc)}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
