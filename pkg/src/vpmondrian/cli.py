"""Command-line entry points.

    vpmondrian run --synthetic --trees 5 --memory-mb 3.0 --mode node --p 3,8,52 --out r.csv
    vpmondrian compare baseline.csv reduced.csv --out delta.csv
    vpmondrian featurize raw.csv --out features.csv

Exit status: 0 on success, 2 for configuration errors, 3 for I/O errors.
Cells that overflow are recorded with ``status=overflow`` and do not fail
the run.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import sweep
from .stream import SchemaError, featurize_windows, read_raw_csv, read_relabel_csv, write_featurized_csv

log = logging.getLogger("vpmondrian")

EXIT_CONFIG = 2
EXIT_IO = 3


def _int_list(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _float_list(text: str) -> list[float]:
    out = [float(p) for p in text.split(",") if p.strip()]
    if not out:
        raise argparse.ArgumentTypeError("empty list")
    return out


def _str_list(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _bool(text: str) -> bool:
    v = text.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vpmondrian", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a precision sweep and write a report CSV")
    src = run.add_mutually_exclusive_group(required=True)
    src.add_argument("--dataset", type=Path, help="CSV file (see --schema)")
    src.add_argument("--synthetic", action="store_true", help="use Gaussian blobs")
    run.add_argument("--classes", type=int, default=10)
    run.add_argument("--features", type=int, default=12)
    run.add_argument("--samples", type=int, default=5000)
    run.add_argument("--separation", type=float, default=6.0)
    run.add_argument("--schema", choices=("raw", "featurized"), default="featurized")
    run.add_argument("--window", type=int, default=50)
    run.add_argument("--axes", type=_str_list, default=None, help="raw value columns to use")
    run.add_argument("--relabel", type=Path, default=None, help="old_label,new_label CSV")
    run.add_argument("--normalize", action="store_true", help="min-max scale features to [-1, 1]")
    run.add_argument("--dataset-name", default=None)
    run.add_argument("--trees", type=_int_list, default=[5])
    run.add_argument("--memory-mb", type=_float_list, default=[3.0])
    run.add_argument("--mode", type=_str_list, default=["uninstrumented"])
    run.add_argument("--p", type=_int_list, default=[52])
    run.add_argument("--e", type=_int_list, default=[11])
    run.add_argument("--orderings", type=int, default=7)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--report-interval", type=int, default=50)
    run.add_argument("--f1", choices=("macro", "micro"), default="macro")
    run.add_argument("--include-class0", type=_bool, default=True)
    run.add_argument("--budget", type=float, default=None, help="override the tree-count preset")
    run.add_argument("--discount", type=float, default=None)
    run.add_argument("--base-count", type=float, default=None)
    run.add_argument("--out", type=Path, required=True)
    run.add_argument("--jobs", type=int, default=1)

    cmp_ = sub.add_parser("compare", help="F1 differences between two report CSVs")
    cmp_.add_argument("baseline", type=Path)
    cmp_.add_argument("reduced", type=Path)
    cmp_.add_argument("--out", type=Path, required=True, help="per-cell delta CSV")
    cmp_.add_argument("--table", type=Path, default=None,
                      help="pivot table CSV (default: <out stem>.table.csv)")
    cmp_.add_argument("--match", type=_str_list, default=None,
                      help="coordinates to pair cells on (default: those varying in the baseline)")

    feat = sub.add_parser("featurize", help="raw sensor CSV -> featurized CSV")
    feat.add_argument("raw", type=Path)
    feat.add_argument("--axes", type=_str_list, default=None)
    feat.add_argument("--window", type=int, default=50)
    feat.add_argument("--relabel", type=Path, default=None)
    feat.add_argument("--out", type=Path, required=True)
    return parser


def _run(args) -> int:
    spec = sweep.SweepSpec(
        dataset=str(args.dataset) if args.dataset else None,
        schema=args.schema, window=args.window, axes=args.axes,
        relabel=str(args.relabel) if args.relabel else None,
        synthetic=args.synthetic, classes=args.classes, features=args.features,
        samples=args.samples, separation=args.separation, normalize=args.normalize,
        trees=args.trees, memory_mb=args.memory_mb, modes=args.mode, p=args.p, e=args.e,
        orderings=args.orderings, seed=args.seed, report_interval=args.report_interval,
        f1=args.f1, include_class0=args.include_class0, budget=args.budget,
        discount=args.discount, base_count=args.base_count, dataset_name=args.dataset_name,
    )
    data = sweep.load_dataset(spec)
    cells = sweep.expand_grid(spec)
    log.info("running %d cells on %d samples", len(cells), len(data[1]))
    rows = sweep.run_sweep(spec, jobs=args.jobs, data=data)
    sweep.write_report(args.out, rows)
    overflow = sum(1 for r in rows if r["status"] == "overflow")
    log.info("wrote %d rows to %s (%d overflow cells)", len(rows), args.out, overflow)
    return 0


def _compare(args) -> int:
    cells, table = sweep.compare(sweep.read_report(args.baseline), sweep.read_report(args.reduced),
                                 args.match)
    sweep.write_report(args.out, cells, sweep.CELL_COLUMNS)
    table_path = args.table or args.out.with_name(args.out.stem + ".table.csv")
    sweep.write_report(table_path, table, sweep.table_columns(table))
    log.info("wrote %s and %s", args.out, table_path)
    return 0


def _featurize(args) -> int:
    relabel = read_relabel_csv(args.relabel) if args.relabel else None
    rows = read_raw_csv(args.raw, args.axes, relabel)
    samples = featurize_windows(rows, args.window)
    axes = args.axes or [f"a{i}" for i in range(len(rows[0].values))]
    names = [f"{a}_mean" for a in axes] + [f"{a}_std" for a in axes]
    write_featurized_csv(args.out, samples, names)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    handler = {"run": _run, "compare": _compare, "featurize": _featurize}[args.command]
    try:
        return handler(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError, SchemaError) as err:
        print(f"vpmondrian: {err}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, sweep.GridMismatch) as err:
        print(f"vpmondrian: {err}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
