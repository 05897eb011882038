"""``tngd`` command line: train, sweep, bench-runtime, postprocess.

Exit codes: 0 success, 1 configuration error, 2 runtime error.
``TNGD_OUTPUT_ROOT`` prefixes relative output directories.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time

import numpy as np

from .. import costs
from ..errors import ConfigError, TngdError
from .config import SWEEP_AXES, load_config
from .runner import postprocess, run, sweep

log = logging.getLogger("tngd")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2


def _csv_list(conv):
    def parse(text):
        try:
            return [conv(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from None
    return parse


def build_parser():
    p = argparse.ArgumentParser(prog="tngd", description="Thermodynamic natural gradient descent experiments")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train every configured seed and write CSV logs")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, action="append", dest="seeds", help="override the seed list (repeatable)")
    t.add_argument("--jobs", type=int)

    s = sub.add_parser("sweep", help="repeat training over values of one hyperparameter")
    s.add_argument("--config", required=True)
    s.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    s.add_argument("--values", required=True, type=_csv_list(float))
    s.add_argument("--seed", type=int, action="append", dest="seeds")
    s.add_argument("--jobs", type=int)

    b = sub.add_parser("bench-runtime", help="tabulate the per-iteration cost model")
    b.add_argument("--n-list", required=True, type=_csv_list(int))
    b.add_argument("--dz-list", required=True, type=_csv_list(int))
    b.add_argument("--batch-size", type=int, default=32)
    b.add_argument("--cg-iterations", type=int, default=200)
    b.add_argument("--analog-time", type=float, default=50.0)
    b.add_argument("--calibrate", action="store_true", help="fit kernel constants on this machine first")
    b.add_argument("--out", help="write CSV here instead of stdout")

    q = sub.add_parser("postprocess", help="smooth and aggregate logs under a directory")
    q.add_argument("--in", dest="in_dir", required=True)
    q.add_argument("--window", type=int, default=200)
    return p


def measure_kernels(repeats=3):
    """Time numpy stand-ins for each digital kernel at a few sizes."""
    rng = np.random.default_rng(0)
    measurements = {"ngd": [], "tngd": [], "ngd-woodbury": []}
    for n in (64, 128, 256):
        a = rng.standard_normal((n, n))
        spd = a @ a.T + n * np.eye(n)
        best = min(_timed(lambda: np.linalg.cholesky(spd)) for _ in range(repeats))
        measurements["ngd"].append((n**3, best))
    for n in (2000, 4000, 8000):
        j = rng.standard_normal((64, n))
        v = rng.standard_normal(n)
        best = min(_timed(lambda: j.T @ (j @ v)) for _ in range(repeats))
        measurements["tngd"].append((64 * n, best))
        best = min(_timed(lambda: j @ j.T) for _ in range(repeats))
        measurements["ngd-woodbury"].append((64 * 64 * n, best))
    return measurements


def _timed(fn):
    start = time.perf_counter()
    fn()
    return max(time.perf_counter() - start, 1e-9)


def bench_runtime(args, out):
    hw = costs.HardwareAssumptions()
    if args.calibrate:
        hw = costs.calibrate(measure_kernels(), hw)
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(("optimizer", "N", "b", "d_z", "build_seconds", "transfer_seconds", "analog_seconds",
                     "total_seconds", "memory_bytes"))
    for dz in args.dz_list:
        for n in args.n_list:
            for kind in ("adam", "ngd", "ngd-cg", "ngd-woodbury", "tngd"):
                e = costs.estimate_iteration(kind, n, args.batch_size, dz, args.cg_iterations, args.analog_time, hw)
                writer.writerow((kind, n, args.batch_size, dz, repr(e.build_seconds), repr(e.transfer_seconds),
                                 repr(e.analog_seconds), repr(e.total_seconds), repr(float(e.memory_bytes))))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "train":
            paths = run(load_config(args.config), args.seeds, args.jobs)
        elif args.command == "sweep":
            paths = sweep(load_config(args.config), args.axis, args.values, args.seeds, args.jobs)
        elif args.command == "bench-runtime":
            if args.out:
                with open(args.out, "w", newline="") as fh:
                    bench_runtime(args, fh)
            else:
                bench_runtime(args, sys.stdout)
            return EXIT_OK
        else:
            paths = [postprocess(args.in_dir, args.window)]
    except ConfigError as exc:
        print(f"tngd: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TngdError, ArithmeticError, OSError, ValueError) as exc:
        print(f"tngd: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    for path in paths:
        log.info("wrote %s", path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
