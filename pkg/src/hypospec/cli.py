"""Command-line front end.

    hypospec <experiment|all|sweep> [--config PATH|NAME] [--out-dir DIR]
             [--profile fast|full] [--seed N] [--threads N] [--workers N]
             [--dump-matrices]
    hypospec sweep --axis {b,h,A,K,M} --values 0.1,0.05,0.025
             [--experiment NAME] ...

--config takes a file path or one of the builtin names (cosine, double-well,
triple-well).  Exit codes: 0 every assertion passed, 1 an assertion failed,
2 the configuration or invocation was unusable; configuration failures leave
a machine-readable error record on stdout and in <out-dir>/error.json.

--threads caps the BLAS pool and must act before numpy loads, which is why
the heavy imports happen inside main(); it only takes reliable effect when
used through this entry point.
"""

import argparse
import json
import os
import sys
from pathlib import Path


def _build_parser():
    p = argparse.ArgumentParser(
        prog="hypospec",
        description="spectral experiments for the phase-space Laplacian of a "
                    "circle Morse potential")
    p.add_argument("command",
                   choices=["barcode", "witten", "bismut", "identity",
                            "grushin", "compare", "semigroup", "scaling",
                            "regions", "all", "sweep"],
                   help="experiment to run, 'all' for the full battery, or "
                        "'sweep' to repeat one experiment along an axis")
    p.add_argument("--config", default="double-well",
                   help="config file path or builtin name "
                        "(cosine, double-well, triple-well)")
    p.add_argument("--out-dir", default="hypospec-out",
                   help="directory for report.json and CSV output")
    p.add_argument("--profile", choices=["fast", "full"], default="full",
                   help="desk-scale defaults: full K=24 M=32, fast K=12 M=16")
    p.add_argument("--seed", type=int, default=None,
                   help="override the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="cap BLAS/OpenMP threads")
    p.add_argument("--workers", type=int, default=1,
                   help="processes for sweep points (sweep only)")
    p.add_argument("--dump-matrices", action="store_true",
                   help="export assembled operators in Matrix Market format")
    p.add_argument("--axis", choices=["b", "h", "A", "K", "M"],
                   help="sweep axis")
    p.add_argument("--values", help="comma-separated sweep values")
    p.add_argument("--experiment", default="compare",
                   help="experiment a sweep repeats (default compare)")
    return p


def _error_record(exc, out_dir):
    rec = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    text = json.dumps(rec, indent=2, sort_keys=True)
    print(text)
    try:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text)
    except OSError:
        pass
    return rec


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    from .errors import AdmissibilityError, ConfigError
    from . import harness

    try:
        raw = harness.load_config(args.config)
        if args.command == "sweep":
            if not args.axis or not args.values:
                raise ConfigError("sweep needs --axis and --values")
            try:
                values = [float(x) for x in args.values.split(",") if x.strip()]
            except ValueError:
                raise ConfigError(
                    f"--values must be comma-separated numbers, got "
                    f"{args.values!r}") from None
            summary = harness.sweep(raw, args.axis, values, args.experiment,
                                    args.out_dir, profile=args.profile,
                                    seed=args.seed, workers=args.workers)
            print(json.dumps({"sweep": {"axis": summary["axis"],
                                        "experiment": summary["experiment"],
                                        "passed": summary["passed"],
                                        "csv": summary["csv"]}},
                             indent=2, sort_keys=True))
            return 0 if summary["passed"] else 1
        experiments = None if args.command == "all" else (args.command,)
        cfg = harness.resolve_config(raw, profile=args.profile,
                                     seed=args.seed, experiments=experiments)
        report = harness.run_config(cfg, args.out_dir,
                                    dump=args.dump_matrices)
    except (ConfigError, AdmissibilityError) as exc:
        _error_record(exc, args.out_dir)
        return 2
    for res in report["results"]:
        state = "pass" if res["passed"] else "FAIL"
        print(f"[{state}] {res['experiment']:10s} "
              f"{res['runtime_s']:8.2f}s  "
              + ", ".join(f"{k}={'ok' if v else 'FAIL'}"
                          for k, v in res["assertions"].items()))
    print(f"report: {Path(args.out_dir) / 'report.json'}")
    return 0 if report["passed"] else 1


if __name__ == "__main__":
    sys.exit(main())
