"""Command-line entry point ``norstmiss``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

import argparse
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from . import config as C
from .exceptions import BudgetExceeded, ConfigInvalid, NumericalError, ParseError
from .experiment import bench, complete_file, generate, run_experiment, write_dataset

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _common(p, variant=True):
    p.add_argument("--config", type=Path, help="experiment config file (INI sections)")
    p.add_argument("--preset", help="start from a named preset; --config overrides its keys")
    p.add_argument("--seed", type=int, help="override generation.seed")
    p.add_argument("--out", type=Path, help="output directory (default: report.out)")
    if variant:
        p.add_argument("--variant", help="basic, sample-efficient, sliding:B, reuse:R or "
                                         "sliding-reuse:B:R")


def build_parser():
    ap = argparse.ArgumentParser(prog="norstmiss",
                                 description="Subspace tracking and matrix completion "
                                             "from data with missing entries.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic stream and its ground truth")
    _common(p, variant=False)

    p = sub.add_parser("track", help="generate data, track it and write error series")
    _common(p)

    p = sub.add_parser("robust", help="like track, with the outlier-robust tracker")
    _common(p)

    p = sub.add_parser("complete", help="complete a matrix file")
    p.add_argument("input", type=Path, help="values file, one frame per line (NaN = missing)")
    p.add_argument("--mask", type=Path, help="0/1 missing-indicator file paired with input")
    p.add_argument("--truth", type=Path, help="reference matrix for the error report")
    p.add_argument("--rank", type=int, help="subspace dimension (default: generation.r)")
    p.add_argument("--override-budget", action="store_true",
                   help="proceed with a warning when frames miss too many entries")
    _common(p)

    p = sub.add_parser("bench", help="compare variants over repeated seeds")
    _common(p, variant=False)
    p.add_argument("--variant", action="append", dest="variants",
                   help="variant to include (repeatable)")
    p.add_argument("--repeats", type=int, help="number of seeds (default: report.repeats)")

    p = sub.add_parser("presets", help="list presets or print one as a config file")
    p.add_argument("name", nargs="?")
    return ap


def _load(args):
    base = C.preset(args.preset) if getattr(args, "preset", None) else None
    cfg = C.load_config(args.config, base=base) if args.config else (base or C.ExperimentConfig())
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "variant", None):
        cfg = cfg.with_variant(args.variant)
    if getattr(args, "rank", None) is not None:
        cfg = replace(cfg, generation=replace(cfg.generation, r=args.rank))
    return cfg.validate()


def _outdir(args, cfg):
    return Path(args.out) if args.out else Path(cfg.report.out)


def _print_report(report):
    for k, v in report.rows():
        print(f"{k},{v}")


def _cmd_presets(args):
    if args.name:
        print(C.preset(args.name).to_ini())
    else:
        for name in C.PRESETS:
            print(name)


def _cmd_generate(args):
    cfg = _load(args)
    out = _outdir(args, cfg)
    write_dataset(generate(cfg), out)
    (out / "config.ini").write_text(cfg.to_ini())
    print(f"wrote {out}")


def _cmd_track(args, robust=False):
    cfg = _load(args)
    if robust and not cfg.algorithm.robust:
        cfg = replace(cfg, algorithm=replace(cfg.algorithm, robust=True)).validate()
        if cfg.generation.outlier_s == 0:
            print("note: config has no outliers", file=sys.stderr)
    res = run_experiment(cfg, out=_outdir(args, cfg))
    _print_report(res.report)


def _cmd_complete(args):
    cfg = _load(args)
    params = cfg.tracker_params()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, report = complete_file(args.input, _outdir(args, cfg), params, mask_path=args.mask,
                                  truth_path=args.truth, variant=cfg.variant_params(),
                                  override_budget=args.override_budget)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    _print_report(report)


def _cmd_bench(args):
    cfg = _load(args)
    repeats = args.repeats or cfg.report.repeats
    rows = bench([cfg], variants=args.variants, repeats=repeats, out=_outdir(args, cfg))
    for row in rows:
        print(",".join(str("never" if v is None else v) for v in row.values()))


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"presets": _cmd_presets, "generate": _cmd_generate, "track": _cmd_track,
                "robust": lambda a: _cmd_track(a, robust=True), "complete": _cmd_complete,
                "bench": _cmd_bench}
    try:
        handlers[args.command](args)
    except ConfigInvalid as exc:
        for k, v in exc.errors.items():
            print(f"config error: {k}: {v}", file=sys.stderr)
        return EXIT_CONFIG
    except (ParseError, BudgetExceeded, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
