"""Command line entry point: run, compare, preset."""

import argparse
import dataclasses
import os
import sys

from .config import PRESETS, load_config, preset_text
from .driver import run, run_comparison
from .errors import DomainError, NumericalError, StructuralError


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--sample-n", type=int, default=None, help="field sample grid size")
    parser.add_argument("--seed", type=int, default=None, help="accepted for harness symmetry; runs are deterministic")
    parser.add_argument("--threads", type=int, default=None, help="BLAS thread cap")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="thbheat", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one simulation config")
    p_run.add_argument("--config", required=True, help="INI config file")
    p_run.add_argument("--out", required=True, help="output directory")
    _add_common(p_run)

    p_cmp = sub.add_parser("compare", help="run several configs and merge their records")
    p_cmp.add_argument("--configs", required=True, help="comma-separated config files")
    p_cmp.add_argument("--reference", default=None, help="config file acting as error reference (default: first)")
    p_cmp.add_argument("--out", required=True, help="output directory")
    _add_common(p_cmp)

    p_pre = sub.add_parser("preset", help="write a bundled scenario config")
    p_pre.add_argument("--name", required=True, choices=sorted(PRESETS))
    p_pre.add_argument("--out", required=True, help="destination file")
    return parser


def _apply_threads(threads: int | None) -> None:
    if threads is None:
        return
    if threads < 1:
        raise DomainError("--threads must be at least 1")
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(threads)


def _load(path: str, sample_n: int | None):
    cfg = load_config(path)
    if sample_n is not None:
        cfg = dataclasses.replace(cfg, sample_n=sample_n)
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _apply_threads(getattr(args, "threads", None))
        if args.command == "run":
            records = run(_load(args.config, args.sample_n), out_dir=args.out)
            print(f"completed {len(records)} steps -> {args.out}")
            return 0
        if args.command == "compare":
            paths = [p for p in args.configs.split(",") if p]
            if not paths:
                raise DomainError("--configs must list at least one file")
            ref_path = args.reference if args.reference is not None else paths[0]
            if ref_path not in paths:
                raise DomainError("--reference must be one of the --configs files")
            configs = [_load(p, args.sample_n) for p in paths]
            run_comparison(configs, args.out, reference=paths.index(ref_path))
            print(f"comparison written -> {os.path.join(args.out, 'comparison.csv')}")
            return 0
        # preset
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(preset_text(args.name))
        print(f"preset {args.name} -> {args.out}")
        return 0
    except (DomainError, StructuralError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
