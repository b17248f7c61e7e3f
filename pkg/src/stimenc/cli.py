"""Command-line entry point: ``stimenc <subcommand> --config CFG --out DIR``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import experiments as ex
from .config import ConfigError, ExperimentConfig, load_config
from .imageio import ImageFormatError
from .sparse import SparseFormatError


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stimenc",
                                description="Sparse box-constrained stimulus encoding experiments.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", required=True, type=Path, help="experiment JSON")
        sp.add_argument("--out", required=True, type=Path, help="output directory")
        sp.add_argument("--subset", type=int, help="use the first N dataset images")
        return sp

    common("gen-matrix", "generate perception matrices and sparsity statistics")
    enc = common("encode", "encode images with every method and evaluate")
    enc.add_argument("--audit", action="store_true",
                     help="recompute metrics from the saved stimuli afterwards")
    common("anytime", "quality versus iteration curves and Lanczos crossover")
    tr = common("truncate-ablation", "solution quality versus truncation level")
    tr.add_argument("--taus", type=_floats, help="comma-separated truncation fractions")
    mm = common("mismatch-grid", "SSIM gain under misspecified rho/lambda")
    mm.add_argument("--rho-values", type=_floats)
    mm.add_argument("--lambda-values", type=_floats)
    b = common("bench", "per-iteration timing")
    b.add_argument("--matrix-dir", type=Path, help="directory with SPMX files from gen-matrix")
    return p


def run(args) -> int:
    cfg: ExperimentConfig = load_config(args.config)
    if args.subset is not None:
        cfg.subset = args.subset
    needs_data = args.command not in ("gen-matrix", "bench")
    cfg.validate(need_dataset=needs_data)
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    if args.command == "gen-matrix":
        ex.cmd_gen_matrix(cfg, out)
    elif args.command == "encode":
        ex.cmd_encode(cfg, out)
        if args.audit:
            problems = ex.audit_encode(cfg, out)
            for msg in problems[:20]:
                print(f"audit: {msg}", file=sys.stderr)
            if problems:
                return 3
    elif args.command == "anytime":
        ex.cmd_anytime(cfg, out)
    elif args.command == "truncate-ablation":
        ex.cmd_truncation_ablation(cfg, out, args.taus)
    elif args.command == "mismatch-grid":
        ex.cmd_mismatch_grid(cfg, out, args.rho_values, args.lambda_values)
    elif args.command == "bench":
        ex.cmd_bench(cfg, out, args.matrix_dir)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (ConfigError, SparseFormatError, ImageFormatError, ValueError, OSError) as exc:
        print(f"stimenc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
