import os, sys
import argparse
import logging
from logging.handlers import RotatingFileHandler
from typing import List, Optional

from pydantic import ValidationError

from geotransport.config import settings
from geotransport.errors import GeoTransportError, InstanceValidationError, OracleCapacityError, QualityGateError


# ---------- Logging: rotating file + stderr (stdout carries the JSON report) ----------
def setup_logging() -> None:
    os.makedirs(settings.LOG_DIR, exist_ok=True)
    log_file = os.path.join(settings.LOG_DIR, settings.LOG_FILE)
    fmt = logging.Formatter("%(asctime)s %(levelname)s %(name)s - %(message)s")

    _fh = RotatingFileHandler(log_file, maxBytes=settings.LOG_MAX_BYTES, backupCount=settings.LOG_BACKUP_COUNT, encoding="utf-8")
    _fh.setFormatter(fmt)
    _sh = logging.StreamHandler(sys.stderr)
    _sh.setFormatter(fmt)

    root = logging.getLogger()
    root.setLevel(getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO))

    # Replace handlers to avoid duplicates on repeated calls
    root.handlers = [_fh, _sh]
    logging.getLogger("geotransport").setLevel(root.level)


# ------------------------------
# Argument parsing
# ------------------------------
def _solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epsilon", type=float, default=settings.DEFAULT_EPSILON)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--backend", choices=["exact", "sherman"], default=settings.DEFAULT_BACKEND)
    p.add_argument("--k", type=int, default=None, help="best-of-k repetitions (default ceil(log2 n) + 1)")
    p.add_argument("--moat-exponent", type=float, default=settings.MOAT_EXPONENT)
    p.add_argument("--rule2-exponent", type=float, default=settings.RULE2_EXPONENT)
    p.add_argument("--max-iterations", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="geotransport", description="Approximate geometric transportation maps")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic instance")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--d", type=int, default=2)
    gen.add_argument("--spread", type=float, default=1.0)
    gen.add_argument("--supplies", choices=["unit", "random", "cluster"], default="random")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--epsilon", type=float, default=None, help="size cluster gaps for this epsilon")
    gen.add_argument("--rule2-exponent", type=float, default=None, help="size cluster gaps for this Rule-2 exponent")
    gen.add_argument("--output", required=True)

    solve = sub.add_parser("solve", help="approximate transportation map")
    solve.add_argument("--input", required=True)
    solve.add_argument("--output", default=None, help="map file")
    solve.add_argument("--report", default=None, help="also write the JSON report here")
    _solver_flags(solve)

    exact = sub.add_parser("exact", help="exact map via the brute-force oracle")
    exact.add_argument("--input", required=True)
    exact.add_argument("--output", default=None)
    exact.add_argument("--report", default=None)

    compare = sub.add_parser("compare", help="ratio against the oracle over several seeds")
    compare.add_argument("--input", required=True)
    compare.add_argument("--trials", type=int, default=5)
    _solver_flags(compare)

    bench = sub.add_parser("bench", help="timing table over instance sizes")
    bench.add_argument("--sizes", type=int, nargs="+", default=[64, 128, 256, 512])
    bench.add_argument("--d", type=int, default=2)
    bench.add_argument("--report", default=None)
    _solver_flags(bench)
    return parser


def _config(args: argparse.Namespace):
    from geotransport.solvers import SolverConfig

    return SolverConfig(
        backend=args.backend,
        epsilon=args.epsilon,
        k=args.k,
        seed=args.seed,
        max_iterations=args.max_iterations,
        moat_exponent=args.moat_exponent,
        rule2_exponent=args.rule2_exponent,
    )


def run(args: argparse.Namespace) -> int:
    from geotransport import commands

    if args.command == "gen":
        report = commands.cmd_gen(
            args.n, args.d, args.spread, args.supplies, args.seed, args.output,
            epsilon=args.epsilon, rule2_exponent=args.rule2_exponent,
        )
    elif args.command == "solve":
        report = commands.cmd_solve(args.input, _config(args), args.output, args.report)
    elif args.command == "exact":
        report = commands.cmd_exact(args.input, args.output, args.report)
    elif args.command == "compare":
        report = commands.cmd_compare(args.input, _config(args), args.trials)
    else:
        table, report = commands.cmd_bench(args.sizes, _config(args), d=args.d)
        sys.stdout.write(table.to_string(index=False) + "\n")
        if args.report:
            report.write(args.report)
        return 0

    sys.stdout.write(report.to_json().decode("utf-8") + "\n")
    if args.command == "compare" and not report.ok:
        raise QualityGateError(report.message)
    return 0 if report.ok else 4


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging()
    logger = logging.getLogger("geotransport.cli")
    try:
        return run(args)
    except (InstanceValidationError, OracleCapacityError, ValidationError) as e:
        logger.error("%s", e)
        return 2
    except QualityGateError as e:
        logger.error("Quality gate failed: %s", e)
        return 3
    except (GeoTransportError, AssertionError) as e:
        logger.exception("Internal failure: %s", e)
        return 4
    except ValueError as e:
        logger.error("Invalid argument: %s", e)
        return 2
    except OSError as e:
        logger.error("I/O error: %s", e)
        return 2


if __name__ == "__main__":
    sys.exit(main())
