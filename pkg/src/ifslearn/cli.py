"""Command-line entry point: ``ifslearn {copula,mixing,learn,bounds,all}``.

Exit codes: 0 when every check passes, 1 when a validation or bound check
fails, 2 on I/O or configuration errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from pydantic import ValidationError as PydanticValidationError

from .config import ConfigError, ExperimentConfig, default_config, load_config
from .copula_core import ConvergenceError, ValidationError
from .pipeline import (
    CopulaResult,
    LearnResult,
    MixingResult,
    Outputs,
    build_context,
    new_manifest,
    run_bounds,
    run_copula,
    run_learn,
    run_mixing,
)

log = logging.getLogger("ifslearn")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2


@dataclass
class RunResult:
    passed: bool
    out_dir: Path
    copula: CopulaResult | None = None
    mixing: MixingResult | None = None
    learn: LearnResult | None = None
    bounds: dict | None = None
    stages: dict = field(default_factory=dict)


def _finish(out: Outputs, res: RunResult) -> RunResult:
    m = out.manifest
    m.finished_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
    m.passed = res.passed
    if res.learn is not None:
        m.replicate_seeds = [r.seed for r in res.learn.replicates]
    m.write(out.dir)
    return res


def _start(cfg: ExperimentConfig, out_dir: Path, command: str) -> Outputs:
    out_dir.mkdir(parents=True, exist_ok=True)
    return Outputs(out_dir, new_manifest(cfg, command))


def cmd_copula(cfg: ExperimentConfig, out_dir: Path) -> RunResult:
    out = _start(cfg, out_dir, "copula")
    c = run_copula(cfg, cfg.transformation_matrix(), out)
    return _finish(out, RunResult(c.passed, out_dir, copula=c, stages={"copula": c.passed}))


def cmd_mixing(cfg: ExperimentConfig, out_dir: Path) -> RunResult:
    from .copula_core import build_ifs

    out = _start(cfg, out_dir, "mixing")
    m = run_mixing(cfg, build_ifs(cfg.transformation_matrix()), out)
    return _finish(out, RunResult(m.passed, out_dir, mixing=m, stages={"mixing": m.passed}))


def cmd_learn(cfg: ExperimentConfig, out_dir: Path) -> RunResult:
    out = _start(cfg, out_dir, "learn")
    lr = run_learn(build_context(cfg, cfg.transformation_matrix()), out)
    return _finish(out, RunResult(lr.passed, out_dir, learn=lr, stages={"learn": lr.passed}))


def cmd_bounds(cfg: ExperimentConfig, out_dir: Path) -> RunResult:
    """Runs mixing and learning in memory, then writes only the bound report."""
    if cfg.replicates < 30:
        raise ConfigError(f"bound validation needs at least 30 replicates, got {cfg.replicates}")
    out = _start(cfg, out_dir, "bounds")
    ctx = build_context(cfg, cfg.transformation_matrix())
    m = run_mixing(cfg, ctx.ifs)
    lr = run_learn(ctx)
    b = run_bounds(lr, m, out)
    return _finish(out, RunResult(bool(b["passed"]), out_dir, mixing=m, learn=lr, bounds=b, stages={"bounds": bool(b["passed"])}))


def cmd_all(cfg: ExperimentConfig, out_dir: Path) -> RunResult:
    out = _start(cfg, out_dir, "all")
    U = cfg.transformation_matrix()
    c = run_copula(cfg, U, out)
    ctx = build_context(cfg, U)
    m = run_mixing(cfg, ctx.ifs, out)
    lr = run_learn(ctx, out)
    stages = {"copula": c.passed, "mixing": m.passed, "learn": lr.passed}
    b = None
    if cfg.replicates >= 30:
        b = run_bounds(lr, m, out)
        stages["bounds"] = bool(b["passed"])
    else:
        log.warning("bounds stage skipped: %d replicates (< 30)", cfg.replicates)
        stages["bounds"] = False
    res = RunResult(all(stages.values()), out_dir, c, m, lr, b, stages)
    return _finish(out, res)


COMMANDS = {"copula": cmd_copula, "mixing": cmd_mixing, "learn": cmd_learn, "bounds": cmd_bounds, "all": cmd_all}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment config (unknown keys are rejected)")
    common.add_argument("--seed", type=int, help="master seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--replicates", type=int, help="number of MC-SGD replicates (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="ifslearn", description="Copula-driven Markov-chain SGD experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        sub.add_parser(name, parents=[common], help=(fn.__doc__ or name).splitlines()[0])
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else default_config()
    try:
        return cfg.with_overrides(seed=args.seed, replicates=args.replicates, out=str(args.out) if args.out else None)
    except PydanticValidationError as exc:
        raise ConfigError(str(exc)) from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        res = COMMANDS[args.command](cfg, Path(cfg.out))
    except (ConfigError, PydanticValidationError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        where = f" ({exc.filename})" if getattr(exc, "filename", None) else ""
        print(f"error: {exc.strerror or exc}{where}", file=sys.stderr)
        return EXIT_ERROR
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for stage, ok in res.stages.items():
        print(f"{stage}: {'PASS' if ok else 'FAIL'}")
    print(f"outputs: {res.out_dir}")
    return EXIT_OK if res.passed else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
