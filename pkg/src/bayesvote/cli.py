"""Command-line entry point.

Exit codes: 0 success, 1 configuration error, 2 run hit the round cap without
consensus, 3 engine/oracle divergence.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import engine, oracle
from .config import ConfigError, load_config
from .engine import ConfigurationError, InconsistentHistoryError
from .harness import run_experiment, summary
from .signal_model import validate_model

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_UNCERTIFIED = 2
EXIT_DIVERGENCE = 3


def _workers(flag: int | None) -> int:
    if flag is not None:
        return flag
    env = os.environ.get("CONSENSUS_WORKERS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"CONSENSUS_WORKERS must be an integer, got {env!r}") from None
    return 1


def _load(path: str):
    if not Path(path).is_file():
        raise ConfigError(f"config file {path} does not exist")
    return load_config(path)


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    model = cfg.model()
    report = validate_model(model)
    if not report.ok:
        raise ConfigError("invalid model: " + "; ".join(report.violations), cfg.lines["model"])
    agents = cfg.agents()
    if len(agents) != 1:
        raise ConfigError("simulate takes a single agent count", cfg.lines["n"])
    rng = np.random.default_rng(cfg.seed(args.seed))
    result = engine.run_to_consensus(model, agents[0], cfg.max_rounds(args.max_rounds), rng,
                                     true_state=cfg.state())
    sys.stdout.write(engine.format_transcript(result))
    return EXIT_OK if result.converged else EXIT_UNCERTIFIED


def cmd_experiment(args) -> int:
    cfg = _load(args.config)
    config = cfg.experiment(seed=args.seed, max_rounds=args.max_rounds)
    out = args.out or cfg.values.get("out")
    if not out:
        raise ConfigError("no output directory: pass --out or set 'out' in the config")
    out = Path(out)
    targets = [out / "results.csv", out / "summary.json"]
    if not args.force and any(p.exists() for p in targets):
        raise ConfigError(f"{out} already holds results; pass --force to overwrite")
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"cannot write to {out}: {exc}") from None
    table = run_experiment(config, workers=_workers(args.workers))
    targets[0].write_text(table.to_csv())
    targets[1].write_text(json.dumps(summary(config, table), indent=2, sort_keys=True) + "\n")
    print(f"wrote {targets[0]} and {targets[1]}")
    return EXIT_OK


def cmd_verify(args) -> int:
    if args.instances <= 0:
        print("warning: zero instances requested; nothing verified", file=sys.stderr)
        return EXIT_OK
    diverged = []

    def emit(name, report):
        print(report.line(name), flush=True)
        if not report.match:
            diverged.append((name, report))

    oracle.fuzz(args.instances, args.seed, n=args.agents, max_atoms=args.atoms,
                horizon=args.horizon, on_report=emit)
    for name, report in diverged:
        vec, t, i = report.divergence
        print(f"divergence: instance={name} vector={''.join(map(str, vec))} round={t} agent={i}",
              file=sys.stderr)
    return EXIT_DIVERGENCE if diverged else EXIT_OK


def cmd_validate_model(args) -> int:
    cfg = _load(args.config)
    model = cfg.model()
    report = validate_model(model)
    print(f"model: {model.describe()}")
    if report.inverse_lr_mean == report.inverse_lr_mean:
        how = "exact" if report.inverse_lr_exact else "quadrature"
        print(f"E[exp(-X) | S=1] = {report.inverse_lr_mean!r} ({how})")
    for v in report.violations:
        print(f"violation: {v}")
    print("ok" if report.ok else f"{len(report.violations)} violation(s)")
    return EXIT_OK if report.ok else EXIT_CONFIG


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bayesvote",
                                     description="Repeated Bayesian voting simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation and print its transcript")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-rounds", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a Monte Carlo experiment")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--force", action="store_true")
    p.add_argument("--workers", type=int, help="worker processes (default $CONSENSUS_WORKERS or 1)")
    p.add_argument("--max-rounds", type=int)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("verify", help="check the engine against the brute-force oracle")
    p.add_argument("--config", help="unused; accepted for symmetry with other commands")
    p.add_argument("--instances", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--agents", type=int, default=3)
    p.add_argument("--atoms", type=int, default=4)
    p.add_argument("--horizon", type=int, default=5)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("validate-model", help="check a model's measure assumptions")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate_model)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ConfigurationError, oracle.BudgetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InconsistentHistoryError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
