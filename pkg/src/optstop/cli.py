"""Command line entry point: ``optstop {price,table,cost,converge,verify}``.

Results go to stdout as JSON; with ``--out`` records, a table and charts
are written as well.  Failures exit nonzero with a JSON error on stderr.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from pathlib import Path

import numpy as np

from . import harness
from .market import MarketModel
from .oracle import TreeSpec, chain_dp, embed_chain_pricing, fixture_chains, load_chain, tree_price
from .stopping import LS_PSEUDO, TV_PSEUDO

EXIT_FAILURE = 1  # verification found a mismatch
EXIT_ERROR = 2  # bad input or runtime error


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value <= harness.MAX_SEED:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got {text}")
    return value


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": "UsageError", "message": message}), file=sys.stderr)
        sys.exit(EXIT_ERROR)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="optstop", description=__doc__.splitlines()[0])
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment file")
    common.add_argument("--seed", type=_seed, help="seed override (unsigned 64-bit)")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--threads", type=_positive, default=1, help="worker threads")
    common.add_argument("--preset", choices=harness.PRESETS, help="named experiment grid")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("price", parents=[common], help="run every experiment in a config")
    table = sub.add_parser("table", parents=[common], help="reproduce a price table")
    table.add_argument("--M", type=_positive, help="training sample size override")
    table.add_argument("--M-eval", dest="M_eval", type=int, help="evaluation paths override")

    sub.add_parser("cost", parents=[common], help="operation-count scaling study")
    sub.add_parser("converge", parents=[common], help="convergence sweep against an oracle")
    sub.add_parser("verify", parents=[common], help="run the oracle suite")
    return parser


def _summary(result: harness.ExperimentResult) -> dict:
    c = result.config
    return {
        "algorithm": c.algorithm, "n": c.n, "J": c.J, "x0": c.x0, "K": c.K, "M": c.M,
        "price": None if result.price is None else result.price.value,
        "se": None if result.price is None else result.price.std_error,
        "v0_direct": result.v0_direct, "train_seconds": result.wall_time["train"],
    }


def _progress(result):
    print(json.dumps(_summary(result)), file=sys.stderr, flush=True)


def cmd_price(args) -> int:
    if args.config is None and args.preset is None:
        raise harness.ConfigError("price needs --config or --preset")
    configs = (harness.load_configs(args.config, args.seed) if args.config
               else harness.preset(args.preset, seed=args.seed or 0))
    results = harness.run_grid(configs, threads=args.threads)
    if args.out:
        harness.emit_outputs(results, args.out)
    print(json.dumps([r.to_dict() for r in results], sort_keys=True, indent=1))
    return 0


def cmd_table(args) -> int:
    if args.config is not None:
        configs = harness.load_configs(args.config, args.seed)
    else:
        configs = harness.preset(args.preset or "desk", seed=args.seed or 0, M=args.M,
                                 M_eval=args.M_eval)
    results = harness.run_grid(configs, threads=args.threads, progress=_progress)
    if args.out:
        harness.emit_outputs(results, args.out)
    print(json.dumps(harness.table_rows(results), indent=1))
    return 0


def _section(args, name: str) -> dict:
    if args.config is None:
        return {}
    parser = configparser.ConfigParser()
    parser.optionxform = str
    if not parser.read(args.config):
        raise harness.ConfigError(f"{args.config}: cannot read config")
    return dict(parser[name]) if parser.has_section(name) else {}


def _ints(text: str) -> tuple:
    return tuple(int(float(t)) for t in text.split(","))


def cmd_cost(args) -> int:
    """Optional ``[cost]`` section keys: algorithms, n, J, p_grid, M_grid, fixed_M, fixed_p."""
    sec = _section(args, "cost")
    kwargs = {"seed": args.seed or 0, "threads": args.threads}
    if "algorithms" in sec:
        kwargs["algorithms"] = tuple(a.strip() for a in sec["algorithms"].split(","))
    for key in ("n", "J", "fixed_M", "fixed_p"):
        if key in sec:
            kwargs[key] = int(float(sec[key]))
    for key in ("p_grid", "M_grid"):
        if key in sec:
            kwargs[key] = _ints(sec[key])
    report = harness.cost_report(**kwargs)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "cost.json").write_text(json.dumps(report, sort_keys=True, indent=1) + "\n")
    print(json.dumps(report, sort_keys=True, indent=1))
    return 0


def cmd_converge(args) -> int:
    """Optional ``[converge]`` keys: reference (tree or chain), chain (fixture name or
    path), algorithm, M_grid, replications, x0, p."""
    sec = _section(args, "converge")
    seed = args.seed or 0
    algorithm = sec.get("algorithm", TV_PSEUDO).strip()
    replications = int(sec.get("replications", 5))
    if sec.get("reference", "tree").strip() == "chain":
        name = sec.get("chain", "random_three").strip()
        chains = {c.name: c for c in fixture_chains()}
        chain = chains[name] if name in chains else load_chain(name)
        grid = _ints(sec.get("M_grid", "1000,10000,100000"))
        sweep = harness.chain_convergence(chain, algorithm, grid, replications=replications,
                                          seed=seed)
    else:
        grid = _ints(sec.get("M_grid", "10000,100000,1000000"))
        sweep = harness.tree_convergence(algorithm, grid, x0=float(sec.get("x0", 100.0)),
                                         p=int(sec.get("p", 5)), replications=replications,
                                         seed=seed, threads=args.threads)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "convergence.json").write_text(json.dumps(sweep, sort_keys=True, indent=1) + "\n")
        harness.plot_convergence({algorithm: sweep}, args.out / "convergence.png")
    print(json.dumps(sweep, sort_keys=True, indent=1))
    return 0


def cmd_verify(args) -> int:
    """Fixture chains against exact dynamic programming, one asset against the tree."""
    seed = args.seed or 0
    checks = []
    for chain in fixture_chains():
        exact = chain_dp(chain)
        M = 100_000 - 100_000 % chain.s
        for algorithm in (TV_PSEUDO, LS_PSEUDO):
            report = embed_chain_pricing(chain, algorithm, M, seed)
            checks.append({"check": f"chain:{chain.name}:{algorithm}", "exact": exact.value,
                           "estimate": report.v0, "max_error": float(report.errors.max()),
                           "passed": bool(report.within.all())})
    model = MarketModel(n=1, r=0.05, delta=0.1, sigma=0.2, x0=100.0, T=3.0, J=9,
                        strike=100.0)
    reference = tree_price(TreeSpec(model))
    for algorithm in (TV_PSEUDO, LS_PSEUDO):
        config = harness.ExperimentConfig(algorithm=algorithm, n=1, x0=100.0, p=5, M=500_000,
                                          M_eval=500_000, sigma_hat=0.26, m_offset=-0.105,
                                          seed=seed)
        result = harness.run_experiment(config, threads=args.threads)
        tol = max(0.05, 4 * result.price.std_error)
        checks.append({"check": f"tree:{algorithm}", "exact": reference,
                       "estimate": result.price.value, "tolerance": tol,
                       "passed": bool(abs(result.price.value - reference) <= tol)})
    ok = all(c["passed"] for c in checks)
    print(json.dumps({"passed": ok, "checks": checks}, indent=1))
    return 0 if ok else EXIT_FAILURE


COMMANDS = {"price": cmd_price, "table": cmd_table, "cost": cmd_cost,
            "converge": cmd_converge, "verify": cmd_verify}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, OSError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
