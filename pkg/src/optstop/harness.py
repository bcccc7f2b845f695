"""Experiment runner: configuration, instrumented runs, cost and convergence
studies, and result emission.

A configuration file is INI text.  Every section describes one group of
experiments; a key holding a comma-separated list expands the group into
the Cartesian product of its values::

    [table]
    algorithm = tv_pseudo, tv_standard
    n = 2
    x0 = 90, 100, 110
    p = 5
    sigma_hat = 0.26
    m_offset = -0.105
    M = 200000
    M_eval = 200000
    seed = 0
"""

from __future__ import annotations

import configparser
import csv
import dataclasses
import itertools
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.stats

from .basis import HermiteBasis, basis_size
from .costs import CostCounters
from .market import MarketModel
from .oracle import TreeSpec, chain_dp, embed_chain_pricing, tree_price
from .regression import loglog_slope
from .sampling import FIXED_X0, MuParams, RngStream, simulate_paths
from .stopping import (ALGORITHMS, LS_PSEUDO, LS_STANDARD, TV_PSEUDO, TV_STANDARD, PriceEstimate,
                       evaluate_policy, ls_pseudo, ls_standard, price_at_origin, tv_pseudo,
                       tv_standard)

MAX_SEED = 2**64 - 1
PSEUDO_ALGORITHMS = (TV_PSEUDO, LS_PSEUDO)
# standard-regression counterpart of each pseudo algorithm
COUNTERPART = {TV_PSEUDO: TV_STANDARD, LS_PSEUDO: LS_STANDARD}


class ConfigError(ValueError):
    """Invalid experiment configuration."""


# --------------------------------------------------------------------------
# Configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ExperimentConfig:
    algorithm: str
    n: int
    x0: float
    p: int
    M: int
    M_eval: int
    sigma_hat: float
    m_offset: float
    seed: int
    J: int = 9
    T: float = 3.0
    r: float = 0.05
    delta: float = 0.1
    sigma: float = 0.2
    strike: float = 100.0
    reuse: bool | None = None
    clip: float | None = None
    name: str = ""

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {', '.join(ALGORITHMS)}, got {self.algorithm!r}")
        for key in ("n", "J", "M"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1, got {getattr(self, key)}")
        if self.p < 0:
            raise ConfigError(f"p must be >= 0, got {self.p}")
        if self.M_eval < 0:
            raise ConfigError(f"M_eval must be >= 0 (0 skips evaluation), got {self.M_eval}")
        if not 0 <= self.seed <= MAX_SEED:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.sigma_hat > 0:
            raise ConfigError(f"sigma_hat must be > 0, got {self.sigma_hat}")
        if self.clip is not None and not self.clip > 0:
            raise ConfigError(f"clip must be > 0, got {self.clip}")
        if self.algorithm not in PSEUDO_ALGORITHMS and (self.reuse or self.clip is not None):
            raise ConfigError(f"reuse and clip only apply to pseudo regression, not {self.algorithm}")
        if self.algorithm in (TV_STANDARD, LS_STANDARD) and self.M < self.K:
            raise ConfigError(f"standard regression needs M >= K, got M={self.M}, K={self.K}")
        try:
            self.model()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def K(self) -> int:
        return basis_size(self.n, self.p)

    def model(self) -> MarketModel:
        return MarketModel(self.n, self.r, self.delta, self.sigma, self.x0, self.T, self.J,
                           self.strike)

    def mu(self) -> MuParams:
        return MuParams.from_offset(self.x0, self.m_offset, self.sigma_hat, self.n)

    def basis(self) -> HermiteBasis:
        return HermiteBasis.total_degree(self.n, self.p, self.mu())

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["K"] = self.K
        return d


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_INT_KEYS = {"n", "p", "M", "M_eval", "seed", "J"}
_FLOAT_KEYS = {"x0", "sigma_hat", "m_offset", "T", "r", "delta", "sigma", "strike", "clip"}


def _parse_value(key: str, text: str):
    text = text.strip()
    try:
        if key in _INT_KEYS:
            value = float(text)
            if value != int(value):
                raise ValueError
            return int(value)
        if key in _FLOAT_KEYS:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as a number") from None
    if key == "reuse":
        low = text.lower()
        if low in ("auto", ""):
            return None
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"reuse: expected true, false or auto, got {text!r}")
    return text


def expand_grid(values: dict, name: str = "") -> list[ExperimentConfig]:
    """Expand list-valued entries of ``values`` into one config per combination."""
    unknown = sorted(set(values) - set(_FIELDS))
    if unknown:
        raise ConfigError(f"{name or 'config'}: unknown keys {unknown}")
    if "seed" not in values:
        raise ConfigError(f"{name or 'config'}: seed is required")
    keys = list(values)
    lists = [v if isinstance(v, list) else [v] for v in values.values()]
    configs = []
    for combo in itertools.product(*lists):
        d = dict(zip(keys, combo))
        d.setdefault("name", name)
        missing = [k for k, f in _FIELDS.items()
                   if k not in d and f.default is dataclasses.MISSING]
        if missing:
            raise ConfigError(f"{name or 'config'}: missing keys {missing}")
        configs.append(ExperimentConfig(**d))
    return configs


def load_configs(path, seed: int | None = None) -> list[ExperimentConfig]:
    """Read an INI file; ``seed`` (if given) overrides every section's seed."""
    path = Path(path)
    parser = configparser.ConfigParser()
    parser.optionxform = str  # keys are case sensitive (M vs m_offset)
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not parser.sections():
        raise ConfigError(f"{path}: no experiment sections")
    configs = []
    for section in parser.sections():
        values = {}
        for key, text in parser[section].items():
            parts = [_parse_value(key, t) for t in text.split(",")] if key in _FIELDS else [text]
            values[key] = parts if len(parts) > 1 else parts[0]
        if seed is not None:
            values["seed"] = seed
        configs.extend(expand_grid(values, section))
    return configs


# Sampling-measure choice per asset count for the maximum-call grid:
# n -> (p, sigma_hat, m_offset)
GRID_SETTINGS = {2: (5, 0.26, -0.105), 3: (5, 0.29, -0.105), 4: (5, 0.32, -0.179),
                 5: (4, 0.32, -0.21)}
GRID_X0 = (90.0, 100.0, 110.0)
PRESETS = ("table1", "table2", "desk")


def preset(name: str, seed: int = 0, M: int | None = None, M_eval: int | None = None
           ) -> list[ExperimentConfig]:
    """Named experiment grids.

    ``table1``: value recursion, n = 2..5, J = 9, M = M_eval = 2e6.
    ``table2``: cash-flow recursion, n = 4, J = 4, M = M_eval = 2e6.
    ``desk``: the ``table1`` grid at M = M_eval = 2e5.
    """
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    size = 200_000 if name == "desk" else 2_000_000
    M = size if M is None else M
    M_eval = size if M_eval is None else M_eval
    if name == "table2":
        cells = [(4, 4, x0) for x0 in GRID_X0]
        algorithms = (LS_PSEUDO, LS_STANDARD)
    else:
        cells = [(n, 9, x0) for n in sorted(GRID_SETTINGS) for x0 in GRID_X0]
        algorithms = (TV_PSEUDO, TV_STANDARD)
    configs = []
    for n, J, x0 in cells:
        p, sigma_hat, offset = GRID_SETTINGS[n]
        for algorithm in algorithms:
            configs.append(ExperimentConfig(algorithm=algorithm, n=n, x0=x0, p=p, M=M,
                                            M_eval=M_eval, sigma_hat=sigma_hat,
                                            m_offset=offset, seed=seed, J=J, name=name))
    return configs


# --------------------------------------------------------------------------
# Single runs
# --------------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    price: PriceEstimate | None
    v0_direct: float
    counters: CostCounters
    eval_counters: CostCounters
    policy: dict
    wall_time: dict = field(default_factory=dict)

    def record(self) -> dict:
        """Reproducible part of the result (everything except timings)."""
        return {
            "config": self.config.to_dict(),
            "price": None if self.price is None else dataclasses.asdict(self.price),
            "v0_direct": self.v0_direct,
            "counters": self.counters.as_dict(),
            "eval_counters": self.eval_counters.as_dict(),
            "policy": self.policy,
        }

    def record_bytes(self) -> bytes:
        return json.dumps(self.record(), sort_keys=True).encode()

    def to_dict(self) -> dict:
        d = self.record()
        d["wall_time"] = self.wall_time
        return d


def train_policy(config: ExperimentConfig, *, threads: int = 1, counters=None):
    """Fit the continuation functions for ``config`` (no evaluation)."""
    model, mu, basis = config.model(), config.mu(), config.basis()
    stream = RngStream(config.seed).child("train", config.algorithm)
    if config.algorithm in PSEUDO_ALGORITHMS:
        run = tv_pseudo if config.algorithm == TV_PSEUDO else ls_pseudo
        return run(model, mu, basis, basis.gram(), config.M, stream, reuse=config.reuse,
                   clip=config.clip, threads=threads, counters=counters)
    batch = simulate_paths(model, FIXED_X0, config.M, stream, threads=threads, counters=counters)
    run = tv_standard if config.algorithm == TV_STANDARD else ls_standard
    return run(batch, basis, model, threads=threads, counters=counters)


def run_experiment(config: ExperimentConfig, *, threads: int = 1) -> ExperimentResult:
    """Train, then (if ``M_eval`` > 0) price by stopping fresh paths.

    Evaluation paths depend only on the seed, so all algorithms in a cell are
    scored on the same paths.
    """
    counters, eval_counters = CostCounters(), CostCounters()
    model = config.model()
    t0 = time.perf_counter()
    policy = train_policy(config, threads=threads, counters=counters)
    t1 = time.perf_counter()
    price = None
    if config.M_eval > 0:
        price = evaluate_policy(policy, model, config.M_eval, RngStream(config.seed).child("eval"),
                                threads=threads, counters=eval_counters)
    t2 = time.perf_counter()
    return ExperimentResult(
        config=config,
        price=price,
        v0_direct=price_at_origin(policy, model),
        counters=counters,
        eval_counters=eval_counters,
        policy=policy.export(),
        wall_time={"train": t1 - t0, "evaluate": t2 - t1, "total": t2 - t0},
    )


def run_grid(configs, *, threads: int = 1, progress=None) -> list[ExperimentResult]:
    results = []
    for config in configs:
        result = run_experiment(config, threads=threads)
        if progress is not None:
            progress(result)
        results.append(result)
    return results


# --------------------------------------------------------------------------
# Cost scaling
# --------------------------------------------------------------------------

def cost_report(algorithms=(TV_STANDARD, TV_PSEUDO), *, n: int = 4, J: int = 9,
                p_grid=(2, 3, 4, 5), M_grid=(10_000, 20_000, 40_000), fixed_M: int = 40_000,
                fixed_p: int = 3, x0: float = 100.0, seed: int = 0, threads: int = 1) -> dict:
    """Training-stage counters over a K grid (fixed M) and an M grid (fixed K).

    Reports the log-log exponent of every counter against K and against M,
    along with the measured training times.
    """
    if len(p_grid) < 3 or len(M_grid) < 3:
        raise ConfigError("cost_report needs at least 3 grid points per axis")
    p_n, sigma_hat, offset = GRID_SETTINGS.get(n, (fixed_p, 0.32, -0.179))
    rows = []

    def run(algorithm, p, M, axis):
        config = ExperimentConfig(algorithm=algorithm, n=n, x0=x0, p=p, M=M, M_eval=0,
                                  sigma_hat=sigma_hat, m_offset=offset, seed=seed, J=J)
        counters = CostCounters()
        t0 = time.perf_counter()
        train_policy(config, threads=threads, counters=counters)
        rows.append({"algorithm": algorithm, "axis": axis, "p": p, "K": config.K, "M": M,
                     **counters.as_dict(), "total": counters.total(),
                     "seconds": time.perf_counter() - t0})

    for algorithm in algorithms:
        for p in p_grid:
            run(algorithm, p, fixed_M, "K")
        for M in M_grid:
            run(algorithm, fixed_p, M, "M")

    exponents = {}
    for algorithm in algorithms:
        exponents[algorithm] = {}
        for axis in ("K", "M"):
            sub = [row for row in rows if row["algorithm"] == algorithm and row["axis"] == axis]
            exponents[algorithm][axis] = {
                key: loglog_slope([row[axis] for row in sub], [row[key] for row in sub])
                for key in ("flops", "basis_evals", "sim_steps", "total")
                if all(row[key] > 0 for row in sub) and len({row[key] for row in sub}) > 1
            }
    return {"n": n, "J": J, "fixed_M": fixed_M, "fixed_p": fixed_p, "rows": rows,
            "exponents": exponents}


def training_time_ratio(standard: ExperimentConfig, pseudo: ExperimentConfig, *,
                        threads: int = 1) -> dict:
    """Wall time of standard over pseudo regression, training stage only."""
    times = {}
    for config in (pseudo, standard):
        t0 = time.perf_counter()
        train_policy(config, threads=threads)
        times[config.algorithm] = time.perf_counter() - t0
    return {"seconds": times, "ratio": times[standard.algorithm] / times[pseudo.algorithm]}


# --------------------------------------------------------------------------
# Convergence sweeps
# --------------------------------------------------------------------------

def convergence_sweep(estimate, reference: float, M_grid, replications: int = 20,
                      seed: int = 0, n_bootstrap: int = 2000) -> dict:
    """Absolute error of ``estimate(M, rep)`` against ``reference`` over an M grid.

    Each row holds the mean absolute error, the RMSE and a bootstrap 95%
    interval for the mean absolute error.  ``slope`` is the log-log fit of
    RMSE against M (None when some error is exactly zero).
    """
    if len(M_grid) < 2:
        raise ConfigError("convergence_sweep needs at least 2 values of M")
    rows = []
    for i, M in enumerate(M_grid):
        errors = np.array([abs(estimate(M, rep) - reference) for rep in range(replications)])
        mean = float(errors.mean())
        if replications > 1 and np.ptp(errors) > 0:
            boot = scipy.stats.bootstrap((errors,), np.mean, n_resamples=n_bootstrap,
                                         confidence_level=0.95, method="percentile",
                                         random_state=np.random.default_rng([seed, i]))
            low, high = float(boot.confidence_interval.low), float(boot.confidence_interval.high)
        else:
            low = high = mean
        rows.append({"M": int(M), "mean_abs_error": mean,
                     "rmse": float(math.sqrt(np.mean(errors**2))), "ci_low": low, "ci_high": high})
    rmse = [row["rmse"] for row in rows]
    slope = loglog_slope(M_grid, rmse) if all(e > 0 for e in rmse) else None
    return {"reference": reference, "replications": replications, "rows": rows, "slope": slope}


def tree_convergence(algorithm: str = TV_PSEUDO, M_grid=(10_000, 100_000, 1_000_000), *,
                     x0: float = 100.0, J: int = 9, p: int = 5, sigma_hat: float = 0.26,
                     m_offset: float = -0.105, M_eval: int = 200_000, replications: int = 5,
                     seed: int = 0, threads: int = 1) -> dict:
    """One-asset sweep of the evaluated price against the binomial tree.

    The direct estimate keeps a pointwise projection error at x0 that does
    not vanish with M, so the sweep scores the policy on fresh paths.
    """
    base = ExperimentConfig(algorithm=algorithm, n=1, x0=x0, p=p, M=1, M_eval=M_eval,
                            sigma_hat=sigma_hat, m_offset=m_offset, seed=seed, J=J)
    reference = tree_price(TreeSpec(base.model()))

    def estimate(M, rep):
        config = dataclasses.replace(base, M=int(M), seed=seed * 1_000_003 + rep)
        return run_experiment(config, threads=threads).price.value

    out = convergence_sweep(estimate, reference, M_grid, replications, seed)
    out["reference_kind"] = "binomial_tree"
    return out


def chain_convergence(chain, algorithm: str = TV_PSEUDO, M_grid=(1_000, 10_000, 100_000), *,
                      replications: int = 20, seed: int = 0) -> dict:
    """Sweep of the chain value at the start state against exact dynamic programming."""
    reference = chain_dp(chain).value
    out = convergence_sweep(
        lambda M, rep: embed_chain_pricing(chain, algorithm, int(M), seed * 1_000_003 + rep).v0,
        reference, M_grid, replications, seed)
    out["reference_kind"] = "chain_dp"
    out["chain"] = chain.name
    return out


# --------------------------------------------------------------------------
# Output
# --------------------------------------------------------------------------

TABLE_COLUMNS = ("x0", "pr_value", "pr_se", "sr_value", "sr_se", "n", "J", "p", "K", "sigma_hat",
                 "m_offset", "M", "M_eval", "pr_algorithm", "sr_algorithm")
_TABLE_FLOATS = {"x0", "pr_value", "pr_se", "sr_value", "sr_se", "sigma_hat", "m_offset"}
_TABLE_INTS = {"n", "J", "p", "K", "M", "M_eval"}


def _cell_key(config: ExperimentConfig):
    return (config.n, config.J, config.p, config.sigma_hat, config.m_offset, config.M,
            config.M_eval, config.x0)


def table_rows(results) -> list[dict]:
    """One row per cell pairing a pseudo run with its standard counterpart.

    A cell's value is the evaluated price when available, else the direct
    estimate; the SE is empty in the latter case.
    """
    cells: dict = {}
    for res in results:
        cells.setdefault(_cell_key(res.config), {})[res.config.algorithm] = res
    rows = []
    for key, runs in cells.items():
        c = next(iter(runs.values())).config
        row = {"x0": c.x0, "n": c.n, "J": c.J, "p": c.p, "K": c.K, "sigma_hat": c.sigma_hat,
               "m_offset": c.m_offset, "M": c.M, "M_eval": c.M_eval}
        pr = next((runs[a] for a in PSEUDO_ALGORITHMS if a in runs), None)
        sr = next((runs[COUNTERPART[a]] for a in PSEUDO_ALGORITHMS if COUNTERPART[a] in runs), None)
        for prefix, res in (("pr", pr), ("sr", sr)):
            if res is None:
                row.update({f"{prefix}_value": None, f"{prefix}_se": None, f"{prefix}_algorithm": ""})
                continue
            row[f"{prefix}_algorithm"] = res.config.algorithm
            row[f"{prefix}_value"] = res.price.value if res.price else res.v0_direct
            row[f"{prefix}_se"] = res.price.std_error if res.price else None
        rows.append(row)
    return rows


def write_table(rows, path) -> None:
    """Comma-separated table; floats use repr so parsing recovers them exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if row.get(k) is None else repr(row[k]) if isinstance(row[k], float)
                             else row[k] for k in TABLE_COLUMNS})


def read_table(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = []
        for raw in csv.DictReader(fh):
            row = {}
            for k, v in raw.items():
                if v == "":
                    row[k] = None if k in _TABLE_FLOATS else v
                elif k in _TABLE_FLOATS:
                    row[k] = float(v)
                elif k in _TABLE_INTS:
                    row[k] = int(v)
                else:
                    row[k] = v
            rows.append(row)
        return rows


def _plt():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def plot_timings(results, path) -> None:
    """Training wall time per cell, pseudo against standard regression."""
    plt = _plt()
    rows = {}
    for res in results:
        c = res.config
        label = f"n={c.n} x0={c.x0:g}"
        rows.setdefault(label, {})[c.algorithm] = res.wall_time.get("train", float("nan"))
    labels = list(rows)
    algorithms = sorted({a for r in rows.values() for a in r})
    width = 0.8 / max(len(algorithms), 1)
    fig, ax = plt.subplots(figsize=(max(6, 0.7 * len(labels) + 2), 4))
    for i, algorithm in enumerate(algorithms):
        xs = np.arange(len(labels)) + i * width
        ax.bar(xs, [rows[l].get(algorithm, 0.0) for l in labels], width, label=algorithm)
    ax.set_xticks(np.arange(len(labels)) + 0.4 - width / 2)
    ax.set_xticklabels(labels, rotation=45, ha="right")
    ax.set_ylabel("training time [s]")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_convergence(sweeps: dict, path) -> None:
    """Mean absolute error against M on log axes, one line per sweep."""
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, sweep in sweeps.items():
        Ms = [row["M"] for row in sweep["rows"]]
        means = np.array([row["mean_abs_error"] for row in sweep["rows"]])
        lo = means - np.array([row["ci_low"] for row in sweep["rows"]])
        hi = np.array([row["ci_high"] for row in sweep["rows"]]) - means
        ax.errorbar(Ms, means, yerr=[lo, hi], marker="o", capsize=3, label=label)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("M")
    ax.set_ylabel("absolute error")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def _record_name(config: ExperimentConfig) -> str:
    return f"{config.algorithm}_n{config.n}_J{config.J}_p{config.p}_x{config.x0:g}_M{config.M}_s{config.seed}"


def emit_outputs(results, out_dir, sweeps: dict | None = None) -> dict:
    """Write one JSON record per run, ``table.csv`` and charts.

    Returns the written paths.  An empty result set yields a header-only
    table and no charts.
    """
    out = Path(out_dir)
    try:
        (out / "records").mkdir(parents=True, exist_ok=True)
        written = {"records": [], "table": out / "table.csv", "charts": []}
        for res in results:
            path = out / "records" / f"{_record_name(res.config)}.json"
            path.write_text(json.dumps(res.to_dict(), sort_keys=True, indent=1) + "\n")
            written["records"].append(path)
        write_table(table_rows(results), written["table"])
        if results:
            written["charts"].append(out / "timings.png")
            plot_timings(results, written["charts"][-1])
        if sweeps:
            written["charts"].append(out / "convergence.png")
            plot_convergence(sweeps, written["charts"][-1])
    except OSError as exc:
        raise OSError(f"cannot write outputs under {out}: {exc}") from exc
    return written
