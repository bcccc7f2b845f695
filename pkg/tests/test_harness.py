import dataclasses

import numpy as np
import pytest

from optstop import harness
from optstop.harness import ConfigError, ExperimentConfig
from optstop.oracle import fixture_chains


def small(algorithm="tv_pseudo", **kw):
    base = dict(algorithm=algorithm, n=2, x0=100.0, p=2, M=4000, M_eval=2000, sigma_hat=0.26,
                m_offset=-0.105, seed=3, J=3)
    base.update(kw)
    return ExperimentConfig(**base)


INI = """
[grid]
algorithm = tv_pseudo, tv_standard
n = 2
x0 = 90, 110
p = 2
M = 4e3
M_eval = 1000
sigma_hat = 0.26
m_offset = -0.105
seed = 5
J = 3
"""


def test_load_configs_expands_lists(tmp_path):
    path = tmp_path / "e.ini"
    path.write_text(INI)
    configs = harness.load_configs(path)
    assert len(configs) == 4
    assert {(c.algorithm, c.x0) for c in configs} == {
        (a, x) for a in ("tv_pseudo", "tv_standard") for x in (90.0, 110.0)}
    assert all(c.M == 4000 and c.seed == 5 and c.name == "grid" for c in configs)
    assert all(c.seed == 9 for c in harness.load_configs(path, seed=9))


@pytest.mark.parametrize("edit, message", [
    (("seed = 5\n", ""), "seed is required"),
    (("J = 3\n", "J = 3\nbogus = 1\n"), "unknown keys"),
    (("p = 2\n", ""), "missing keys"),
    (("M = 4e3", "M = 4.5"), "cannot parse"),
    (("seed = 5", "seed = -1"), "unsigned 64-bit"),
    (("algorithm = tv_pseudo, tv_standard", "algorithm = other"), "algorithm must be"),
    (("M = 4e3", "M = 3"), "M >= K"),
    (("J = 3", "J = 3\nreuse = true"), "reuse and clip"),
    (("J = 3", "J = 3\nreuse = maybe"), "reuse"),
])
def test_config_errors(tmp_path, edit, message):
    path = tmp_path / "e.ini"
    path.write_text(INI.replace(*edit))
    with pytest.raises(ConfigError, match=message):
        harness.load_configs(path)


def test_missing_or_empty_config_file(tmp_path):
    with pytest.raises(ConfigError):
        harness.load_configs(tmp_path / "nope.ini")
    empty = tmp_path / "empty.ini"
    empty.write_text("")
    with pytest.raises(ConfigError):
        harness.load_configs(empty)


def test_seed_bounds():
    assert small(seed=2**64 - 1).seed == 2**64 - 1
    with pytest.raises(ConfigError):
        small(seed=2**64)


def test_presets():
    t1 = harness.preset("table1")
    assert len(t1) == 24 and len({(c.n, c.x0) for c in t1}) == 12
    assert all(c.M == c.M_eval == 2_000_000 for c in t1)
    desk = harness.preset("desk", seed=4)
    assert len(desk) == 24 and all(c.M == 200_000 and c.seed == 4 for c in desk)
    t2 = harness.preset("table2", M=1000, M_eval=0)
    assert {c.algorithm for c in t2} == {"ls_pseudo", "ls_standard"}
    assert all(c.n == 4 and c.J == 4 and c.M == 1000 for c in t2)
    assert {c.n: (c.p, c.sigma_hat, c.m_offset) for c in t1} == harness.GRID_SETTINGS
    with pytest.raises(ConfigError):
        harness.preset("nope")


@pytest.mark.parametrize("algorithm", harness.ALGORITHMS)
def test_records_reproducible_bytes(algorithm):
    config = small(algorithm)
    a, b = harness.run_experiment(config), harness.run_experiment(config)
    assert a.record_bytes() == b.record_bytes()
    assert "wall_time" not in a.record() and "wall_time" in a.to_dict()


@pytest.mark.parametrize("algorithm", harness.ALGORITHMS)
def test_counters_independent_of_threads(algorithm):
    config = small(algorithm, M=70_000, M_eval=0)
    one = harness.run_experiment(config, threads=1)
    four = harness.run_experiment(config, threads=4)
    assert one.counters.as_dict() == four.counters.as_dict()
    assert one.record_bytes() == four.record_bytes()


def test_zero_evaluation_paths_reports_direct_value_only(tmp_path):
    result = harness.run_experiment(small(M_eval=0))
    assert result.price is None and np.isfinite(result.v0_direct)
    row, = harness.table_rows([result])
    assert row["pr_value"] == result.v0_direct and row["pr_se"] is None
    harness.write_table([row], tmp_path / "t.csv")
    back, = harness.read_table(tmp_path / "t.csv")
    assert back["pr_se"] is None and back["pr_value"] == result.v0_direct


def test_table_round_trip(tmp_path):
    results = harness.run_grid([small("tv_pseudo"), small("tv_standard"),
                                small("tv_pseudo", x0=110.0)])
    rows = harness.table_rows(results)
    assert len(rows) == 2
    full = next(r for r in rows if r["x0"] == 100.0)
    assert full["pr_algorithm"] == "tv_pseudo" and full["sr_algorithm"] == "tv_standard"
    lone = next(r for r in rows if r["x0"] == 110.0)
    assert lone["sr_value"] is None and lone["sr_algorithm"] == ""
    path = tmp_path / "t.csv"
    harness.write_table(rows, path)
    back = harness.read_table(path)
    for a, b in zip(rows, back):
        assert {k: a[k] for k in harness.TABLE_COLUMNS} == {k: b[k] for k in harness.TABLE_COLUMNS}


def test_emit_outputs(tmp_path):
    results = harness.run_grid([small("tv_pseudo"), small("tv_standard")])
    written = harness.emit_outputs(results, tmp_path / "out")
    assert len(written["records"]) == 2 and all(p.exists() for p in written["records"])
    assert (tmp_path / "out" / "timings.png").stat().st_size > 0
    assert len(harness.read_table(written["table"])) == 1


def test_single_run_gives_one_row(tmp_path):
    written = harness.emit_outputs([harness.run_experiment(small())], tmp_path)
    assert len(harness.read_table(written["table"])) == 1


def test_empty_results_give_header_only(tmp_path):
    written = harness.emit_outputs([], tmp_path)
    assert written["table"].read_text().strip() == ",".join(harness.TABLE_COLUMNS)
    assert written["charts"] == [] and not (tmp_path / "timings.png").exists()


def test_emit_outputs_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        harness.emit_outputs([], blocker / "sub")


def test_cost_report_needs_three_points():
    with pytest.raises(ConfigError):
        harness.cost_report(p_grid=(2, 3))
    with pytest.raises(ConfigError):
        harness.cost_report(M_grid=(1000, 2000))


def test_cost_report_small_grid():
    report = harness.cost_report(n=2, J=3, p_grid=(2, 3, 4), M_grid=(2000, 4000, 8000),
                                 fixed_M=4000, fixed_p=2)
    assert len(report["rows"]) == 12
    for algorithm in ("tv_standard", "tv_pseudo"):
        assert report["exponents"][algorithm]["M"]["flops"] == pytest.approx(1.0, abs=0.05)


def test_training_time_ratio_keys():
    out = harness.training_time_ratio(small("tv_standard", M_eval=0), small("tv_pseudo", M_eval=0))
    assert set(out["seconds"]) == {"tv_standard", "tv_pseudo"} and out["ratio"] > 0


def test_convergence_sweep_exact_problem_has_zero_error():
    chain = next(c for c in fixture_chains() if c.s == 1)
    sweep = harness.chain_convergence(chain, M_grid=(100, 1000), replications=3)
    assert all(row["rmse"] == 0.0 for row in sweep["rows"]) and sweep["slope"] is None


def test_convergence_sweep_needs_two_points():
    with pytest.raises(ConfigError):
        harness.convergence_sweep(lambda M, rep: 0.0, 0.0, [100])


def test_chain_convergence_rate():
    chain = next(c for c in fixture_chains() if c.name == "random_three")
    sweep = harness.chain_convergence(chain, M_grid=(1_000, 10_000, 100_000), replications=20)
    assert sweep["slope"] == pytest.approx(-0.5, abs=0.15)
    for row in sweep["rows"]:
        assert row["ci_low"] <= row["mean_abs_error"] <= row["ci_high"]


def test_tree_convergence_error_drops():
    sweep = harness.tree_convergence(M_grid=(10_000, 1_000_000), replications=2, M_eval=200_000)
    assert sweep["rows"][1]["mean_abs_error"] < sweep["rows"][0]["mean_abs_error"]
    assert sweep["reference_kind"] == "binomial_tree"


def test_config_dict_round_trip():
    config = small(clip=5.0, reuse=False)
    d = config.to_dict()
    assert d.pop("K") == config.K
    assert ExperimentConfig(**d) == config
    assert dataclasses.replace(config, seed=1).seed == 1
