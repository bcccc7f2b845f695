import json

import pytest

from optstop.cli import main

INI = """
[cell]
algorithm = tv_pseudo, tv_standard
n = 2
x0 = 100
p = 2
M = 3000
M_eval = 1000
sigma_hat = 0.26
m_offset = -0.105
seed = 1
J = 3
"""


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_price_writes_outputs(tmp_path, capsys):
    cfg = tmp_path / "e.ini"
    cfg.write_text(INI)
    code, out, _ = run(capsys, "price", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0
    records = json.loads(out)
    assert [r["config"]["algorithm"] for r in records] == ["tv_pseudo", "tv_standard"]
    assert (tmp_path / "o" / "table.csv").exists()
    assert len(list((tmp_path / "o" / "records").glob("*.json"))) == 2


def test_price_seed_override_changes_result(tmp_path, capsys):
    cfg = tmp_path / "e.ini"
    cfg.write_text(INI)
    def prices(*extra):
        _, out, _ = run(capsys, "price", "--config", str(cfg), *extra)
        return [r["price"] for r in json.loads(out)]

    a, b, c = prices(), prices("--seed", "2"), prices()
    assert a == c and a != b


def test_table_from_config(tmp_path, capsys):
    cfg = tmp_path / "e.ini"
    cfg.write_text(INI)
    code, out, err = run(capsys, "table", "--config", str(cfg))
    assert code == 0
    row, = json.loads(out)
    assert row["pr_algorithm"] == "tv_pseudo" and row["sr_algorithm"] == "tv_standard"
    assert len(err.strip().splitlines()) == 2  # one progress line per run


def test_cost_with_section(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[cost]\nn = 2\nJ = 2\np_grid = 1,2,3\nM_grid = 1000,2000,4000\n"
                   "fixed_M = 2000\nfixed_p = 2\n")
    code, out, _ = run(capsys, "cost", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0 and (tmp_path / "o" / "cost.json").exists()
    assert set(json.loads(out)["exponents"]) == {"tv_standard", "tv_pseudo"}


def test_converge_chain(tmp_path, capsys):
    cfg = tmp_path / "v.ini"
    cfg.write_text("[converge]\nreference = chain\nchain = random_three\nM_grid = 300,3000\n"
                   "replications = 3\n")
    code, out, _ = run(capsys, "converge", "--config", str(cfg), "--out", str(tmp_path / "o"))
    assert code == 0 and json.loads(out)["reference_kind"] == "chain_dp"
    assert (tmp_path / "o" / "convergence.png").exists()


@pytest.mark.parametrize("argv", [
    ["price"],
    ["price", "--config", "/nonexistent.ini"],
    ["cost", "--config", "/nonexistent.ini"],
])
def test_errors_exit_two_with_json(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 2
    assert "message" in json.loads(err.strip().splitlines()[-1])


@pytest.mark.parametrize("argv", [
    ["bogus"],
    ["price", "--seed", "-1"],
    ["price", "--seed", str(2**64)],
    ["table", "--threads", "0"],
    ["table", "--preset", "nope"],
])
def test_usage_errors(capsys, argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
    assert json.loads(capsys.readouterr().err)["error"] == "UsageError"


def test_bad_config_value_reports_json(tmp_path, capsys):
    cfg = tmp_path / "e.ini"
    cfg.write_text(INI.replace("M = 3000", "M = lots"))
    code, _, err = run(capsys, "price", "--config", str(cfg))
    assert code == 2 and json.loads(err)["error"] == "ConfigError"


@pytest.mark.slow
def test_verify_passes(capsys):
    code, out, _ = run(capsys, "verify")
    report = json.loads(out)
    assert code == 0 and report["passed"]
    assert any(c["check"].startswith("tree:") for c in report["checks"])
