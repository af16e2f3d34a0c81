"""Config parsing, report emission, and the four CLI commands."""

import csv

import numpy as np
import pytest

import lcb.cli as cli
import lcb.config as config
import lcb.report as report
from lcb.montecarlo import Verdict
from lcb.paths import Path


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


BASE = """
[mechanism]
kind = "stable"

[sim]
dt = 0.01
t_max = 0.5
n_paths = 1000
seed = 3

[run]
command = "{command}"
out = "{out}"
"""


# ---------------------------------------------------------------------------
# config


def test_load_config_roundtrip(tmp_path):
    p = write(tmp_path, "a.toml", BASE.format(command="inspect", out=tmp_path / "o"))
    spec = config.load_config(p)
    assert spec.mechanism.closed_form[0] == "stable"
    assert spec.sim.n_paths == 1000 and spec.sim.seed == 3
    assert spec.run.command == "inspect"
    assert len(spec.config_hash) == 16


def test_config_hash_tracks_bytes(tmp_path):
    p1 = write(tmp_path, "a.toml", BASE.format(command="inspect", out="o"))
    p2 = write(tmp_path, "b.toml", BASE.format(command="inspect", out="o") + "\n# comment\n")
    assert config.load_config(p1).config_hash != config.load_config(p2).config_hash


@pytest.mark.parametrize(
    "snippet,msg",
    [
        ("[mechanism]\nkind = 'hyper'\n[run]\ncommand = 'inspect'", "unknown mechanism"),
        ("[mechanism]\nkind = 'stable'\nfoo = 1\n[run]\ncommand = 'inspect'", "unknown keys"),
        ("[mechanism]\nkind = 'stable'\n[sim]\nstep = 0.1\n[run]\ncommand = 'inspect'",
         "unknown keys"),
        ("[mechanism]\nkind = 'stable'\n[run]\ncommand = 'fly'", "unknown command"),
        ("[mechanism]\nkind = 'stable'\n[run]\ncommand = 'verify'\nchecks = []", "not be empty"),
        ("[mechanism]\nkind = 'stable'\n[run]\ncommand = 'verify'\nchecks = ['nope']",
         "unknown checks"),
        ("[mechanism]\nkind = 'stable'\n[run]\ncommand = 'simulate'\nsimulator = 'xyz'",
         "unknown simulator"),
        ("[mechanism]\nkind = 'stable'\n[extra]\nx = 1\n[run]\ncommand = 'inspect'",
         "unknown keys"),
        ("[run]\ncommand = 'inspect'", "needs"),
    ],
)
def test_load_config_rejects(tmp_path, snippet, msg):
    p = write(tmp_path, "bad.toml", snippet)
    with pytest.raises(ValueError, match=msg):
        config.load_config(p)


def test_mechanism_from_dict_variants():
    for kind in ("stable", "neveu", "feller", "slow-log"):
        mech = config.mechanism_from_dict({"kind": kind})
        assert mech.x0 == 1.0
    mech = config.mechanism_from_dict({"kind": "feller", "gamma": -0.5, "c": 0.0})
    assert mech.gamma == -0.5 and mech.c == 0.0
    with pytest.raises(ValueError, match="kind"):
        config.mechanism_from_dict({})


def test_default_infimum_levels_scale_with_start(tmp_path):
    p = write(tmp_path, "a.toml", BASE.format(command="verify", out="o") + "z0 = 2.0\n")
    spec = config.load_config(p)
    assert spec.run.a_list == tuple(2.0 * f for f in (0.4, 0.55, 0.7, 0.85, 0.95))


# ---------------------------------------------------------------------------
# report emission


def _fake_verdicts():
    return [
        Verdict("check-a", 1.0, 1.01, True, 0.5, "fine"),
        Verdict("check-b", 0.2, 0.9, False, 7.1, "broken",
                subresults=[Verdict("sub", 0.2, 0.9, False, 7.1)]),
    ]


def test_verdicts_csv_roundtrip(tmp_path):
    out = tmp_path / "v.csv"
    report.verdicts_to_csv(_fake_verdicts(), out, "cafe")
    lines = out.read_text().splitlines()
    assert lines[0] == "# lcb-verdicts config=cafe"
    rows = list(csv.reader(lines[1:]))
    assert rows[0] == ["name", "lhs", "rhs", "pass", "margin", "detail"]
    assert rows[1][3] == "true" and rows[2][3] == "false"
    assert float(rows[1][1]) == 1.0  # full-precision scientific notation parses back


def test_text_report_counts():
    text = report.text_report(_fake_verdicts(), "cafe")
    assert "[PASS] check-a" in text and "[FAIL] check-b" in text
    assert "1/2 passed" in text


def test_marginal_stat_rows_status_counts():
    cp = np.array([[1.0, 2.0, np.inf, 0.0]])
    statuses = np.array([0, 0, 4, 1], dtype=np.int8)
    rows = report.marginal_stat_rows([0.5], cp, statuses)
    counts = {stat: v for _, stat, v in rows if stat.startswith("count-")}
    assert counts["count-alive-at-horizon"] == 2
    assert counts["count-exploded"] == 1
    assert sum(counts.values()) == 4


def test_render_figures(tmp_path):
    report.render_margins_png(_fake_verdicts(), tmp_path / "m.png")
    p = Path(times=np.linspace(0, 1, 11), values=np.linspace(1, 2, 11),
             status="alive-at-horizon", lifetime=np.inf, progeny=1.0)
    report.render_paths_png([p], tmp_path / "p.png")
    rows = [(0.1, "mean", 1.0), (0.2, "mean", 1.1), (0.1, "q50", 0.9), (0.2, "q50", 1.0)]
    report.render_stats_png(rows, tmp_path / "s.png")
    for name in ("m.png", "p.png", "s.png"):
        assert (tmp_path / name).stat().st_size > 0


# ---------------------------------------------------------------------------
# commands


def test_cmd_inspect_runs(tmp_path, capfd):
    p = write(tmp_path, "a.toml", BASE.format(command="inspect", out=tmp_path / "o"))
    assert cli.main(["inspect", p]) == 0
    text = capfd.readouterr().out
    assert "extinction hypothesis holds: True" in text
    assert "ell =" in text


def test_cmd_mismatch_is_usage_error(tmp_path, capsys):
    p = write(tmp_path, "a.toml", BASE.format(command="inspect", out="o"))
    assert cli.main(["verify", p]) == 2


def test_bad_config_is_usage_error(tmp_path):
    p = write(tmp_path, "a.toml", "[mechanism]\nkind = 'stable'\n[run]\ncommand = 'warp'")
    assert cli.main(["inspect", p]) == 2
    assert cli.main(["inspect", str(tmp_path / "missing.toml")]) == 2


def test_cmd_tables_writes_and_cross_checks(tmp_path):
    cfg = """
[mechanism]
kind = "feller"

[run]
command = "tables"
out = "{out}"
""".format(out=tmp_path / "tab")
    p = write(tmp_path, "t.toml", cfg)
    assert cli.main(["tables", p]) == 0
    assert (tmp_path / "tab" / "scale_table.csv").exists()
    assert (tmp_path / "tab" / "h_grid.csv").exists()


def test_cmd_simulate_outputs_and_determinism(tmp_path):
    out = tmp_path / "sim"
    cfg = BASE.format(command="simulate", out=out) + "simulator = 'lcb'\ndump_paths = 3\n"
    p = write(tmp_path, "s.toml", cfg)
    assert cli.main(["simulate", p]) == 0
    stats = (out / "stats.csv").read_bytes()
    assert (out / "stats.png").exists()
    assert (out / "paths.csv").exists() and (out / "paths.png").exists()

    counts = {}
    for line in stats.decode().splitlines()[2:]:
        t, stat, value = line.split(",")
        if stat.startswith("count-"):
            counts[stat] = float(value)
    assert sum(counts.values()) == 1000  # status counts sum to n_paths

    # same config bytes, same seed: byte-identical output
    assert cli.main(["simulate", p]) == 0
    assert (out / "stats.csv").read_bytes() == stats
    # seed override changes the data
    assert cli.main(["simulate", p, "--seed", "4"]) == 0
    assert (out / "stats.csv").read_bytes() != stats


def test_cmd_verify_small_suite(tmp_path):
    out = tmp_path / "ver"
    cfg = BASE.format(command="verify", out=out).replace("n_paths = 1000", "n_paths = 4000")
    cfg += "checks = ['laplace', 'siegmund']\n"
    p = write(tmp_path, "v.toml", cfg)
    assert cli.main(["verify", p]) == 0
    assert (out / "verdicts.csv").exists()
    assert (out / "report.txt").exists()
    assert (out / "margins.png").exists()
    assert "2/2 passed" in (out / "report.txt").read_text()


def test_cmd_verify_exit_code_counts_failures(tmp_path, monkeypatch):
    out = tmp_path / "ver2"
    cfg = BASE.format(command="verify", out=out)
    p = write(tmp_path, "v.toml", cfg)
    fakes = [Verdict("a", 0, 0, False, 9.0), Verdict("b", 0, 0, True, 0.1),
             Verdict("c", 0, 0, False, 5.0)]
    monkeypatch.setattr(cli, "_run_checks", lambda spec, workers: fakes)
    assert cli.main(["verify", p]) == 2


def test_cmd_verify_incompatible_check_is_error(tmp_path):
    # lifetime requires a competition-free mechanism
    cfg = BASE.format(command="verify", out=tmp_path / "x") + "checks = ['lifetime']\n"
    p = write(tmp_path, "v.toml", cfg)
    assert cli.main(["verify", p]) == 2


def test_worker_resolution(tmp_path, monkeypatch):
    p = write(tmp_path, "a.toml", BASE.format(command="inspect", out="o"))
    spec = config.load_config(p)
    assert cli._resolve_workers(spec, 5) == 5
    monkeypatch.setenv("LCB_WORKERS", "3")
    assert cli._resolve_workers(spec, None) == 3
    monkeypatch.delenv("LCB_WORKERS")
    assert cli._resolve_workers(spec, None) == 1
