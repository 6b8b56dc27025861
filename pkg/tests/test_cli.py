import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from fbsde import cli
from fbsde.config import bundled_configs, load_config, parse_config
from fbsde.errors import ConfigError

MINIMAL = """
[model]
kind = brownian
d = 2
[grid]
T = 1.0
steps = 4
[mc]
paths = 2000
seed = 3
[bsde]
payoff_vector = 1, 2
[experiment]
name = tiny
probes = 0, 0
directions = 1, 0
"""


def run(args, env=None):
    return subprocess.run([sys.executable, "-m", "fbsde.cli", *args], capture_output=True,
                          text=True, env=env)


def test_bundled_configs_parse():
    names = set(bundled_configs())
    assert {"linear_smoke", "ou_sin", "gruschin_square", "kinetic_linear", "nonlinear_driver",
            "linear_driver"} <= names
    for path in bundled_configs().values():
        cfg = load_config(path)
        assert cfg.csv and cfg.estimators


def test_parse_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg.t0 == 0.0 and cfg.steps == 4 and cfg.weight_kind == "elworthy_li"
    assert cfg.payoff_vector == (1.0, 2.0) and cfg.directions == ((1.0, 0.0),)
    assert cfg.model_params == {"d": 2}


@pytest.mark.parametrize("edit,needle", [
    (lambda t: t.replace("[grid]\nT = 1.0\nsteps = 4\n", ""), "[grid]"),
    (lambda t: t + "[weight]\nflavour = x\n", "flavour"),
    (lambda t: t + "[extras]\na = 1\n", "[extras]"),
    (lambda t: t.replace("steps = 4", "steps = 0"), "steps"),
    (lambda t: t.replace("paths = 2000", "paths = many"), "paths"),
    (lambda t: t.replace("T = 1.0", "T = -1.0"), "T"),
    (lambda t: t.replace("directions = 1, 0", "directions = 1, 0, 0"), "directions"),
    (lambda t: t.replace("kind = brownian", "kind = heston"), "kind"),
    (lambda t: t.replace("d = 2", "d = 2\nkappa = 1"), "kappa"),
    (lambda t: t.replace("name = tiny", "name = tiny\nestimators = bismut, magic"), "magic"),
])
def test_config_errors_name_the_key(edit, needle):
    with pytest.raises(ConfigError, match=__import__("re").escape(needle)):
        parse_config(edit(MINIMAL))


def test_missing_section_exit_code(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text(MINIMAL.replace("[grid]\nT = 1.0\nsteps = 4\n", ""))
    proc = run(["run", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert proc.returncode == 2
    assert "[grid]" in proc.stderr


def test_runtime_error_exit_code(tmp_path):
    cfg = tmp_path / "zero.ini"
    cfg.write_text(MINIMAL.replace("kind = brownian\nd = 2", "kind = gruschin")
                   + "[weight]\nkind = gruschin\n")
    proc = run(["run", str(cfg), "--out", str(tmp_path / "o.csv")])
    assert proc.returncode == 3
    assert "ZeroFirstBlock" in proc.stderr


def test_linear_smoke_csv(tmp_path):
    out = tmp_path / "smoke.csv"
    assert cli.main(["run", "linear_smoke", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert tuple(rows[0].keys()) == cli.HEADER
    a = np.array([1.0, -0.5])
    for r in rows:
        v = np.array([float(t) for t in r["v"].split(";")])
        assert abs(float(r["value"]) - a @ v) <= 3 * float(r["std_error"]) + 1e-12
        assert r["runtime_ms"] == "" and r["seed"] == "7"


def test_append_seed_override_and_timings(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(MINIMAL)
    out = tmp_path / "o.csv"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    assert cli.main(["run", str(cfg), "--out", str(out), "--seed", "9", "--timings"]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == ",".join(cli.HEADER) and len(lines) == 3
    first, second = list(csv.DictReader(lines))
    assert first["seed"] == "3" and second["seed"] == "9"
    assert first["value"] != second["value"]
    assert float(second["runtime_ms"]) >= 0


def test_threads_env_and_flag_identical(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(MINIMAL.replace("paths = 2000", "paths = 9000"))
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["run", str(cfg), "--out", str(a), "--threads", "1"]).returncode == 0
    env = dict(os.environ, FBSDE_THREADS="4")
    assert run(["run", str(cfg), "--out", str(b)], env=env).returncode == 0
    assert a.read_bytes() == b.read_bytes()
    bad = dict(os.environ, FBSDE_THREADS="lots")
    assert run(["run", str(cfg), "--out", str(b)], env=bad).returncode == 2


def test_conditional_rows(tmp_path):
    cfg = tmp_path / "cond.ini"
    text = MINIMAL.replace("name = tiny", "name = tiny\nestimators = conditional\ns = 0.5")
    text = text.replace("seed = 3", "seed = 3\nouter_paths = 3\ninner_paths = 1000")
    cfg.write_text(text)
    out = tmp_path / "c.csv"
    assert cli.main(["run", str(cfg), "--out", str(out)]) == 0
    (row,) = list(csv.DictReader(out.open()))
    assert row["estimator_tag"] == "conditional" and row["s"] == "0.5"
    assert row["n_paths"] == "3000"
    assert abs(float(row["value"]) - 1.0) <= 3 * float(row["std_error"])


def test_no_output_path_is_config_error(tmp_path):
    cfg = tmp_path / "tiny.ini"
    cfg.write_text(MINIMAL)
    assert cli.main(["run", str(cfg)]) == 2
    assert cli.main(["run", str(tmp_path / "missing.ini"), "--out", "x.csv"]) == 2
    assert cli.main(["run", str(cfg), "--out", "x.csv", "--threads", "0"]) == 2


def test_list_command(capsys):
    assert cli.main(["list"]) == 0
    assert "linear_smoke" in capsys.readouterr().out
