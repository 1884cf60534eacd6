import json
import logging
from fractions import Fraction

import pytest

from todalab import config as conf
from todalab.cli import run

FAST = ["--samples", "200", "--grid", "300", "--refine", "4"]


def _json(capsys):
    return json.loads(capsys.readouterr().out)


@pytest.fixture(autouse=True)
def isolated(monkeypatch, tmp_path):
    # reports default to ./reports, so run each test in its own directory
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv(conf.SEED_ENV, raising=False)


def test_usage_errors_exit_2(capsys):
    assert run([]) == 2
    assert run(["bogus"]) == 2
    assert run(["ward", "sideways"]) == 2
    assert run(["ward", "local", "--delta-ladder", "a,b"]) == 2


def test_algebra_check(capsys, tmp_path):
    assert run(["algebra-check", "--out", str(tmp_path)]) == 0
    out = _json(capsys)
    assert out["ok"] and out["command"] == "algebra-check"
    assert (tmp_path / "algebra-check.json").exists()


def test_miura_prints_expansion(capsys):
    assert run(["miura"]) == 0
    text = capsys.readouterr().out
    assert "W3" in text or "w3" in text.lower()


def test_degenerate_and_covariance(capsys):
    assert run(["degenerate"]) == 0
    assert _json(capsys)["ok"]
    assert run(["covariance"]) == 0
    assert _json(capsys)["ok"]


@pytest.mark.parametrize("mode", ["solve", "residual", "reduce"])
def test_hypergeom_modes(capsys, mode):
    assert run(["hypergeom", mode, "--z", "0.2+0.1j"]) == 0
    out = _json(capsys)
    assert out["command"] == f"hypergeom {mode}"
    assert out["results"]["z"] == [0.2, 0.1]


def _write(tmp_path, text, name="exp.toml"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return str(p)


def test_seiberg_violation_exit_2(capsys, tmp_path):
    text = conf.DEMO_CONFIG.replace('alpha = ["5/2", "5/2"]', 'alpha = ["1", "1"]')
    assert run(["correlate", "--config", _write(tmp_path, text)] + FAST) == 2
    assert "Seiberg" in capsys.readouterr().err


def test_missing_seed_exit_2(capsys, tmp_path):
    text = conf.DEMO_CONFIG.replace("seed = 20240611\n", "")
    assert run(["correlate", "--config", _write(tmp_path, text)] + FAST) == 2
    assert "seed" in capsys.readouterr().err


def test_seed_from_environment(monkeypatch):
    text = conf.DEMO_CONFIG.replace("seed = 20240611\n", "")
    assert conf.loads(text, {conf.SEED_ENV: "17"}).seed == 17
    monkeypatch.setenv(conf.SEED_ENV, "99")
    assert conf.loads(conf.DEMO_CONFIG).seed == 99
    with pytest.raises(conf.ConfigError):
        conf.loads(text, {conf.SEED_ENV: "x"})


def test_parse_error_reports_line(capsys, tmp_path):
    text = conf.DEMO_CONFIG.replace("n_base = 1500", "n_base = = 1500")
    assert run(["correlate", "--config", _write(tmp_path, text)] + FAST) == 2
    err = capsys.readouterr().err
    line = text.splitlines().index("n_base = = 1500") + 1
    assert f"line {line}" in err


def test_unknown_key_warns(caplog):
    text = conf.DEMO_CONFIG.replace("[grid]\n", "[grid]\nfoo = 1\n")
    with caplog.at_level(logging.WARNING, logger="todalab"):
        conf.loads(text)
    assert any("grid.foo" in r.getMessage() for r in caplog.records)


def test_missing_config_file_exit_2(capsys, tmp_path):
    assert run(["correlate", "--config", str(tmp_path / "none.toml")] + FAST) == 2


def test_config_round_trip():
    cfg = conf.demo_config()
    again = conf.loads(cfg.to_toml())
    assert again.to_dict() == cfg.to_dict()


def test_fractions_stay_exact():
    assert conf.parse_number("5/2", "x") == Fraction(5, 2)
    assert conf.parse_number(0.25, "x") == 0.25
    cfg = conf.demo_config()
    assert str(cfg.couplings().gamma) == "4/5"


def test_correlate_deterministic_and_round_trips(capsys, tmp_path):
    assert run(["correlate", "--out", str(tmp_path)] + FAST) == 0
    first = _json(capsys)
    assert run(["correlate", "--out", str(tmp_path / "again")] + FAST) == 0
    second = _json(capsys)
    assert second["results"] == first["results"]
    report = json.loads((tmp_path / "correlate.json").read_text())
    assert report["format_version"] == conf.FORMAT_VERSION
    # the echoed config reproduces the run
    cfg = conf.from_dict(report["config"])
    p = _write(tmp_path, cfg.to_toml(), "echo.toml")
    assert run(["correlate", "--config", p, "--out", str(tmp_path / "echo")]) == 0
    assert json.loads(capsys.readouterr().out)["results"] == report["results"]


def test_kpz_command(capsys):
    assert run(["kpz"] + FAST) == 0
    assert _json(capsys)["ok"]


def test_ward_global(capsys):
    code = run(["ward", "global", "--spin", "2"] + FAST)
    out = _json(capsys)
    assert code == (0 if out["ok"] else 1)
    assert {g["name"] for g in out["gates"]}
