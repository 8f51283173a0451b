import json
import subprocess
import sys

import pytest

from abx.cli import COMMANDS, build_parser, main

SMALL = """sim.nUsers=1500
sim.seed=5
sim.chunkSize=300
"""


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """simulate -> clean -> baselines on a small config, shared by the tests below."""
    d = tmp_path_factory.mktemp("run")
    cfg = d / "abx.conf"
    cfg.write_text(SMALL)
    assert main(["simulate", "--config", str(cfg), "--out", str(d)]) == 0
    assert main(["clean", "--config", str(cfg), "--log", str(d / "log.ndjson")]) == 0
    assert main(["baselines", "--sessions", str(d / "sessions.csv")]) == 0
    return d


def test_simulate_outputs(pipeline):
    manifest = json.loads((pipeline / "manifest_simulate.json").read_text())
    assert manifest["seed"] == 5
    assert manifest["rowCounts"]["written"] == manifest["rowCounts"]["records"]
    assert (pipeline / "config_resolved.txt").read_text().startswith("sim.seed=5")


def test_clean_row_count_matches_emitted_beacons(pipeline):
    sim = json.loads((pipeline / "manifest_simulate.json").read_text())["rowCounts"]
    clean = json.loads((pipeline / "manifest_clean.json").read_text())["rowCounts"]
    assert clean["sessions"] == sim["humanBeacons"]
    report = json.loads((pipeline / "cleaning_report.json").read_text())
    assert report["orphan_clicks"] == sim["orphanClicks"]
    assert report["records_read"] == sim["records"]


def test_analyze_all_prints_five_blocks(pipeline, capsys):
    d = pipeline
    rc = main(["analyze", "--sessions", str(d / "sessions.csv"), "--baselines", str(d / "baselines.csv")])
    out = capsys.readouterr().out
    assert rc == 0
    titles = [line for line in out.splitlines() if line.split(":")[0] in (
        "Simple model", "Covariate model", "Zone models", "Combined zone model", "Double-assignment model")]
    assert len(titles) == 5
    results = json.loads((d / "analysis_all.json").read_text())
    assert set(results) >= {"simple", "full", "zones", "combined", "doubleassigned"}


def test_analyze_without_baselines_is_usage_error(pipeline, capsys):
    rc = main(["analyze", "--sessions", str(pipeline / "sessions.csv"), "--which", "full"])
    assert rc == 2
    assert "baselines" in capsys.readouterr().err


def test_analyze_simple_needs_no_baselines(pipeline, capsys):
    assert main(["analyze", "--sessions", str(pipeline / "sessions.csv"), "--which", "simple",
                 "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["simple"]["tests"][1]["label"] == "treat"


def test_validate_writes_placebo(pipeline, capsys):
    assert main(["validate", "--sessions", str(pipeline / "sessions.csv")]) == 0
    doc = json.loads((pipeline / "placebo.json").read_text())
    assert doc["verdict"] in ("pass", "fail") and doc["nUsers"] > 0
    assert "verdict" in capsys.readouterr().out


def test_rerun_is_idempotent(pipeline, tmp_path):
    cfg = pipeline / "abx.conf"
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path), "--threads", "3"]) == 0
    assert main(["clean", "--config", str(cfg), "--log", str(tmp_path / "log.ndjson")]) == 0
    for name in ("log.ndjson", "sessions.csv", "reassignment.json", "users.csv"):
        assert (tmp_path / name).read_bytes() == (pipeline / name).read_bytes(), name


def test_empty_log_cleans_to_zero_rows(tmp_path, capsys):
    (tmp_path / "log.ndjson").write_text("")
    assert main(["clean", "--log", str(tmp_path / "log.ndjson")]) == 0
    assert (tmp_path / "sessions.csv").read_text().count("\n") == 1
    report = json.loads((tmp_path / "cleaning_report.json").read_text())
    assert all(v == 0 for k, v in report.items() if k != "orphan_clicks_by_arm")


def test_one_orphan_click(tmp_path):
    line = {"ts": 5, "kind": "click", "anonyId": "a", "treat": 0, "ua": "Mozilla/5.0", "login": 0,
            "q": {"sessionId": "a.1", "productId": "201-1", "productPos": "1"}}
    (tmp_path / "log.ndjson").write_text(json.dumps(line) + "\n")
    assert main(["clean", "--log", str(tmp_path / "log.ndjson"), "--cutover", "1"]) == 0
    assert json.loads((tmp_path / "cleaning_report.json").read_text())["orphan_clicks"] == 1


def test_power_command(capsys):
    assert main(["power", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["total"] == 467890


def test_uplift_command(capsys):
    assert main(["uplift"]) == 0
    assert "1,268.1" in capsys.readouterr().out


def test_sweep_command(tmp_path, capsys):
    assert main(["sweep", "--out", str(tmp_path), "--replications", "2", "--grid", "0.006:0.012:0.003",
                 "--format", "csv"]) == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "trueATE,olsEst,glmEst,olsSE,glmSE,ratio"
    assert len(out.splitlines()) == 4


def test_command_section_in_config(tmp_path, capsys):
    cfg = tmp_path / "c.conf"
    cfg.write_text("power.power=0.8\npower.effect=0.06\n")
    assert main(["power", "--config", str(cfg), "--format", "json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["power"] == 0.8 and doc["relativeEffect"] == 0.06
    # flags beat the config file
    assert main(["power", "--config", str(cfg), "--power", "0.9", "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["power"] == 0.9


@pytest.mark.parametrize("argv,code", [
    (["clean", "--log", "/no/such/log.ndjson"], 3),
    (["power", "--power", "1.5"], 2),
    (["power", "--effect", "0"], 4),
    (["uplift", "--daily-sessions", "0"], 4),
    (["simulate", "--config", "/no/such.conf"], 3),
    (["sweep", "--lambda0", "-1"], 4),
])
def test_exit_codes(argv, code, tmp_path):
    assert main(argv + ["--out", str(tmp_path)]) == code


def test_bad_config_exits_2(tmp_path):
    cfg = tmp_path / "c.conf"
    cfg.write_text("sim.nosuch=1\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path)]) == 2


def test_bad_log_line_exits_3(tmp_path, capsys):
    (tmp_path / "log.ndjson").write_text('{"kind": "render"\n')
    assert main(["clean", "--log", str(tmp_path / "log.ndjson")]) == 3
    assert "line 1" in capsys.readouterr().err


def test_model_error_names_model(tmp_path, capsys):
    import pandas as pd
    from abx.sessions import SESSION_COLUMNS
    rows = [(f"s{i}", f"u{i}", 0, 201, 2, 1, 15, 0, i % 2, i, "AB") for i in range(10)]
    pd.DataFrame(rows, columns=SESSION_COLUMNS).to_csv(tmp_path / "sessions.csv", index=False)
    assert main(["analyze", "--sessions", str(tmp_path / "sessions.csv"), "--which", "simple"]) == 4
    assert "model simple" in capsys.readouterr().err


def test_threads_env_fallback(monkeypatch, tmp_path):
    monkeypatch.setenv("ABX_THREADS", "zero")
    assert main(["power", "--out", str(tmp_path)]) == 2


@pytest.mark.parametrize("command", sorted(COMMANDS))
def test_help_documents_every_flag(command, capsys):
    with pytest.raises(SystemExit) as exc:
        main([command, "--help"])
    assert exc.value.code == 0
    text = capsys.readouterr().out
    sub = build_parser()._subparsers._group_actions[0].choices[command]
    for action in sub._actions:
        for flag in action.option_strings:
            assert flag in text
    for flag in ("--config", "--seed", "--threads", "--out", "--format"):
        assert flag in text


def test_console_entry_point():
    r = subprocess.run([sys.executable, "-m", "abx.cli", "--version"], capture_output=True, text=True)
    assert r.returncode == 0 and r.stdout.startswith("abx ")
