import json

import pytest

from app.cli import main

RUN = ["run", "--protocol", "raft", "--nodes", "3", "--ops", "30", "--clients", "2", "--seed", "3", "--check"]


def _files(path):
    return {p.name: p.read_text(encoding="utf-8") for p in sorted(path.iterdir())}


def test_run_writes_artifacts(tmp_path, capsys):
    out = tmp_path / "a"
    assert main(RUN + ["--out", str(out)]) == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["summary"]["ops_completed"] == 30
    assert set(_files(out)) == {"trace.ndjson", "metrics.csv", "summary.json", "violations.ndjson"}
    assert (out / "violations.ndjson").read_text(encoding="utf-8") == ""


def test_same_run_twice_is_byte_identical(tmp_path):
    assert main(RUN + ["--out", str(tmp_path / "a")]) == 0
    assert main(RUN + ["--out", str(tmp_path / "b")]) == 0
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_invalid_config_exit_code(capsys):
    assert main(["run", "--nodes", "0"]) == 2
    assert "erro:" in capsys.readouterr().err


def test_livelock_exit_code(tmp_path):
    faults = tmp_path / "faults.ini"
    faults.write_text("[faults]\ncrash.1 = 1@0\ncrash.2 = 2@0\ncrash.3 = 3@0\n", encoding="utf-8")
    code = main(["run", "--nodes", "3", "--ops", "5", "--faults", str(faults), "--max-time-ms", "1000", "--out", str(tmp_path / "o")])
    assert code == 4
    assert (tmp_path / "o" / "trace.ndjson").exists()


def test_replay_exit_codes(tmp_path):
    out = tmp_path / "a"
    assert main(RUN + ["--out", str(out)]) == 0
    assert main(["replay", str(out / "trace.ndjson")]) == 0

    text = (out / "trace.ndjson").read_text(encoding="utf-8")
    cut = tmp_path / "cut.ndjson"
    cut.write_text(text[: len(text) // 2], encoding="utf-8")
    assert main(["replay", str(cut)]) == 5


def test_compare_same_protocol(tmp_path, capsys):
    out = tmp_path / "cmp"
    assert main(["compare", "--protocols", "raft,raft", "--nodes", "3", "--ops", "20", "--out", str(out)]) == 0
    assert "write_latency_max_ms" in capsys.readouterr().out
    assert (out / "report.txt").exists() and (out / "comparison.csv").exists()
    assert (out / "0-raft" / "trace.ndjson").exists() and (out / "1-raft" / "trace.ndjson").exists()


def test_collision_scenario_on_baseline(tmp_path, capsys):
    code = main(["run", "--protocol", "baseline", "--nodes", "2", "--scenario", "collision", "--out", str(tmp_path / "c")])
    assert code == 0
    printed = json.loads(capsys.readouterr().out)
    assert printed["summary"]["collisions"]["duplicate_pops"] >= 1


def test_modelcheck_broken_variant():
    assert main(["modelcheck", "--broken", "--depth", "10"]) == 0


def test_matrix_writes_csv(tmp_path):
    out = tmp_path / "m"
    code = main(["matrix", "--protocols", "raft,ct", "--seeds", "2", "--nodes", "3", "--ops", "30", "--workers", "1", "--out", str(out)])
    assert code == 0
    header, *rows = (out / "matrix.csv").read_text(encoding="utf-8").splitlines()
    assert header.startswith("protocol,seed,ops_completed")
    assert len(rows) == 4


def test_unknown_subcommand():
    with pytest.raises(SystemExit):
        main(["explode"])
