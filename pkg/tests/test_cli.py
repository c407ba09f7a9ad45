import json
import subprocess
import sys

import pytest

from heiscouple import cli
from heiscouple.runner import read_jsonl


def _run(capsys, *argv):
    code = cli.run(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_group_example(capsys):
    code, out, _ = _run(capsys, "group", "--from", "0,0,0", "--to", "0,0,1", "--dist", "cc")
    assert code == 0
    assert float(out.strip()) == pytest.approx(1.7724538509055159, abs=1e-12)


def test_group_operations(capsys):
    code, out, _ = _run(capsys, "group", "--from", "1,0,0", "--to", "0,1,0", "--op", "multiply")
    assert code == 0 and out.strip() == "1.0,1.0,1.0"
    code, out, _ = _run(capsys, "group", "--from", "3,-1,7", "--op", "inverse")
    assert out.strip() == "-3.0,1.0,-7.0"
    code, out, _ = _run(capsys, "group", "--from", "0,0,0", "--to", "3,4,0", "--dist", "rho")
    assert float(out) == 5.0


@pytest.mark.parametrize("argv", [
    ["group", "--from", "1,2", "--dist", "cc"],
    ["group", "--from", "0,0,0"],
    ["couple", "--from", "0,0,1", "--to", "0,0,0", "--n", "0"],
    ["couple", "--from", "0,0,1", "--to", "0,0,0", "--seed", "-1"],
    ["nonsense"],
])
def test_validation_errors_exit_2(capsys, argv):
    code, _, err = _run(capsys, *argv)
    assert code == 2 and err


def test_precondition_error_exit_2(capsys, tmp_path):
    code, _, err = _run(capsys, "exit", "--delta", "1", "--offsets", "0.1", "--out", str(tmp_path))
    assert code == 2
    assert "delta/32" in err


def test_internal_error_exit_1(capsys, monkeypatch, tmp_path):
    def boom(args, cfg):
        raise RuntimeError("boom")
    monkeypatch.setitem(cli._HANDLERS, "tv", boom)
    code, _, err = _run(capsys, "tv", "--out", str(tmp_path))
    assert code == 1 and "internal error" in err


def test_couple_outputs_and_metadata(capsys, tmp_path):
    argv = ["couple", "--from", "0,0,1", "--to", "0,0,0", "--n", "50", "--horizon", "63",
            "--steps-per-interval", "64", "--seed", "3", "--fit", "--min-count", "5",
            "--out", str(tmp_path)]
    code, out, _ = _run(capsys, *argv)
    assert code == 0 and "fitted slope" in out
    with open(tmp_path / "outcomes.jsonl") as fh:
        meta, outs = read_jsonl(fh)
    assert len(outs) == 50
    assert meta["master_seed"] == 3 and meta["command"] == "couple"
    assert meta["params"]["n"] == 50 and "threads" not in meta["params"]
    header = (tmp_path / "tail.csv").read_text().splitlines()[0]
    assert header.startswith("# ") and json.loads(header[2:])["master_seed"] == 3
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report) == {"metadata", "report"}
    assert "fit" in report["report"]


def test_threads_env_does_not_change_output(capsys, tmp_path, monkeypatch):
    base = ["couple", "--from", "0,1,0", "--to", "0,0,0", "--n", "80", "--horizon", "31",
            "--steps-per-interval", "64"]
    monkeypatch.setenv("HEISCOUPLE_THREADS", "1")
    assert cli.run(base + ["--out", str(tmp_path / "a")]) == 0
    monkeypatch.setenv("HEISCOUPLE_THREADS", "2")
    assert cli.run(base + ["--out", str(tmp_path / "b")]) == 0
    assert cli.run(base + ["--threads", "3", "--out", str(tmp_path / "c")]) == 0
    capsys.readouterr()
    a = (tmp_path / "a" / "outcomes.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "outcomes.jsonl").read_bytes()
    assert a == (tmp_path / "c" / "outcomes.jsonl").read_bytes()


def test_bad_threads_env(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("HEISCOUPLE_THREADS", "zero")
    code, _, err = _run(capsys, "tv", "--out", str(tmp_path))
    assert code == 2 and "HEISCOUPLE_THREADS" in err


def test_config_defaults_and_precedence(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[tv]\na-diff = 2.0\nt = [1.0, 4.0]\n')
    code, _, _ = _run(capsys, "--config", str(cfg), "tv", "--out", str(tmp_path / "o1"))
    assert code == 0
    meta = json.loads((tmp_path / "o1" / "report.json").read_text())["metadata"]
    assert meta["params"]["a_diff"] == 2.0 and meta["params"]["t"] == [1.0, 4.0]
    # command-line flags override the file
    _run(capsys, "--config", str(cfg), "tv", "--a-diff", "0.5", "--out", str(tmp_path / "o2"))
    meta = json.loads((tmp_path / "o2" / "report.json").read_text())["metadata"]
    assert meta["params"]["a_diff"] == 0.5


def test_config_supplies_required_flags(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text('[group]\nfrom = "0,0,0"\nto = "3,4,0"\ndist = "rho"\n')
    code, out, _ = _run(capsys, "--config", str(cfg), "group")
    assert code == 0 and float(out) == 5.0


def test_config_unknown_key(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("[tv]\nbogus = 1\n")
    code, _, err = _run(capsys, "--config", str(cfg), "tv")
    assert code == 2 and "bogus" in err


def test_simulate_outputs(capsys, tmp_path):
    code, _, _ = _run(capsys, "simulate", "--n", "2", "--steps", "10", "--out", str(tmp_path))
    assert code == 0
    lines = (tmp_path / "paths.csv").read_text().splitlines()
    assert lines[1] == "path,t,x,y,z" and len(lines) == 2 + 2 * 11
    code, out, _ = _run(capsys, "simulate", "--from", "0,0,1", "--to", "0,0,0", "--t", "8",
                        "--steps-per-interval", "64", "--out", str(tmp_path))
    assert code == 0 and "tau=" in out
    assert (tmp_path / "coupled_path.csv").exists()


def test_tail_lemma_and_exit_run(capsys, tmp_path):
    code, out, _ = _run(capsys, "tail-lemma", "--n", "200", "--y", "1,4", "--steps", "128",
                        "--out", str(tmp_path / "l"))
    assert code == 0 and "censored fraction" in out
    code, out, _ = _run(capsys, "exit", "--delta", "1", "--offsets", "0.01", "--n", "50",
                        "--variants", "planar", "--steps-per-interval", "64",
                        "--out", str(tmp_path / "e"))
    assert code == 0
    assert json.loads((tmp_path / "e" / "report.json").read_text())["report"]["n"] == 50


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "heiscouple.cli", "--version"],
                         capture_output=True, text=True)
    assert res.returncode == 0 and "heiscouple" in res.stdout
