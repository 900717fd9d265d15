import os
import subprocess
import sys
from pathlib import Path

import pytest

from whitenopt import harness
from whitenopt.cli import EXIT_CONFIG, EXIT_DIVERGED, EXIT_OK, main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def write(path, text):
    path.write_text(text)
    return str(path)


@pytest.fixture
def quad_cfg(tmp_path):
    return write(tmp_path / "q.cfg", "model.kind = quadratic\nopt.kind = shampoo\nopt.lr = 0.1\nrun.steps = 20\nopt.ridge_rel = 1e-3\n")


def test_run_writes_trace(tmp_path, quad_cfg, capsys):
    out = tmp_path / "t.csv"
    assert main(["run", "--config", quad_cfg, "--out", str(out)]) == EXIT_OK
    trace = harness.read_trace_csv(out.read_text())
    assert len(trace.records) == 21
    assert "status=completed" in capsys.readouterr().out


def test_run_is_reproducible(tmp_path, quad_cfg):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--config", quad_cfg, "--out", str(a)])
    main(["run", "--config", quad_cfg, "--out", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_seed_override_changes_run(tmp_path, quad_cfg):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    main(["run", "--config", quad_cfg, "--out", str(a)])
    main(["run", "--config", quad_cfg, "--out", str(b), "--seed", "5"])
    assert a.read_bytes() != b.read_bytes()


def test_divergent_run_exit_code(tmp_path, capsys):
    out = tmp_path / "d.csv"
    code = main(["run", "--config", str(CONFIGS / "quadratic_divergent.cfg"), "--out", str(out)])
    assert code == EXIT_DIVERGED
    assert out.read_text().splitlines()[-1].startswith("# diverged at step")


def test_unknown_key(tmp_path, capsys):
    cfg = write(tmp_path / "bad.cfg", "opt.kind = adam\nopt.bogus = 1\n")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    assert "unknown key 'opt.bogus'" in capsys.readouterr().err


def test_missing_config(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.cfg"), "--out", str(tmp_path / "x.csv")]) == EXIT_CONFIG
    assert "nope.cfg" in capsys.readouterr().err


def test_unwritable_output(tmp_path, quad_cfg, capsys):
    assert main(["run", "--config", quad_cfg, "--out", str(tmp_path / "no" / "such" / "dir" / "x.csv")]) == EXIT_CONFIG
    assert "cannot write" in capsys.readouterr().err


def test_bad_usage_is_config_error(capsys):
    assert main(["run"]) == EXIT_CONFIG
    assert main(["frobnicate"]) == EXIT_CONFIG


def test_help_exits_ok(capsys):
    assert main(["--help"]) == EXIT_OK


def test_stop_and_resume(tmp_path, quad_cfg):
    full, part, ck = tmp_path / "full.csv", tmp_path / "part.csv", tmp_path / "ck.npz"
    main(["run", "--config", quad_cfg, "--out", str(full)])
    assert main(["run", "--config", quad_cfg, "--out", str(part), "--stop-at", "7", "--checkpoint", str(ck)]) == EXIT_OK
    assert ck.exists()
    resumed = tmp_path / "resumed.csv"
    assert main(["run", "--config", quad_cfg, "--out", str(resumed), "--resume", str(ck)]) == EXIT_OK
    assert resumed.read_bytes() == full.read_bytes()


def test_corpus_flag(tmp_path):
    corpus = write(tmp_path / "c.txt", "the quick brown fox jumps over the lazy dog. " * 50)
    cfg = write(tmp_path / "b.cfg", "model.kind = bigram_lm\nopt.kind = adam\nopt.lr = 0.01\nrun.steps = 10\n")
    out = tmp_path / "b.csv"
    assert main(["run", "--config", cfg, "--out", str(out), "--corpus", corpus]) == EXIT_OK
    assert main(["run", "--config", cfg, "--out", str(out), "--corpus", str(tmp_path / "none.txt")]) == EXIT_CONFIG


def test_sweep_writes_traces_and_summary(tmp_path):
    out = tmp_path / "sweep"
    assert main(["sweep", "--config", str(CONFIGS / "precond_freq_sweep.cfg"), "--out", str(out)]) == EXIT_OK
    traces = sorted(p.name for p in out.glob("0*.csv"))
    assert len(traces) == 4
    summary = (out / "summary.csv").read_text().splitlines()
    assert len(summary) == 5


def test_sweep_malformed_axis(tmp_path, capsys):
    cfg = write(tmp_path / "s.cfg", "opt.kind = soap\nopt.precond_freq = 1,,10\n")
    assert main(["sweep", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "malformed list" in capsys.readouterr().err


def test_sweep_without_axis(tmp_path, quad_cfg, capsys):
    assert main(["sweep", "--config", quad_cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "no sweep axis" in capsys.readouterr().err


def test_verify_passes_and_is_seed_stable(capsys):
    assert main(["verify"]) == EXIT_OK
    first = capsys.readouterr().out.splitlines()
    assert main(["verify", "--seed", "1"]) == EXIT_OK
    second = capsys.readouterr().out.splitlines()
    assert len(first) == len(second) >= 9
    assert [line.split()[-1] for line in first] == [line.split()[-1] for line in second]


def test_grad_check(capsys):
    assert main(["grad-check", "--cases", "5"]) == EXIT_OK
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 4 and all(line.endswith("PASS") for line in lines)


def test_module_entry_point(tmp_path, quad_cfg):
    env = dict(os.environ, PYTHONPATH=str(Path(__file__).resolve().parent.parent / "src"))
    out = tmp_path / "m.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "whitenopt", "run", "--config", quad_cfg, "--out", str(out)],
        capture_output=True, text=True, env=env,
    )
    assert proc.returncode == 0, proc.stderr
    assert out.exists()
