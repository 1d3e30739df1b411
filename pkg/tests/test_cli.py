import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from psketch.cli import EXIT_OK, EXIT_PARTIAL, EXIT_RESOURCE, EXIT_VALIDATION, main
from psketch.numcore import read_matrix, write_matrix


def write_cfg(tmp_path, data, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(data))
    return str(path)


def rows_of(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_build_and_apply(tmp_path, capsys):
    out = tmp_path / "pi.mtx"
    assert main(["build", "--family", "osnap", "--n", "64", "--d", "4", "--B", "4", "--seed", "3",
                 "--out", str(out)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    Pi = read_matrix(out)
    assert Pi.shape == (info["rows"], 64) and Pi.nnz == info["nnz"]

    A = np.random.default_rng(0).standard_normal((64, 4))
    write_matrix(tmp_path / "a.txt", A)
    assert main(["apply", "--family", "osnap", "--n", "64", "--d", "4", "--B", "4", "--seed", "3",
                 "--input", str(tmp_path / "a.txt"), "--out", str(tmp_path / "pa.txt")]) == EXIT_OK
    np.testing.assert_allclose(read_matrix(tmp_path / "pa.txt"), Pi.to_scipy() @ A, rtol=1e-12)


def test_config_then_flag_override(tmp_path):
    cfg = write_cfg(tmp_path, {"kind": "rankdrop", "trials": 50, "seed": 1, "spec": {"family": "countsketch"},
                               "instance": {"n": 10, "d": 10}})
    out = tmp_path / "r.csv"
    assert main(["rankdrop", "--config", cfg, "--trials", "3", "--seed", "9", "--out", str(out)]) == EXIT_OK
    rows = rows_of(out)
    assert len(rows) == 3
    from psketch.experiments import trial_seed
    assert rows[0]["seed"] == str(trial_seed(9, 0))


def test_replay_through_cli(tmp_path):
    cfg = write_cfg(tmp_path, {"kind": "distort", "trials": 3, "spec": {"family": "composed_osnap", "B": 4},
                               "instance": {"n": 300, "d": 4}, "params": {"budget": 100}})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(["distort", "--config", cfg, "--out", str(a), "--threads", "1"]) == EXIT_OK
    assert main(["distort", "--config", cfg, "--out", str(b), "--threads", "2"]) == EXIT_OK
    assert a.read_bytes() == b.read_bytes()


def test_validation_exit_code(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"kind": "distort", "trials": 0, "spec": {"family": "nope"},
                               "instance": {"n": 5, "d": 0}})
    assert main(["distort", "--config", cfg]) == EXIT_VALIDATION
    err = capsys.readouterr().err
    assert "trials" in err and "nope" in err and "instance.d" in err
    (tmp_path / "broken.json").write_text("{")
    assert main(["distort", "--config", str(tmp_path / "broken.json")]) == EXIT_VALIDATION
    assert main(["distort", "--config", str(tmp_path / "missing.json")]) == EXIT_VALIDATION
    assert main(["hardgen", "--n", "96", "--d", "6"]) == EXIT_VALIDATION


def test_sweep_needs_sweep_kind(tmp_path):
    cfg = write_cfg(tmp_path, {"kind": "distort", "spec": {"family": "identity"}, "instance": {"n": 5, "d": 2}})
    assert main(["sweep", "--config", cfg]) == EXIT_VALIDATION


def test_resource_exit_code(tmp_path):
    grid = {f"params.x{i}": list(range(10)) for i in range(7)}
    cfg = write_cfg(tmp_path, {"kind": "sweep", "base_kind": "distort", "spec": {"family": "identity"},
                               "instance": {"n": 5, "d": 2}, "grid": grid})
    assert main(["sweep", "--config", cfg]) == EXIT_RESOURCE


def test_partial_failure_exit_code(tmp_path, capsys):
    (tmp_path / "m.txt").write_text("1 0\n0 1\n")
    cfg = write_cfg(tmp_path, {"kind": "distort", "trials": 2, "spec": {"family": "countsketch", "d": 9},
                               "instance": {"type": "file", "path": str(tmp_path / "m.txt")}})
    assert main(["distort", "--config", cfg]) == EXIT_PARTIAL
    captured = capsys.readouterr()
    assert "2 of 2 trials failed" in captured.err
    assert captured.out.startswith("schema_version,")


def test_hardgen_writes_sidecar(tmp_path, capsys):
    out = tmp_path / "h.mtx"
    assert main(["hardgen", "--n", "256", "--d", "16", "--seed", "4", "--out", str(out)]) == EXIT_OK
    info = json.loads(capsys.readouterr().out)
    assert info["blocks"] == 4 and read_matrix(out).nnz == info["nnz"]
    roles = json.loads((tmp_path / "h.mtx.roles.json").read_text())["roles"]
    assert roles[0] == {"role": "D"} and len(roles) == 16


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "psketch.cli", "tails", "--trials", "1"],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    header, row = proc.stdout.strip().splitlines()
    assert header.split(",")[:3] == ["schema_version", "kind", "config_index"]
    assert row.startswith("1,tails,0,0,")


@pytest.mark.parametrize("argv", [[], ["frobnicate"]])
def test_argparse_errors(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    assert exc.value.code == 2
