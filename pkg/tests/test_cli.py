import json

import numpy as np
import pytest

from obsv import fixtures
from obsv.cli import main, parse_kerq, parse_matrix, parse_region
from obsv.errors import ParseError
from obsv.lmi import Ball1, Ball2, Polytope
from obsv.model import build_system, save_model

BALL = "ball:100.7@0,0,37.5"


@pytest.fixture
def toy_file(tmp_path):
    path = tmp_path / "toy.json"
    save_model(fixtures.toy_stable(3), path)
    return str(path)


def test_check_lorenz(capsys):
    assert main(["check", "--fixture", "lorenz"]) == 0
    out = capsys.readouterr().out
    assert "gamma = 0.7071067812" in out and "dim S_N = 2" in out


def test_check_mfe(capsys):
    assert main(["check", "--fixture", "mfe9"]) == 0
    assert "n = 9" in capsys.readouterr().out


def test_corrupted_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"kind": "quad", "n": 3, "A": [1, 2')
    assert main(["check", "--model", str(bad)]) == 2
    assert "error" in capsys.readouterr().err


def test_missing_model_source():
    assert main(["check"]) == 2


def test_trap_lorenz_writes_manifest(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["trap", "--fixture", "lorenz", "--kerq", "e2,e3", "--out", str(out)]) == 0
    cert = json.loads((out / "trap.json").read_text())
    assert cert["radius"] == pytest.approx(100.7, rel=1e-2)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["exit_status"] == 0
    assert "trap.json" in manifest["files"]


def test_trap_lorenz_without_kerq_is_a_usage_error():
    assert main(["trap", "--fixture", "lorenz"]) == 2


def test_trap_toy_degenerate(toy_file, capsys):
    assert main(["trap", "--model", toy_file]) == 0
    assert "Degenerate" in capsys.readouterr().out


def test_trap_fluid(capsys):
    assert main(["trap", "--fixture", "mfe9", "--fluid"]) == 0
    assert "kind = Fluid" in capsys.readouterr().out


def test_synth_global_then_verify_and_simulate(tmp_path, capsys):
    out = tmp_path / "g"
    assert main(["synth", "--fixture", "lorenz", "--method", "global", "--Y", BALL, "--pcap", "1e3", "--out", str(out)]) == 0
    design = str(out / "design.json")
    assert main(["verify", "--fixture", "lorenz", "--design", design, "--samples", "2000"]) == 0
    assert "consistent" in capsys.readouterr().out
    sim_out = tmp_path / "s"
    args = ["simulate", "--fixture", "lorenz", "--design", design, "--x0", "10,20,30", "--t-end", "2", "--out", str(sim_out)]
    assert main(args) == 0
    rows = (sim_out / "trace.csv").read_text().splitlines()
    assert rows[0].endswith("err2")
    assert float(rows[-1].split(",")[-1]) < float(rows[1].split(",")[-1])


def test_simulate_identical_start(tmp_path):
    out = tmp_path / "s"
    args = ["simulate", "--fixture", "lorenz", "--L=-10,-13.3,0", "--x0", "1,2,3", "--xhat0", "1,2,3", "--t-end", "1", "--out", str(out)]
    assert main(args) == 0
    err = [float(r.split(",")[-1]) for r in (out / "trace.csv").read_text().splitlines()[1:]]
    assert max(err) == 0.0


def test_simulate_blow_up(tmp_path):
    path = tmp_path / "up.json"
    save_model(build_system(10 * np.eye(1), np.zeros((1, 1, 1)), [[1.0]]), path)
    assert main(["simulate", "--model", str(path), "--x0", "1", "--t-end", "10", "--dt", "0.01"]) == 4


def test_verify_reference_pair(capsys):
    args = ["verify", "--fixture", "lorenz", "--L=-9.6,-704.4,0", "--P", "diag:132.4,0.8,0.8", "--Y", BALL]
    assert main(args) == 0
    assert "consistent" in capsys.readouterr().out


def test_verify_unstable_gain():
    args = ["verify", "--fixture", "lorenz", "--L", "0,0,0", "--P", "diag:1,1,1", "--Y", "ball:1@0,0,0", "--samples", "100"]
    assert main(args) == 5


def test_synth_infeasible(tmp_path):
    path = tmp_path / "x3.json"
    save_model(fixtures.lorenz(C=(0.0, 0.0, 1.0)), path)
    assert main(["synth", "--model", str(path), "--method", "local", "--Y", BALL]) == 3


def test_region_grammar(tmp_path):
    b = parse_region("ball:2@1,0", 2)
    assert isinstance(b, Ball2) and b.r == 2 and np.array_equal(b.center, [1, 0])
    assert isinstance(parse_region("l1:2.8431@-0.9477,0,0", 3), Ball1)
    poly = tmp_path / "p.json"
    poly.write_text(json.dumps({"vertices": [[0, 0], [1, 0], [0, 1]]}))
    assert isinstance(parse_region(f"poly:{poly}", 2), Polytope)
    for bad in ["ball:1@0", "cube:1@0,0", "ball:x@0,0", "ball:-1@0,0"]:
        with pytest.raises((ParseError, ValueError)):
            parse_region(bad, 2)


def test_kerq_and_matrix_grammar():
    B = parse_kerq("e2,e3", 3)
    assert B.shape == (3, 2)
    with pytest.raises(ParseError):
        parse_kerq("e4", 3)
    assert np.array_equal(parse_matrix("diag:1,2"), np.diag([1.0, 2.0]))
    assert parse_matrix("1,2,3", 3, 1).shape == (3, 1)
    assert np.array_equal(parse_matrix("1,2;3,4"), [[1, 2], [3, 4]])


def test_deterministic_outputs(tmp_path):
    for k in range(2):
        assert main(["trap", "--fixture", "lorenz", "--kerq", "e2,e3", "--out", str(tmp_path / f"r{k}")]) == 0
    assert (tmp_path / "r0" / "trap.json").read_text() == (tmp_path / "r1" / "trap.json").read_text()
