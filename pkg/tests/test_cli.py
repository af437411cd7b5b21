import json
import subprocess
import sys

import pytest

from causal_dro.cli import main
from causal_dro.measures import dump_tree, load_tree


@pytest.fixture
def files(tmp_path, leak_pair):
    mu, nu = leak_pair
    (tmp_path / "mu.json").write_text(dump_tree(mu))
    (tmp_path / "nu.json").write_text(dump_tree(nu))
    return tmp_path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("mode, expected", [("bicausal", 3.0), ("classic", 1.0), ("causal-lp", 1.0)])
def test_ot(files, capsys, mode, expected):
    code, out, _ = run(capsys, "ot", "--mu", files / "mu.json", "--nu", files / "nu.json", "--mode", mode,
                       "--coupling-out", files / "pi.csv")
    assert code == 0 and float(out) == pytest.approx(expected)
    assert (files / "pi.csv").read_text().startswith("mu_path_index,nu_path_index,weight")


def test_ot_cap_exit_code(files, capsys):
    code, _, err = run(capsys, "ot", "--mu", files / "mu.json", "--nu", files / "nu.json", "--mode", "classic",
                       "--cap", 1)
    assert code == 1 and "cap" in err


def test_missing_and_invalid_input(files, capsys):
    assert run(capsys, "ot", "--mu", files / "nope.json", "--nu", files / "nu.json")[0] == 2
    (files / "bad.json").write_text('{"horizon": 2, "dims": [1, 1], "nodes": []}')
    code, _, err = run(capsys, "ot", "--mu", files / "bad.json", "--nu", files / "nu.json")
    assert code == 2 and "no nodes" in err
    assert run(capsys, "dro", "--mu", files / "mu.json", "--payoff", "digital:1")[0] == 2
    assert run(capsys, "dro", "--mu", files / "mu.json", "--payoff", "terminal_quadratic",
               "--penalty", "cone:1")[0] == 2
    with pytest.raises(SystemExit) as e:
        main(["ot", "--mu"])
    assert e.value.code == 2


def test_dro_with_oracle(files, capsys):
    code, out, _ = run(capsys, "dro", "--mu", files / "mu.json", "--payoff", "lookback_call:0.5",
                       "--penalty", "ball:0.1", "--grid", "around:0.5:5", "--oracle")
    doc = json.loads(out)
    assert code == 0 and abs(doc["oracle_gap"]) <= 1e-6 and doc["mode"] == "causal"


def test_dro_curve_csv(files, capsys):
    out_file = files / "curve.csv"
    code, _, _ = run(capsys, "dro", "--mu", files / "mu.json", "--payoff", "sum_quadratic",
                     "--deltas", "0,0.1,0.5", "--grid", "around:1:9", "--out", out_file)
    rows = out_file.read_text().splitlines()
    assert code == 0 and rows[0] == "delta,value" and len(rows) == 4
    vals = [float(r.split(",")[1]) for r in rows[1:]]
    assert vals == sorted(vals) and vals[0] == pytest.approx(2.0)  # E[X1^2 + X2^2] = 2


def test_avar_small(capsys):
    code, out, _ = run(capsys, "avar", "--atoms", 3, "--strikes", "0.9:1.1:0.1", "--points", 7)
    lines = out.splitlines()
    assert code == 0 and lines[0] == "strike,standard,causal,classical" and len(lines) == 4
    assert run(capsys, "avar", "--strikes", "1.5:0.5:0.1")[0] == 2
    assert run(capsys, "avar", "--alpha", 1.5)[0] == 2


def test_lq(capsys):
    code, out, _ = run(capsys, "lq", "--delta", 0)
    assert code == 0 and json.loads(out)["value"] == pytest.approx(4.1)  # classical A=B=1, N=3, v_w=1
    code, out, _ = run(capsys, "lq", "--grid-check", "--grid-step", 0.5)
    doc = json.loads(out)
    assert code == 0 and abs(doc["grid_check"]["difference"]) <= doc["grid_check"]["error_bound"]
    assert run(capsys, "lq", "--N", 1)[0] == 2


def test_control(tmp_path, capsys):
    doc = {
        "states": [[-1, 0, 1], [-1, 0, 1]],
        "actions": [[-1, 0, 1]],
        "noise": [{"values": [0], "probs": [1]}],
        "initial": {"values": [1], "probs": [1]},
        "dynamics": {"kind": "affine", "A": 1, "B": 1},
        "stage_cost": {"kind": "quadratic", "action": 1},
        "obs_cost": {"kind": "table", "values": [[0, 0, 0], [1, 0, 1]]},
    }
    (tmp_path / "p.json").write_text(json.dumps(doc))
    code, out, _ = run(capsys, "control", "--problem", tmp_path / "p.json", "--penalty", "ball:0.5",
                       "--oracle", "--policy-out", tmp_path / "pol.json")
    rep = json.loads(out)
    assert code == 0 and abs(rep["oracle_gap"]) <= 1e-6
    assert "steps" in json.loads((tmp_path / "pol.json").read_text())
    (tmp_path / "bad.json").write_text("{}")
    assert run(capsys, "control", "--problem", tmp_path / "bad.json")[0] == 2


def test_stopping(files, capsys):
    code, out, _ = run(capsys, "stopping", "--demo")
    d = json.loads(out)
    assert code == 0 and (d["J_nu1"], d["J_nu2"], d["J_plain_mixture"], d["J_augmented"]) == (1, 3, 1.5, 2)
    code, out, _ = run(capsys, "stopping", "--mu", files / "mu.json", "--penalty", "ball:0.2", "--oracle")
    rep = json.loads(out)
    assert code == 0 and abs(rep["oracle_gap"]) <= 1e-6 and rep["mode"] == "bicausal-relaxed"
    assert run(capsys, "stopping")[0] == 2
    assert run(capsys, "stopping", "--mu", files / "mu.json", "--payoff", "digital")[0] == 2


def test_gen_random_roundtrip(tmp_path, capsys):
    code, out, _ = run(capsys, "gen-random", 3, 2, 2, 17)
    t = load_tree(out)
    assert code == 0 and t.horizon == 3 and t.dims == (2, 2, 2)
    assert run(capsys, "gen-random", 3, 2, 2, 17)[1] == out  # seeded
    assert run(capsys, "gen-random", 0, 2, 1, 1)[0] == 2


def test_module_entry_point(files):
    res = subprocess.run([sys.executable, "-m", "causal_dro.cli", "ot", "--mu", str(files / "mu.json"),
                          "--nu", str(files / "nu.json")], capture_output=True, text=True)
    assert res.returncode == 0 and float(res.stdout) == pytest.approx(3.0)


def test_outputs_are_deterministic(files, capsys):
    argv = ("dro", "--mu", files / "mu.json", "--payoff", "increment_call:1", "--penalty", "quad:0.5")
    first = run(capsys, *argv)[1]
    assert run(capsys, *argv)[1] == first
