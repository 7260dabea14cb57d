import csv
import json
import os
import shutil
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from lindwedge import cli
from lindwedge.channel import pauli_channel, transpose_channel
from lindwedge.controllability import SpinGraph, ising_system
from lindwedge.lindblad import LindbladGenerator, StateValidationError, amplitude_damping, dephasing, depolarizing
from lindwedge.operator_core import SX, SY, SZ
from lindwedge.problem import channel_to_dict, encode_matrix, problem_to_dict

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def write(path: Path, doc) -> str:
    path.write_text(json.dumps(doc))
    return str(path)


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


def report(path) -> dict:
    return json.loads(Path(path).read_text())


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


def test_simulate_amplitude_damping(tmp_path):
    prob = write(tmp_path / "ad.json", problem_to_dict(amplitude_damping(0.7)))
    out = tmp_path / "traj.csv"
    assert run("simulate", "--problem", prob, "--t-final", 5, "--steps", 50,
               "--initial-state", "excited", "--out", out) == 0
    cols = read_csv(out)
    assert np.allclose(cols["rho_11_re"], np.exp(-0.7 * cols["time"]), atol=1e-12)
    assert np.all(np.diff(cols["rho_11_re"]) < 0)
    assert np.allclose(cols["trace_distance_to_steady_state"], 2 * np.exp(-0.7 * cols["time"]), atol=1e-12)


def test_simulate_zero_generator_is_constant(tmp_path):
    prob = write(tmp_path / "zero.json", problem_to_dict(LindbladGenerator(np.zeros((2, 2)), [], [])))
    out = tmp_path / "traj.csv"
    assert run("simulate", "--problem", prob, "--t-final", 1, "--steps", 5, "--initial-state", "mixed",
               "--out", out) == 0
    cols = read_csv(out)
    for k, v in cols.items():
        if k != "time":
            assert np.all(v == v[0]), k


def test_simulate_controls_and_state_file(tmp_path):
    prob = write(tmp_path / "d.json", problem_to_dict(dephasing(0.2, SZ, [SX])))
    state = write(tmp_path / "rho.json", encode_matrix(np.diag([0.25, 0.75])))
    out = tmp_path / "traj.csv"
    assert run("simulate", "--problem", prob, "--t-final", 1, "--steps", 4, "--initial-state", state,
               "--controls", "0.5", "--out", out) == 0
    cols = read_csv(out)
    assert cols["rho_00_re"][0] == 0.25 and np.all(cols["purity"][1:] <= cols["purity"][:-1] + 1e-12)
    assert run("simulate", "--problem", prob, "--t-final", 1, "--controls", "0.5,1") == 2


def test_malformed_json_exits_2_without_output(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text('{"schema_version": 1, "dim": 2,,}')
    out = tmp_path / "traj.csv"
    assert run("simulate", "--problem", bad, "--t-final", 1, "--out", out) == 2
    assert not out.exists() and "line 1" in capsys.readouterr().err
    assert [p.name for p in tmp_path.iterdir()] == ["bad.json"]


def test_schema_error_names_field(tmp_path, capsys):
    doc = problem_to_dict(dephasing(0.2))
    doc["lindblad_ops"][0]["rows"] = "two"
    assert run("check-generator", "--problem", write(tmp_path / "p.json", doc)) == 2
    assert "lindblad_ops.0.rows" in capsys.readouterr().err
    doc = problem_to_dict(dephasing(0.2))
    doc["drift_hamiltonian"] = encode_matrix(np.eye(3))
    assert run("check-generator", "--problem", write(tmp_path / "p.json", doc)) == 2
    assert "drift_hamiltonian" in capsys.readouterr().err
    doc = problem_to_dict(dephasing(0.2))
    doc["schema_version"] = 7
    assert run("check-generator", "--problem", write(tmp_path / "p.json", doc)) == 2
    assert run("check-generator", "--problem", tmp_path / "missing.json") == 2


def test_state_validation_failure_exits_3(tmp_path, monkeypatch):
    def broken(*a, **k):
        raise StateValidationError("lambda_min -1e-3 at step 2", 2, 0.2)

    monkeypatch.setattr(cli, "propagate", broken)
    out = tmp_path / "traj.csv"
    prob = write(tmp_path / "ad.json", problem_to_dict(amplitude_damping(0.7)))
    assert run("simulate", "--problem", prob, "--t-final", 1, "--out", out) == 3
    assert not out.exists()


def test_check_generator_dephasing(tmp_path):
    out = tmp_path / "r.json"
    assert run("check-generator", "--problem", PROBLEMS / "dephasing.json", "--out", out) == 0
    r = report(out)
    w = r["results"]["wedge_membership"]
    assert w["is_member"] and np.allclose(sorted(w["kossakowski_spectrum"], reverse=True), [1.0, 0, 0], atol=1e-12)
    assert r["results"]["unital"]["value"] and r["results"]["purity_decreasing"]["value"]
    assert r["command"] == "check-generator" and len(r["input_digest"]) == 64
    assert "tol" in r["results"]["unital"] and r["tolerances"]["membership"] == 1e-8
    assert "wall_time_s" in report(tmp_path / "r.timing.json")


def test_check_channel_examples(tmp_path):
    out = tmp_path / "t.json"
    assert run("check-channel", "--matrix-file", PROBLEMS / "transpose_channel.json", "--out", out) == 0
    cp = report(out)["results"]["completely_positive"]
    assert cp["value"] is False and cp["min_choi_eigenvalue"] == pytest.approx(-1.0)
    out = tmp_path / "p.json"
    assert run("check-channel", "--matrix-file", PROBLEMS / "pauli_channel.json", "--t-eff", 1, "--out", out) == 0
    r = report(out)["results"]
    assert r["completely_positive"]["value"] and r["markovianity"]["verdict"] == "not-TI-Markovian(no real log)"
    assert r["effective_liouvillian"]["exists"] is False


def test_check_channel_effective_liouvillian(tmp_path):
    from lindwedge.lindblad import full_generator
    from lindwedge.operator_core import expm

    l_hat = full_generator(amplitude_damping(0.4, 0.3 * SX))
    path = write(tmp_path / "c.json", channel_to_dict(expm(-2.0 * l_hat)))
    out = tmp_path / "r.json"
    assert run("check-channel", "--matrix-file", path, "--t-eff", 2.0, "--out", out) == 0
    r = report(out)["results"]
    assert r["markovianity"]["verdict"] == "TI-Markovian"
    eff = r["effective_liouvillian"]
    g = np.array(eff["generator"]["re"]) + 1j * np.array(eff["generator"]["im"])
    assert np.max(np.abs(g.reshape(4, 4) - l_hat)) <= 1e-8


def test_check_channel_rejects_non_square(tmp_path):
    doc = channel_to_dict(np.eye(3))
    assert run("check-channel", "--matrix-file", write(tmp_path / "c.json", doc)) == 2


def test_controllability_ising(tmp_path):
    out = tmp_path / "r.json"
    assert run("controllability", "--problem", PROBLEMS / "ising_2.json", "--out", out) == 0
    r = report(out)["results"]
    assert r["closed_system"]["k_d_dim"] == 15 and r["closed_system"]["controllable"]
    assert r["spin_graph"]["group"] == "SU(4)" and r["spin_graph"]["verified"]
    assert run("controllability", "--problem", PROBLEMS / "ising_2.json", "--spin-graph-only", "--out", out) == 0
    assert set(report(out)["results"]) == {"spin_graph"}
    assert run("controllability", "--problem", PROBLEMS / "dephasing.json", "--spin-graph-only") == 2


def test_controllability_depolarizing(tmp_path):
    out = tmp_path / "r.json"
    assert run("controllability", "--problem", PROBLEMS / "depolarizing_x_gate.json", "--out", out) == 0
    wh = report(out)["results"]["wh_controllability"]
    assert wh["sufficient_condition_met"] and wh["gamma"] == pytest.approx(0.05, abs=1e-10)


def test_controllability_non_unital_and_empty_controls(tmp_path):
    out = tmp_path / "r.json"
    prob = write(tmp_path / "ad.json", problem_to_dict(amplitude_damping(0.3)))
    assert run("controllability", "--problem", prob, "--out", out) == 0
    r = report(out)["results"]
    assert r["h_controllability"]["k_c_dim"] == 0
    assert r["accessibility"]["accessible"] is None


def test_closure_variants(tmp_path, capsys):
    out = tmp_path / "r.json"
    assert run("closure", "--problem", PROBLEMS / "dephasing.json", "--which", "open", "--out", out) == 0
    assert report(out)["results"]["dim"] == 9
    assert run("closure", "--problem", PROBLEMS / "dephasing.json", "--which", "kc", "--dump-basis",
               "--out", out) == 0
    r = report(out)["results"]
    assert r["dim"] == 3 and len(r["basis"]) == 3
    prob = write(tmp_path / "ad.json", problem_to_dict(amplitude_damping(0.3)))
    assert run("closure", "--problem", prob, "--which", "open") == 2


def test_optimize_grape_x_gate(tmp_path):
    out = tmp_path / "x.json"
    assert run("optimize", "--problem", PROBLEMS / "x_gate.json", "--method", "grape",
               "--threshold", "0.999999", "--out", out) == 0
    r = report(out)["results"]
    assert r["fidelity"] >= 1 - 1e-6 and r["reached"]
    pulse = report(tmp_path / "x.pulse.json")
    assert np.array(pulse["amplitudes"]).shape == (20, 2)
    trace = read_csv(tmp_path / "x.trace.csv")
    assert np.all(np.diff(trace["fidelity"]) >= 0) and trace["fidelity"][-1] == r["fidelity"]


def test_optimize_unreachable_threshold_exits_4(tmp_path):
    out = tmp_path / "x.json"
    assert run("optimize", "--problem", PROBLEMS / "x_gate.json", "--iters", 2,
               "--threshold", "0.9999999", "--out", out) == 4
    assert report(out)["results"]["reached"] is False


def test_optimize_wedge(tmp_path):
    from lindwedge.lindblad import full_generator, hamiltonian_superop
    from lindwedge.operator_core import expm

    target = expm(-(1j * hamiltonian_superop(SZ) + (full_generator(dephasing(0.5)))))
    doc = problem_to_dict(dephasing(0.5), cone={"samples": 16, "seed": 0},
                          targets={"target_map": encode_matrix(target)})
    out = tmp_path / "w.json"
    assert run("optimize", "--problem", write(tmp_path / "p.json", doc), "--method", "wedge",
               "--restarts", 1, "--out", out) == 0
    r = report(out)["results"]
    assert r["residual"] <= 1e-6 and r["factors_cp"]["value"]
    assert report(tmp_path / "w.product.json")["n"] == r["n"]
    assert "residual" in read_csv(tmp_path / "w.trace.csv")


def test_optimize_wedge_pauli_example(tmp_path):
    out = tmp_path / "w.json"
    assert run("optimize", "--problem", PROBLEMS / "pauli_wedge.json", "--method", "wedge", "--n-max", 3,
               "--restarts", 1, "--out", out) == 0
    assert report(out)["results"]["residual"] <= 1e-6


def test_optimize_requires_target(tmp_path):
    assert run("optimize", "--problem", PROBLEMS / "dephasing.json") == 2


def test_sweep_on_wh_system(tmp_path):
    out = tmp_path / "s.json"
    assert run("sweep", "--problem", PROBLEMS / "depolarizing_x_gate.json", "--t-grid", "0.5:2.5:5",
               "--iters", 200, "--out", out) == 0
    r = report(out)["results"]
    assert r["gamma_source"] == "WH test" and r["gamma"] == pytest.approx(0.05)
    table = read_csv(tmp_path / "s.sweep.csv")
    assert np.allclose(table["g_scaled"], table["g"] * np.exp(-0.05 * table["T"]))
    assert r["t_prime_star"] == table["T"][np.argmax(table["g_scaled"])]
    assert run("sweep", "--problem", PROBLEMS / "depolarizing_x_gate.json", "--t-grid", "2,1") == 2


def test_mintime(tmp_path):
    doc = problem_to_dict(LindbladGenerator(np.zeros((2, 2)), [SX], []),
                          targets={"target_unitary": encode_matrix(SX), "segments": 4, "amplitude_bound": 1.0})
    prob = write(tmp_path / "p.json", doc)
    out = tmp_path / "m.json"
    assert run("mintime", "--problem", prob, "--t-grid", "1.2:2.0:9", "--threshold", "0.999999",
               "--iters", 200, "--out", out) == 0
    assert report(out)["results"]["t_upper_bound"] == pytest.approx(1.6)
    assert run("mintime", "--problem", prob, "--t-grid", "0.5,1.0", "--threshold", "0.999999",
               "--iters", 50, "--out", out) == 4
    assert run("mintime", "--problem", prob, "--t-grid", "1") == 2


@pytest.mark.parametrize("argv", [
    ["check-generator", "--problem", PROBLEMS / "dephasing.json"],
    ["check-channel", "--matrix-file", PROBLEMS / "pauli_channel.json", "--t-eff", "1"],
    ["controllability", "--problem", PROBLEMS / "ising_2.json"],
    ["closure", "--problem", PROBLEMS / "dephasing.json", "--which", "open"],
    ["optimize", "--problem", PROBLEMS / "x_gate.json", "--iters", "20", "--seed", "3"],
    ["sweep", "--problem", PROBLEMS / "depolarizing_x_gate.json", "--t-grid", "1,2", "--iters", "20"],
])
def test_reports_are_byte_identical(tmp_path, argv):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    assert run(*argv, "--out", a) == 0
    assert run(*argv, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()


def test_tolerance_profile_env(tmp_path, monkeypatch):
    out = tmp_path / "r.json"
    monkeypatch.setenv("LINDWEDGE_TOL_PROFILE", "strict")
    assert run("check-generator", "--problem", PROBLEMS / "dephasing.json", "--out", out) == 0
    assert report(out)["tolerances"]["membership"] == pytest.approx(1e-9)
    monkeypatch.setenv("LINDWEDGE_TOL_PROFILE", "bogus")
    assert run("check-generator", "--problem", PROBLEMS / "dephasing.json") == 2


def test_tolerance_override_in_file(tmp_path):
    doc = problem_to_dict(dephasing(0.2), tolerances={"membership": 1e-4})
    out = tmp_path / "r.json"
    assert run("check-generator", "--problem", write(tmp_path / "p.json", doc), "--out", out) == 0
    assert report(out)["tolerances"]["membership"] == 1e-4
    doc["tolerances"] = {"nonsense": 1.0}
    assert run("check-generator", "--problem", write(tmp_path / "p.json", doc)) == 2


def test_console_script(tmp_path):
    exe = shutil.which("lindwedge")
    cmd = [exe] if exe else [sys.executable, "-m", "lindwedge"]
    proc = subprocess.run(cmd + ["closure", "--problem", str(PROBLEMS / "dephasing.json"), "--which", "kd"],
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0 and json.loads(proc.stdout)["results"]["dim"] == 3
    proc = subprocess.run(cmd + ["simulate"], capture_output=True, text=True, check=False)
    assert proc.returncode == 2
