import json
import subprocess
import sys

import numpy as np
import pytest

from skipscope.cli import run
from skipscope.traceio import read_trace_file, write_trace_file

from conftest import make_attention, make_trace


def invoke(*argv):
    return run(list(argv))


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    code = invoke("simulate", "--samples", "24", "--seed", "3", "--emit-traces", "6", "--out-dir", str(out))
    assert code == 0
    return out


def test_simulate_outputs(sim_dir):
    payload = json.loads((sim_dir / "accuracy.json").read_text())
    assert payload["accuracy"] == 1.0
    assert payload["mode"] == "BASELINE"
    assert len(payload["trace_files"]) == 6
    for name in payload["trace_files"]:
        trace, attn = read_trace_file(sim_dir / name)
        assert attn is not None


def test_analyze_writes_outputs(sim_dir, tmp_path):
    out = tmp_path / "a"
    code = invoke(
        "analyze",
        "--trace", str(sim_dir / "sim_trace_000.vlmt"),
        "--trace", str(sim_dir / "sim_trace_001.vlmt"),
        "--out-dir", str(out),
    )
    assert code == 0
    for name in ("profile.csv", "var.csv", "analysis.json", "redundancy.svg", "var.svg"):
        assert (out / name).exists(), name
    payload = json.loads((out / "analysis.json").read_text())
    assert payload["n_traces"] == 2
    assert payload["profile"][0]["layer"] == 1


def test_analyze_deterministic_bytes(sim_dir, tmp_path):
    args = ["analyze", "--trace", str(sim_dir / "sim_trace_000.vlmt")]
    out1, out2 = tmp_path / "r1", tmp_path / "r2"
    assert invoke(*args, "--out-dir", str(out1)) == 0
    assert invoke(*args, "--out-dir", str(out2)) == 0
    for name in ("profile.csv", "var.csv", "analysis.json", "redundancy.svg", "var.svg"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes(), name


def test_analyze_does_not_mutate_input(sim_dir, tmp_path):
    path = sim_dir / "sim_trace_000.vlmt"
    before = path.read_bytes()
    invoke("analyze", "--trace", str(path), "--out-dir", str(tmp_path / "x"))
    assert path.read_bytes() == before


def test_plan_from_traces(sim_dir, tmp_path):
    out = tmp_path / "p"
    args = ["plan"] + [f for i in range(6) for f in ("--trace", str(sim_dir / f"sim_trace_{i:03d}.vlmt"))]
    assert invoke(*args, "--out-dir", str(out)) == 0
    plan = json.loads((out / "plan.json").read_text())
    assert plan["late_entry_layer"] == 4
    assert plan["early_exit_layer"] == 9
    assert (out / "rationale.csv").exists()


def test_plan_from_csv(tmp_path):
    profile_csv = tmp_path / "profile.csv"
    var_csv = tmp_path / "var.csv"
    profile_csv.write_text(
        "layer,modality,mean_cos_dist,proximal_frac,t,n_tokens\n"
        "4,VISION,0.025,0.972,0.05,576\n"
        "8,VISION,0.073,0.267,0.05,576\n"
        "12,VISION,0.060,0.271,0.05,576\n"
    )
    var_csv.write_text(
        "layer,query_token,var_raw,var_normalized,head_count\n"
        "4,0,0.01,0.01,1\n8,0,0.4,0.4,1\n12,0,0.3,0.3,1\n"
    )
    out = tmp_path / "plan"
    code = invoke("plan", "--profile", str(profile_csv), "--var", str(var_csv), "--out-dir", str(out))
    assert code == 0
    plan = json.loads((out / "plan.json").read_text())
    assert plan["late_entry_layer"] == 4
    assert plan["viable_late_entry"] == [0, 4]


def test_verify_exit_zero(tmp_path, capsys):
    code = invoke("verify", "--theorem", "prop1", "--instances", "60", "--seed", "1", "--out-dir", str(tmp_path))
    assert code == 0
    summary = json.loads((tmp_path / "verify.json").read_text())
    assert summary[0]["theorem"] == "prop1"
    assert summary[0]["substantive_failures"] == 0


def test_verify_thm5_thousand_instances(capsys):
    assert invoke("verify", "--theorem", "thm5", "--instances", "1000", "--seed", "1") == 0
    out = json.loads(capsys.readouterr().out)
    assert out[0]["passes"] == 1000
    assert out[0]["substantive_failures"] == 0


def test_verify_lemmas(capsys):
    assert invoke("verify", "--theorem", "lemmas", "--instances", "50", "--seed", "2") == 0
    out = json.loads(capsys.readouterr().out)
    assert {s["theorem"] for s in out} == {
        "lemma:unit_identity",
        "lemma:three_vector",
        "lemma:triangle_am_gm",
        "lemma:kl_cmi",
    }
    assert all(s["passes"] == 50 for s in out)


def test_pid_subcommand(tmp_path, capsys):
    pmf = np.zeros((2, 2, 2))
    for y in range(2):
        for z in range(2):
            pmf[y ^ z, y, z] = 0.25
    path = tmp_path / "xor.json"
    path.write_text(json.dumps({"pmf": pmf.tolist()}))
    assert invoke("pid", "--pmf", str(path)) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["syn"] == pytest.approx(1.0, abs=1e-3)
    assert out["solver_gap"] <= 1e-3


def test_pid_rejects_bad_pmf(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"pmf": [[0.5, 0.5]]}))
    assert invoke("pid", "--pmf", str(path)) == 1  # invalid shape = usage-level error
    path.write_text("not json")
    assert invoke("pid", "--pmf", str(path)) == 2


def test_info_bounds(sim_dir, tmp_path):
    out = tmp_path / "ib"
    code = invoke(
        "info-bounds",
        "--trace", str(sim_dir / "sim_trace_000.vlmt"),
        "--k", "4",
        "--layer", "6",
        "--out-dir", str(out),
    )
    assert code == 0
    lines = (out / "bounds.csv").read_text().splitlines()
    assert lines[0].startswith("layer,modality,k,t,P_t,H_cond_bits,I_bits,fano_upper_bits,mi_lower_bits")
    assert len(lines) == 3  # vision + text rows
    records = json.loads((out / "bounds.json").read_text())
    for r in records:
        if r["applicable_fano"]:
            assert r["H_cond_bits"] <= r["fano_upper_bits"] + 1e-9
        if r["applicable_mi"]:
            assert r["I_bits"] >= r["mi_lower_bits"] - 1e-9


def test_exit_codes(tmp_path):
    assert invoke("analyze", "--trace", str(tmp_path / "missing.vlmt"), "--out-dir", str(tmp_path)) == 2
    assert invoke("nonsense-command") == 1
    assert invoke("analyze") == 1  # missing required --trace
    assert invoke("simulate", "--mode", "late-entry", "--out-dir", str(tmp_path)) == 1  # missing --entry


def test_corrupt_trace_exit_2(tmp_path):
    trace = make_trace()
    path = tmp_path / "t.vlmt"
    write_trace_file(path, trace, make_attention())
    data = bytearray(path.read_bytes())
    data[0:4] = b"JUNK"
    path.write_bytes(bytes(data))
    assert invoke("analyze", "--trace", str(path), "--out-dir", str(tmp_path / "o")) == 2


def test_env_seed_override(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("SKIPSCOPE_SEED", "77")
    out = tmp_path / "env"
    assert invoke("simulate", "--samples", "8", "--emit-traces", "0", "--out-dir", str(out)) == 0
    payload = json.loads((out / "accuracy.json").read_text())
    assert payload["seed"] == 77


def test_console_entrypoint_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "skipscope.cli", "verify", "--theorem", "prop1", "--instances", "5", "--seed", "0"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)[0]["instances"] == 5
