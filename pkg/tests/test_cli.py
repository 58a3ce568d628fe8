import csv
import json
import shutil
import subprocess
import sys

import pytest

from coordloop.cli import derive_seed, main
from coordloop.coordinator import CoordinationTrajectory
from coordloop.faults import FaultSpec, inject
from coordloop.scenarios import shipped_path


@pytest.fixture
def ref1(tmp_path, shipped):
    p = tmp_path / "ref1.json"
    p.write_text(shipped["example1"].reference.to_json())
    return p


def test_verify_reference_accepts(tmp_path, ref1, capsys):
    out = tmp_path / "v"
    assert main(["verify", "example1", str(ref1), "--out", str(out)]) == 0
    for name in ("manifest.json", "trajectory.jsonl", "evidence.json", "metrics.json", "pipeline.json"):
        assert (out / name).exists(), name
    assert "has_fail: false" in capsys.readouterr().out
    metrics = json.loads((out / "metrics.json").read_text())
    assert metrics["obj_gap"] == 0.0 and metrics["obj_match"]
    traj = CoordinationTrajectory.from_jsonl((out / "trajectory.jsonl").read_text())
    assert traj.converged


def test_verify_sign_flip_with_noop_is_rejected(tmp_path, shipped):
    s = shipped["example1"]
    ir_path, _ = inject(s.reference, FaultSpec("sign_flip"), s).write(tmp_path / "cands")
    out = tmp_path / "v"
    assert main(["verify", str(shipped_path("example1")), str(ir_path), "--oracle", "noop", "--repairs", "1", "--out", str(out)]) == 1
    pipe = json.loads((out / "pipeline.json").read_text())
    assert pipe["detected"] and not pipe["accepted"] and pipe["repairs"] == 1


def test_verify_with_sidecar_and_ground_truth(tmp_path, shipped):
    s = shipped["example1"]
    ir_path, _ = inject(s.reference, FaultSpec("interface_mismatch"), s).write(tmp_path / "cands")
    out = tmp_path / "v"
    assert main(["verify", "example1", str(ir_path), "--out", str(out)]) == 0
    hist = json.loads((out / "pipeline.json").read_text())["history"]
    assert hist[0]["stage"] == "local" and hist[0]["local_errors"]


def test_verify_exec_oracle(tmp_path, shipped):
    s = shipped["example1"]
    ir_path, _ = inject(s.reference, FaultSpec("degenerate"), s).write(tmp_path / "cands")
    ref = tmp_path / "reply.json"
    ref.write_text(json.dumps({"action": "Reformulate", "formulation": s.reference.to_dict()}))
    script = tmp_path / "o.py"
    script.write_text(f"import sys\nsys.stdin.read()\nprint(open({str(ref)!r}).read())\n")
    oracle = f"exec:{sys.executable} {script}"
    assert main(["verify", "example1", str(ir_path), "--oracle", oracle, "--out", str(tmp_path / "v")]) == 0


@pytest.mark.parametrize(
    "args",
    [
        ["verify", "example1", "missing.json"],
        ["verify", "nowhere.json", "missing.json"],
        ["verify", "example1", "{candidate}", "--oracle", "carrier-pigeon"],
        ["matrix", "not_a_dir"],
    ],
)
def test_errors_exit_2(tmp_path, ref1, args):
    args = [a.replace("{candidate}", str(ref1)) for a in args]
    assert main([*args, "--out", str(tmp_path / "o")]) == 2


@pytest.mark.parametrize("args", [["coordinate", "example1", "--max-iter", "x"], ["verify"], ["matrix", ".", "--evidence", "vibes"]])
def test_usage_errors_exit_2(args):
    with pytest.raises(SystemExit) as e:
        main(args)
    assert e.value.code == 2


def test_coordinate_iteration_cap(tmp_path):
    out = tmp_path / "c"
    assert main(["coordinate", "example1", "--max-iter", "5", "--out", str(out)]) == 0
    traj = CoordinationTrajectory.from_jsonl((out / "trajectory.jsonl").read_text())
    assert traj.reason == "iteration_cap"
    rows = list(csv.DictReader((out / "residuals.csv").open()))
    assert [int(r["k"]) for r in rows] == [1, 2, 3, 4, 5]
    assert set(rows[0]) == {"k", "r", "s", "rho_scale"}


def test_coordinate_converges(tmp_path):
    out = tmp_path / "c"
    assert main(["coordinate", "example1", "--out", str(out)]) == 0
    assert CoordinationTrajectory.from_jsonl((out / "trajectory.jsonl").read_text()).converged


def test_matrix_empty_dir(tmp_path):
    d = tmp_path / "empty"
    d.mkdir()
    assert main(["matrix", str(d), "--out", str(tmp_path / "m")]) == 0
    assert (tmp_path / "m" / "matrix.csv").read_text().count("\n") == 1
    assert json.loads((tmp_path / "m" / "matrix.json").read_text())["rows"] == []


def test_matrix_static_misses_behavioral_bug(tmp_path):
    d = tmp_path / "scen"
    d.mkdir()
    for name in ("example2.json", "candidate_example2_spurious_production.json"):
        shutil.copy(shipped_path(name[:-5]), d / name)
    out = tmp_path / "m"
    args = ["matrix", str(d), "--kinds", "missing_cost", "--evidence", "static,behavioral", "--jobs", "1", "--out", str(out)]
    assert main(args) == 0
    rows = {(r["candidate"], r["evidence_mode"]): r for r in csv.DictReader((out / "matrix.csv").open())}
    assert rows[("example2_spurious_production", "static")]["detected"] == "0"
    assert rows[("example2_spurious_production", "behavioral")]["detected"] == "1"
    assert rows[("example2_spurious_production", "behavioral")]["accepted"] == "1"
    miss = next(k for k in rows if k[0].startswith("example2:missing_cost") and k[1] == "static")
    assert rows[miss]["detected"] == "1" and rows[miss]["obj_gap"] == "0.0"
    assert (out / "candidates" / "example2_spurious_production" / "static" / "pipeline.json").exists()


def test_matrix_parallel_equals_serial(tmp_path):
    d = tmp_path / "scen"
    d.mkdir()
    shutil.copy(shipped_path("example1"), d / "example1.json")
    base = ["matrix", str(d), "--kinds", "sign_flip,degenerate", "--evidence", "full"]
    assert main([*base, "--jobs", "1", "--out", str(tmp_path / "a")]) == 0
    assert main([*base, "--jobs", "2", "--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "matrix.csv").read_text() == (tmp_path / "b" / "matrix.csv").read_text()


def test_replay_reproduces_artifacts(tmp_path, ref1):
    out = tmp_path / "v"
    main(["verify", "example1", str(ref1), "--out", str(out)])
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "r")]) == 0
    for name in ("trajectory.jsonl", "evidence.json", "metrics.json", "pipeline.json"):
        assert (out / name).read_bytes() == (tmp_path / "r" / name).read_bytes()
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((tmp_path / "r" / "manifest.json").read_text())
    for m in (a, b):
        m.pop("created")
        m.pop("wall_time")
    assert a == b


def test_replay_refuses_changed_inputs(tmp_path, ref1):
    out = tmp_path / "v"
    main(["verify", "example1", str(ref1), "--out", str(out)])
    ref1.write_text(ref1.read_text() + " ")
    assert main(["replay", str(out / "manifest.json")]) == 2


def test_manifest_snapshot(tmp_path, ref1):
    out = tmp_path / "v"
    main(["verify", "example1", str(ref1), "--seed", "3", "--out", str(out)])
    m = json.loads((out / "manifest.json").read_text())
    assert m["config"]["seed"] == 3 and m["config"]["oracle"] == "ground-truth"
    assert m["coordination"]["max_iter"] == 300
    assert m["counterparty"]["backlog_penalty"] == 2.0
    assert set(m["artifacts"]) == {"trajectory.jsonl", "evidence.json", "metrics.json", "pipeline.json"}


def test_seed_splitting_is_stable():
    assert derive_seed(0, "evidence") == derive_seed(0, "evidence")
    assert derive_seed(0, "evidence") != derive_seed(0, "faults")
    assert derive_seed(0, "evidence") != derive_seed(1, "evidence")


def test_module_entry_point(tmp_path):
    done = subprocess.run([sys.executable, "-m", "coordloop.cli", "coordinate", "example1", "--max-iter", "2",
                           "--out", str(tmp_path / "c")], capture_output=True, text=True)
    assert done.returncode == 0, done.stderr
    assert "iteration_cap" in done.stdout
