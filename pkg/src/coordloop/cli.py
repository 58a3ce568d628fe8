"""Command-line entry point.

Subcommands:

``verify SCENARIO CANDIDATE``   run one repair pipeline; exit 0 iff accepted
``matrix SCENARIO_DIR``         inject faults, run pipelines per evidence mode
``coordinate SCENARIO``         evaluation run of the reference pair
``replay MANIFEST``             re-run a recorded manifest and compare artifacts

Exit codes: 0 success or accepted, 1 not accepted (or replay mismatch),
2 I/O, schema or usage errors.

Every run writes ``manifest.json`` next to its artifacts. The manifest holds
the full config snapshot, input hashes and artifact hashes; only its
``created`` and ``wall_time`` fields vary between identical runs.

Seeds: ``--seed`` is split per component with ``numpy.random.SeedSequence``
keyed by a CRC32 of the component name (``evidence``, ``faults``); see
:func:`derive_seed`.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .agents import Counterparty, IRAgent
from .coordinator import (
    AGENT_FAILURE,
    EVALUATION,
    MODE_CAPS,
    VERIFICATION,
    CoordinationConfig,
    coord_run,
)
from .diagnosis import DEFAULT_BUDGET, run_pipeline
from .evidence import MODES
from .faults import KINDS, fault_matrix, read_candidate
from .formulation import FormulationIR, IRFormatError, PatchRejected
from .metrics import evaluate
from .oracles import make_oracle
from .qpsolver import CompileError, SolverFailure
from .scenarios import SHIPPED, ParseError, SchemaError, load_candidate, load_scenario, resolve_scenario

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1


class UsageError(ValueError):
    pass


def derive_seed(seed: int, component: str) -> int:
    ss = np.random.SeedSequence([int(seed), zlib.crc32(component.encode())])
    return int(ss.generate_state(1)[0])


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write(out: Path, name: str, text: str, artifacts: dict) -> Path:
    p = out / name
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)
    artifacts[name] = _sha(p)
    return p


def _input_ref(ref: str) -> dict:
    if ref in SHIPPED and not Path(ref).exists():
        return {"ref": ref, "shipped": True}
    p = Path(ref).resolve()
    return {"ref": str(p), "sha256": _sha(p)}


def _oracle_kind(flag: str) -> tuple[str, str | None]:
    if flag in ("ground-truth", "ground_truth"):
        return "ground_truth", None
    if flag == "noop":
        return "noop", None
    if flag.startswith(("exec:", "http:", "https:")):
        return "external", flag
    raise UsageError(f"--oracle must be ground-truth, noop, exec:<cmd> or http:<url>, got {flag!r}")


def _candidate(path: str, scenario):
    """``(ir, agent, repair, label)`` from a plain IR, a labeled candidate, or an IR with a fault sidecar."""
    p = Path(path)
    d = json.loads(p.read_text())
    if p.with_suffix(".fault.json").exists():
        fc = read_candidate(p, scenario.reference)
        return fc.ir, fc.make_agent(), fc.repair, fc.label
    if isinstance(d, dict) and "formulation" in d and "fault_kind" in d:
        lc = load_candidate(p)
        return lc.formulation, None, None, lc.name
    return FormulationIR.from_dict(d), None, None, p.stem


# --- verify ----------------------------------------------------------------------------


def run_verify(cfg: dict, out: Path) -> tuple[int, dict]:
    scenario = resolve_scenario(cfg["scenario"])
    ir, agent, repair, label = _candidate(cfg["candidate"], scenario)
    kind, target = _oracle_kind(cfg["oracle"])
    oracle = make_oracle(kind, scenario.reference, repair, target)
    coord = CoordinationConfig(mode=cfg["mode"])
    seed = derive_seed(cfg["seed"], "evidence")
    res = run_pipeline(scenario, ir, oracle, cfg["repairs"], seed, cfg["evidence"], agent=agent, coordination=coord)
    artifacts: dict = {}
    verified = [a for a in res.history if a.trajectory is not None]
    if verified:
        _write(out, "trajectory.jsonl", verified[-1].trajectory.to_jsonl(), artifacts)
        _write(out, "evidence.json", _dump([a.report.to_json() for a in verified]), artifacts)
    eff = {"repairs": res.repairs, "episodes": res.episodes, "oracle_calls": res.oracle_calls,
           "iterations": sum(len(a.trajectory.records) for a in verified)}
    try:
        m = evaluate(scenario, res.final_ir, res.final_z, seed, eff).to_json()
    except (SolverFailure, CompileError, ValueError) as exc:
        m = {"scenario": scenario.name, "error": str(exc), "efficiency": eff}
    _write(out, "metrics.json", _dump(m), artifacts)
    _write(out, "pipeline.json", _dump({"candidate": label, **res.to_json()}), artifacts)
    for a in verified[-1:]:
        print(a.report.table())
    print(f"{label}: {'accepted' if res.accepted else 'not accepted'} after {res.repairs} repair(s), "
          f"detected={res.detected}")
    extra = {"counterparty": scenario.counterparty.to_json(), "coordination": coord.to_json(),
             "inputs": {"scenario": _input_ref(cfg["scenario"]), "candidate": _input_ref(cfg["candidate"])},
             "wall_time": res.wall_time}
    return (0 if res.accepted else 1), {"artifacts": artifacts, **extra}


# --- matrix ----------------------------------------------------------------------------


def _scenario_files(directory: Path) -> tuple[list[Path], list[Path]]:
    if not directory.is_dir():
        raise FileNotFoundError(f"{directory} is not a directory")
    files = sorted(p for p in directory.glob("*.json") if not p.name.endswith(".fault.json"))
    cands = [p for p in files if p.name.startswith("candidate_")]
    return [p for p in files if p not in cands], cands


def _matrix_task(task):
    scenario, cand, mode, oracle_flag, repairs, seed = task
    kind, target = _oracle_kind(oracle_flag)
    if hasattr(cand, "make_agent"):
        ir, agent, repair, label, fkind, designated = cand.ir, cand.make_agent(), cand.repair, cand.label, cand.kind, cand.designated
    else:
        ir, agent, repair, label, fkind, designated = cand.formulation, None, None, cand.name, cand.kind, cand.designated
    oracle = make_oracle(kind, scenario.reference, repair, target)
    res = run_pipeline(scenario, ir, oracle, repairs, seed, mode, agent=agent)
    first = res.history[0]
    if first.report is None:
        fired = "local" in designated
    else:
        fired = any(first.report.outcome(c).fired for c in designated if c != "local")
    try:
        m = evaluate(scenario, res.final_ir, res.final_z, seed)
        og, sg = round(m.obj_gap, 6), round(m.social_gap, 6)
    except (SolverFailure, CompileError, ValueError):
        og = sg = 100.0
    row = {
        "scenario": scenario.name,
        "candidate": label,
        "fault_kind": fkind,
        "evidence_mode": mode,
        "designated": "+".join(str(c) for c in designated),
        "designated_fired": int(fired),
        "detected": int(res.detected),
        "accepted": int(res.accepted),
        "repairs": res.repairs,
        "episodes": res.episodes,
        "escape_hatch": int(res.escape_hatch),
        "obj_gap": og,
        "social_gap": sg,
    }
    return row, res.to_json()


def run_matrix(cfg: dict, out: Path) -> tuple[int, dict]:
    scen_files, cand_files = _scenario_files(Path(cfg["scenario_dir"]))
    scenarios = [load_scenario(p) for p in scen_files]
    by_name = {s.name: s for s in scenarios}
    cands, skipped = fault_matrix(scenarios, tuple(cfg["kinds"]), derive_seed(cfg["seed"], "faults"))
    labeled = [c for c in (load_candidate(p) for p in cand_files) if c.scenario in by_name]
    seed = derive_seed(cfg["seed"], "evidence")
    tasks = [(by_name[c.scenario], c, mode, cfg["oracle"], cfg["repairs"], seed)
             for c in [*cands, *labeled] for mode in cfg["evidence"]]
    jobs = cfg.get("jobs") or os.cpu_count() or 1
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(tasks))) as pool:
            results = list(pool.map(_matrix_task, tasks))
    else:
        results = [_matrix_task(t) for t in tasks]
    artifacts: dict = {}
    rows = [r for r, _ in results]
    for (row, pj), (_, c, *_rest) in zip(results, tasks):
        stem = row["candidate"].replace(":", "__").replace("/", "_")
        _write(out, f"candidates/{stem}/{row['evidence_mode']}/pipeline.json", _dump(pj), artifacts)
    fields = list(rows[0]) if rows else ["scenario", "candidate", "fault_kind", "evidence_mode"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _write(out, "matrix.csv", buf.getvalue(), artifacts)
    summary = {"rows": rows, "skipped": [{"scenario": s, "kind": k, "reason": r} for s, k, r in skipped]}
    _write(out, "matrix.json", _dump(summary), artifacts)
    sys.stdout.write(buf.getvalue())
    inputs = {"scenarios": [_input_ref(str(p)) for p in scen_files], "candidates": [_input_ref(str(p)) for p in cand_files]}
    return 0, {"artifacts": artifacts, "inputs": inputs}


# --- coordinate ------------------------------------------------------------------------


def run_coordinate(cfg: dict, out: Path) -> tuple[int, dict]:
    scenario = resolve_scenario(cfg["scenario"])
    coord = CoordinationConfig(mode=cfg["mode"], max_iter=cfg["max_iter"])
    agents = [IRAgent(scenario.reference), Counterparty(scenario.counterparty, scenario.dims.public)]
    t0 = time.perf_counter()
    traj = coord_run(agents, coord)
    wall = time.perf_counter() - t0
    artifacts: dict = {}
    _write(out, "trajectory.jsonl", traj.to_jsonl(), artifacts)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["k", "r", "s", "rho_scale"])
    for rec in traj.records:
        w.writerow([rec.k, repr(rec.r), repr(rec.s), repr(float(np.mean(rec.rho.values)))])
    _write(out, "residuals.csv", buf.getvalue(), artifacts)
    print(f"{scenario.name}: {traj.reason} after {len(traj.records)} iteration(s)")
    extra = {"counterparty": scenario.counterparty.to_json(), "coordination": coord.to_json(),
             "inputs": {"scenario": _input_ref(cfg["scenario"])}, "wall_time": wall}
    return (1 if traj.reason == AGENT_FAILURE else 0), {"artifacts": artifacts, **extra}


RUNNERS = {"verify": run_verify, "matrix": run_matrix, "coordinate": run_coordinate}


def execute(cfg: dict, out: Path) -> int:
    """Run ``cfg`` into ``out`` and write its manifest; returns the exit code."""
    out.mkdir(parents=True, exist_ok=True)
    code, info = RUNNERS[cfg["command"]](cfg, out)
    manifest = {
        "version": MANIFEST_VERSION,
        "config": cfg,
        "exit_code": code,
        "created": datetime.now(timezone.utc).isoformat(),
        **info,
    }
    manifest.setdefault("wall_time", None)
    (out / MANIFEST).write_text(_dump(manifest))
    return code


def run_replay(manifest_path: Path, out: Path | None) -> int:
    m = json.loads(Path(manifest_path).read_text())
    if m.get("version") != MANIFEST_VERSION or "config" not in m:
        raise SchemaError(f"{manifest_path}: not a run manifest")
    for ref in _flatten_inputs(m.get("inputs", {})):
        if "sha256" in ref and _sha(Path(ref["ref"])) != ref["sha256"]:
            raise SchemaError(f"input {ref['ref']} changed since the manifest was recorded")
    out = out or Path(manifest_path).parent / "replay"
    execute(m["config"], out)
    fresh = json.loads((out / MANIFEST).read_text())["artifacts"]
    diff = sorted(k for k in set(m["artifacts"]) | set(fresh) if m["artifacts"].get(k) != fresh.get(k))
    for k in diff:
        print(f"artifact differs: {k}", file=sys.stderr)
    print(f"replayed {len(fresh)} artifact(s): {'identical' if not diff else f'{len(diff)} differ'}")
    return 1 if diff else 0


def _flatten_inputs(inputs):
    for v in inputs.values():
        if isinstance(v, dict):
            yield v
        else:
            yield from v


# --- argument parsing -------------------------------------------------------------------


def _evidence_list(raw: str) -> list[str]:
    modes = [m.strip() for m in raw.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise argparse.ArgumentTypeError(f"evidence modes must be drawn from {', '.join(MODES)}")
    return modes


def _nonneg(raw: str) -> int:
    v = int(raw)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _pos(raw: str) -> int:
    v = int(raw)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="coordloop", description="Verify optimization agents through coordination.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, mode_default):
        p.add_argument("--mode", choices=sorted(MODE_CAPS), default=mode_default)
        p.add_argument("--seed", type=_nonneg, default=0)
        p.add_argument("--out", type=Path, default=Path("coordloop-out"))

    v = sub.add_parser("verify", help="run one verify-diagnose-repair pipeline")
    v.add_argument("scenario", help="scenario file or shipped name")
    v.add_argument("candidate", help="candidate formulation file")
    common(v, VERIFICATION)
    v.add_argument("--oracle", default="ground-truth")
    v.add_argument("--repairs", type=_nonneg, default=DEFAULT_BUDGET)
    v.add_argument("--evidence", choices=MODES, default="full")

    m = sub.add_parser("matrix", help="fault-injection detection and repair table")
    m.add_argument("scenario_dir")
    m.add_argument("--oracle", default="ground-truth")
    m.add_argument("--repairs", type=_nonneg, default=DEFAULT_BUDGET)
    m.add_argument("--seed", type=_nonneg, default=0)
    m.add_argument("--evidence", type=_evidence_list, default=list(MODES), help="comma-separated evidence modes")
    m.add_argument("--kinds", type=lambda s: [k for k in s.split(",") if k], default=list(KINDS))
    m.add_argument("--jobs", type=_pos, default=None, help="worker processes (default: logical cores)")
    m.add_argument("--out", type=Path, default=Path("coordloop-out"))

    c = sub.add_parser("coordinate", help="evaluation run of the reference pair")
    c.add_argument("scenario")
    common(c, EVALUATION)
    c.add_argument("--max-iter", type=_pos, default=None)

    r = sub.add_parser("replay", help="re-run a manifest and compare artifacts")
    r.add_argument("manifest", type=Path)
    r.add_argument("--out", type=Path, default=None)
    return ap


def config_from_args(a) -> dict:
    if a.command == "verify":
        _oracle_kind(a.oracle)
        return {"command": "verify", "scenario": _abs(a.scenario), "candidate": _abs(a.candidate), "mode": a.mode,
                "oracle": a.oracle, "repairs": a.repairs, "seed": a.seed, "evidence": a.evidence}
    if a.command == "matrix":
        _oracle_kind(a.oracle)
        bad = [k for k in a.kinds if k not in KINDS]
        if bad:
            raise UsageError(f"unknown fault kind(s) {bad}; have {list(KINDS)}")
        return {"command": "matrix", "scenario_dir": _abs(a.scenario_dir), "oracle": a.oracle, "repairs": a.repairs,
                "seed": a.seed, "evidence": a.evidence, "kinds": a.kinds, "jobs": a.jobs}
    return {"command": "coordinate", "scenario": _abs(a.scenario), "mode": a.mode, "seed": a.seed, "max_iter": a.max_iter}


def _abs(ref: str) -> str:
    if ref in SHIPPED and not Path(ref).exists():
        return ref
    return str(Path(ref).resolve())


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    try:
        if a.command == "replay":
            return run_replay(a.manifest, a.out)
        return execute(config_from_args(a), a.out)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"coordloop: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ParseError, SchemaError, IRFormatError, PatchRejected, KeyError, json.JSONDecodeError) as exc:
        print(f"coordloop: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
