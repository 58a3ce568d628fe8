"""Acceptance criteria, one PASS/FAIL line each (printed in the terminal summary)."""

import json
import time

import numpy as np
import pytest

from coordloop.agents import Counterparty, IRAgent
from coordloop.cli import main
from coordloop.coordinator import EVALUATION, VERIFICATION, CoordinationConfig, adapt_rho, coord_run
from coordloop.core import Dims, PlanTensor
from coordloop.diagnosis import ACCEPT, diagnose, local_validate, run_pipeline
from coordloop.evidence import extract_evidence
from coordloop.faults import fault_matrix
from coordloop.formulation import structurally_equal
from coordloop.metrics import SOCIAL_MATCH_PCT, evaluate, objective_metrics, reference_probes, social_metrics
from coordloop.oracles import GroundTruthOracle, NoopOracle
from coordloop.qpsolver import solve_qp
from coordloop.scenarios import SHIPPED, shipped_candidates

from conftest import ACCEPTANCE_LINES
from protocol import identity_errors
from qp_oracle import enumerate_qp, random_qp


def record(n, ok, summary):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {summary}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


@pytest.fixture(scope="module")
def evaluation_runs(shipped):
    t0 = time.perf_counter()
    runs = {}
    for n in SHIPPED:
        s = shipped[n]
        runs[n] = coord_run([IRAgent(s.reference), Counterparty(s.counterparty, s.dims.public)], CoordinationConfig(mode=EVALUATION))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def matrix(shipped):
    t0 = time.perf_counter()
    cands, skipped = fault_matrix([shipped[n] for n in SHIPPED])
    rows = []
    for c in cands:
        s = shipped[c.scenario]
        agent = c.make_agent()
        local = local_validate(agent, c.ir, s)
        report = None
        if local.ok:
            traj = coord_run([agent, Counterparty(s.counterparty, s.dims.public)], CoordinationConfig(mode=VERIFICATION))
            report = extract_evidence(traj, c.ir, s, mode="full")
        rows.append((c, local, report))
    return rows, skipped, time.perf_counter() - t0


@pytest.fixture(scope="module")
def closures(shipped):
    """Pipelines under both oracles for every injected and shipped-labeled candidate."""
    cases = [(c.label, shipped[c.scenario], c.ir, c.make_agent, c.repair, c.kind) for c in fault_matrix([shipped[n] for n in SHIPPED])[0]]
    cases += [(c.name, shipped[c.scenario], c.formulation, lambda: None, None, c.kind) for c in shipped_candidates()]
    out = []
    for label, s, ir, make_agent, repair, kind in cases:
        gt = run_pipeline(s, ir, GroundTruthOracle(s.reference, repair), budget=3, agent=make_agent())
        noop = run_pipeline(s, ir, NoopOracle(), budget=3, agent=make_agent())
        out.append((label, s, kind, gt, evaluate(s, gt.final_ir, gt.final_z), noop, evaluate(s, noop.final_ir, noop.final_z)))
    return out


def test_criterion_1_protocol_fidelity(evaluation_runs, shipped):
    runs, _ = evaluation_runs
    s = shipped["example2"]
    extra = coord_run([IRAgent(s.reference), Counterparty(s.counterparty, s.dims.public)], CoordinationConfig(mode=VERIFICATION, max_iter=40))
    t0 = time.perf_counter()
    worst = 0.0
    for traj in [*runs.values(), extra]:
        worst = max(worst, max(identity_errors(traj).values()))
    rho = PlanTensor(Dims(1, 1, 2), [1.0, 3.0])
    branches = [
        adapt_rho(rho, 11.0, 1.0).values.tolist() == [2.0, 6.0],
        adapt_rho(rho, 1.0, 11.0).values.tolist() == [0.5, 1.5],
        adapt_rho(rho, 2.0, 1.0).values.tolist() == [1.0, 3.0],
    ]
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and all(branches) and elapsed < 1.0
    record(1, ok, f"max identity error {worst:.2e} (<= 1e-12), adaptation branches {sum(branches)}/3, {elapsed:.2f}s (< 1 s)")
    assert ok


def test_criterion_2_convergence_and_social_optimality(evaluation_runs, shipped):
    runs, elapsed = evaluation_runs
    parts, ok = [], True
    t0 = time.perf_counter()
    for n, traj in runs.items():
        match, gap, _ = social_metrics(traj.final.z, shipped[n].reference, shipped[n].counterparty)
        good = traj.converged and traj.final.r < 1e-4 and traj.final.s < 1e-4 and gap < 0.1 and len(traj.records) <= 2000
        ok &= good
        parts.append(f"{n} {traj.reason} k={len(traj.records)} gap={gap:.2e}%")
    elapsed += time.perf_counter() - t0
    ok &= elapsed < 60
    record(2, ok, "; ".join(parts) + f"; {elapsed:.1f}s (< 60 s)")
    assert ok


def test_criterion_3_qp_oracle_equivalence():
    t0 = time.perf_counter()
    worst_abs = worst_rel = 0.0
    fails = 0
    for seed in range(50):
        qp, form = random_qp(seed)
        ref = enumerate_qp(*form)
        sol = solve_qp(qp)
        err = abs(sol.objective - ref[1])
        worst_abs = max(worst_abs, err)
        if abs(ref[1]) >= 1.0:
            worst_rel = max(worst_rel, err / abs(ref[1]))
        fails += not (sol.optimal and err <= 1e-5 + 1e-6 * abs(ref[1]))
    elapsed = time.perf_counter() - t0
    ok = fails == 0 and elapsed < 30
    record(3, ok, f"50 QPs, {50 - fails} within 1e-5 abs + 1e-6 rel (worst abs {worst_abs:.1e}, worst rel where |opt| >= 1 {worst_rel:.1e}), {elapsed:.1f}s (< 30 s)")
    assert ok


def test_criterion_4_fault_detection_matrix(matrix):
    rows, skipped, elapsed = matrix
    hit = 0
    transparent = bad_local = 0
    misses = []
    for c, local, report in rows:
        if c.kind == "interface_mismatch":
            fired = not local.ok
        else:
            transparent += local.ok
            bad_local += not local.ok
            fired = report is not None and any(report.outcome(k).fired for k in c.designated)
        hit += fired
        if not fired:
            misses.append(c.label)
    n = len(rows)
    ok = hit == n and bad_local == 0 and elapsed < 300
    record(4, ok, f"designated signal {hit}/{n} ({100 * hit / n:.0f}%), non-interface passing local validation {transparent}/{transparent + bad_local}, "
                  f"{len(skipped)} skipped pairs, {elapsed:.1f}s (< 5 min)" + (f"; misses {misses}" if misses else ""))
    assert ok


def test_criterion_5_evidence_complementarity(shipped, matrix):
    s = shipped["example2"]
    cand = next(c for c in shipped_candidates() if c.scenario == "example2").formulation
    traj = coord_run([IRAgent(cand), Counterparty(s.counterparty, s.dims.public)], CoordinationConfig())
    static = extract_evidence(traj, cand, s, mode="static")
    behav = extract_evidence(traj, cand, s, mode="behavioral")
    c8 = behav.outcome(8)
    buggy_ok = (diagnose(static).action == ACCEPT and diagnose(behav).action != ACCEPT
                and c8.fired and c8.metrics["marginal"] < 0 and "positive marginal" in c8.detail)
    rows, _, _ = matrix
    static_hits = []
    for c, _, _ in rows:
        if c.kind in ("cost_on_data", "missing_cost"):
            sc = shipped[c.scenario]
            t = coord_run([IRAgent(c.ir), Counterparty(sc.counterparty, sc.dims.public)], CoordinationConfig(max_iter=5))
            static_hits.append(diagnose(extract_evidence(t, c.ir, sc, mode="static")).action != ACCEPT)
    ok = buggy_ok and all(static_hits) and len(static_hits) == 6
    record(5, ok, f"spurious-production bug: static {diagnose(static).action}, behavioral {diagnose(behav).action} via check 8 "
                  f"(marginal {c8.metrics.get('marginal', float('nan')):.3g}); cost_on_data/missing_cost static-detected {sum(static_hits)}/{len(static_hits)}")
    assert ok


def test_criterion_6_repair_closure(closures):
    gt_ok = noop_ok = 0
    detected = 0
    problems = []
    for label, s, kind, gt, gtm, noop, noopm in closures:
        if gt.detected:
            detected += 1
            probes_zero = all(r["rel_err"] == 0.0 for r in gtm.probes)
            good = gt.accepted and structurally_equal(gt.final_ir, s.reference) and gtm.obj_gap == 0.0 and probes_zero
            gt_ok += good
            if not good:
                problems.append(f"gt:{label}")
        never_bad_accept = all(not (a.action == ACCEPT and a.report is not None and a.report.has_fail) for a in noop.history)
        bounded = noop.repairs <= 3 and noop.episodes <= 4
        distinct = kind != "interface_mismatch"
        good = never_bad_accept and bounded and (not distinct or noopm.obj_gap > 0)
        noop_ok += good
        if not good:
            problems.append(f"noop:{label}")
    n = len(closures)
    ok = gt_ok == detected and noop_ok == n and detected > 0
    record(6, ok, f"ground truth R=3: {gt_ok}/{detected} detected candidates accepted, structurally equal, 0% gap; "
                  f"noop: {noop_ok}/{n} bounded, no accept under has_fail, gap > 0 where distinct" + (f"; {problems}" if problems else ""))
    assert ok


def test_criterion_7_metric_contract(closures, shipped):
    in_range = match_consistent = True
    for *_, gt, gtm, noop, noopm in closures:
        for m in (gtm, noopm):
            in_range &= 0.0 <= m.obj_gap <= 100.0 and 0.0 <= m.social_gap <= 100.0
            match_consistent &= m.social_match == (m.social_gap < SOCIAL_MATCH_PCT)
            match_consistent &= m.obj_match == all(r["rel_err"] < 1e-3 for r in m.probes)
    ref_gaps = []
    for n in SHIPPED:
        s = shipped[n]
        _, gap, _ = objective_metrics(s.reference, s.reference, reference_probes(s.reference, s))
        ref_gaps.append(gap)
    ok = in_range and match_consistent and all(g == 0.0 for g in ref_gaps)
    record(7, ok, f"gaps within [0,100]: {in_range}; match iff sub-threshold: {match_consistent}; reference-vs-reference gaps {ref_gaps}")
    assert ok


def test_criterion_8_determinism(tmp_path, shipped):
    from coordloop.faults import FaultSpec, inject

    s = shipped["example3"]
    ir_path, _ = inject(s.reference, FaultSpec("cost_on_data"), s).write(tmp_path / "cands")
    runs = {
        "verify": ["verify", "example3", str(ir_path)],
        "coordinate": ["coordinate", "example2", "--max-iter", "50"],
    }
    same = []
    for name, args in runs.items():
        out = tmp_path / name
        main([*args, "--out", str(out)])
        man = json.loads((out / "manifest.json").read_text())
        for k in (1, 2):
            rep = tmp_path / f"{name}_replay{k}"
            code = main(["replay", str(out / "manifest.json"), "--out", str(rep)])
            same.append(code == 0 and all((rep / a).read_bytes() == (out / a).read_bytes() for a in man["artifacts"]))
    ok = all(same) and len(same) == 4
    record(8, ok, f"{sum(same)}/4 manifest replays byte-identical (trajectories, evidence, metrics)")
    assert ok
