import json
from types import SimpleNamespace

import numpy as np
import pytest

from coordloop.agents import Counterparty, IRAgent
from coordloop.coordinator import CONVERGED, ITERATION_CAP, CoordinationConfig, CoordinationTrajectory, IterationRecord, coord_run
from coordloop.core import Dims, PlanTensor
from coordloop.evidence import (
    HARD,
    CheckOutcome,
    EvidenceExtractor,
    EvidenceReport,
    check_convergence,
    check_degenerate_plan,
    check_demand_coverage,
    check_dual_outliers,
    check_marginal_cost,
    check_social_gradient,
    classify_residuals,
    extract_evidence,
)
from coordloop.formulation import build as b
from coordloop.scenarios import shipped_candidates

D = Dims(1, 1, 2)


def traj_from(r_series, proposals=None, lams=None, reason=ITERATION_CAP, dims=D):
    recs = []
    for k, r in enumerate(r_series):
        x = PlanTensor(dims, proposals[k] if proposals else np.ones(dims.size))
        lam = PlanTensor(dims, lams[k] if lams else np.zeros(dims.size))
        recs.append(IterationRecord(k + 1, (x, x), (None, None), x, (lam, lam), PlanTensor.full(dims, 1.0), r, r))
    return CoordinationTrajectory(CoordinationConfig(), tuple(recs), reason, ("a", "b"), PlanTensor.zeros(dims))


def scen(nontrivial=True, demand=2.0):
    return SimpleNamespace(expectations=SimpleNamespace(nontrivial_plan=nontrivial, total_demand=demand))


@pytest.mark.parametrize(
    "series,cls",
    [
        ([0.9**k for k in range(60)], "decreasing"),
        ([0.995**k for k in range(60)], "slow"),
        ([1.0] * 60, "stagnating"),
        ([1.0, 2.0] * 30, "oscillating"),
    ],
)
def test_residual_classes(series, cls):
    assert classify_residuals(series, converged=False)[0] == cls


def test_geometric_rate_is_recovered():
    _, rate, flips = classify_residuals([0.9**k for k in range(60)], converged=False)
    assert rate == pytest.approx(0.9, rel=1e-12)
    assert flips == 0.0


def test_convergence_check_fires_on_stall_only():
    assert check_convergence(traj_from([1.0] * 40)).fired
    assert check_convergence(traj_from([1.0, 3.0] * 20)).fired
    assert not check_convergence(traj_from([0.8**k for k in range(40)])).fired
    assert not check_convergence(traj_from([1.0] * 40, reason=CONVERGED)).fired
    assert check_convergence(traj_from([1.0] * 3)).skipped


def test_degenerate_plan_severity():
    zero = traj_from([1.0], proposals=[[0.0, 0.0]])
    out = check_degenerate_plan(zero, scen())
    assert out.fired and out.severity == HARD
    assert not check_degenerate_plan(zero, scen(nontrivial=False)).fired
    assert not check_degenerate_plan(traj_from([1.0], proposals=[[0.0, 3.0]]), scen()).fired


@pytest.mark.parametrize("total,fired", [(2.0, False), (0.5, True), (7.0, True)])
def test_demand_coverage_band(total, fired):
    t = traj_from([1.0], proposals=[[total / 2, total / 2]])
    assert check_demand_coverage(t, scen(demand=2.0)).fired is fired


def test_dual_outlier_ratio_and_growth():
    flat = traj_from([1.0] * 10, lams=[[1.0, 1.0]] * 10)
    assert not check_dual_outliers(flat).fired
    spike = traj_from([1.0] * 10, lams=[[1.0, 1.0, 1.0, 1.0, 500.0]] * 10, dims=Dims(1, 1, 5))
    assert check_dual_outliers(spike).fired
    rising = traj_from([1.0] * 12, lams=[[1.0 + 0.2 * k, 1.0 + 0.2 * k] for k in range(12)])
    assert check_dual_outliers(rising).fired


def test_marginal_cost_on_toy(toy):
    big = toy.with_(parameters=(b.param("c", "t", [1.0, 2.0], "unit_cost"), b.param("cap", "", [100.0], "capacity")))
    out = check_marginal_cost(IRAgent(big))
    assert not out.fired
    assert out.metrics["marginal"] == pytest.approx(1.5, abs=1e-6)
    flipped = big.with_(objective=(b.linear("cost", "i,j,t", "po", "i,j,t", b.par("c", "t"), sign=-1.0),))
    out = check_marginal_cost(IRAgent(flipped))
    assert out.fired and out.metrics["marginal"] == pytest.approx(-1.5, abs=1e-6)


def test_social_gradient_rejects_bad_step(shipped):
    s = shipped["example1"]
    a = IRAgent(s.reference)
    cp = Counterparty(s.counterparty, s.dims.public)
    with pytest.raises(ValueError):
        check_social_gradient(a, cp, PlanTensor.zeros(s.dims.public), 0.0, seed=0)


@pytest.fixture(scope="module")
def ex2(shipped):
    s = shipped["example2"]
    cand = next(c for c in shipped_candidates() if c.scenario == "example2").formulation
    cp = Counterparty(s.counterparty, s.dims.public)
    return s, cand, coord_run([IRAgent(cand), cp], CoordinationConfig())


@pytest.mark.parametrize("name", ["example1", "example2", "example3"])
def test_references_raise_no_flags(shipped, name):
    s = shipped[name]
    traj = coord_run([IRAgent(s.reference), Counterparty(s.counterparty, s.dims.public)], CoordinationConfig())
    rep = extract_evidence(traj, s.reference, s)
    assert rep.fired() == []
    assert not rep.has_fail


def test_spurious_production_seen_only_by_behavior(ex2):
    s, cand, traj = ex2
    static = extract_evidence(traj, cand, s, mode="static")
    behavioral = extract_evidence(traj, cand, s, mode="behavioral")
    assert static.fired() == [7]
    assert behavioral.fired() == [8]
    assert "positive marginal" in behavioral.outcome(8).detail
    assert behavioral.outcome(8).metrics["marginal"] < 0
    assert static.outcome(8).skipped


def test_report_json_round_trip(ex2):
    s, cand, traj = ex2
    rep = extract_evidence(traj, cand, s)
    text = rep.dumps()
    assert EvidenceReport.from_json(json.loads(text)).dumps() == text
    assert [o["check"] for o in json.loads(text)["outcomes"]] == list(range(1, 12))
    assert "has_fail" in rep.table()


def test_outcome_round_trip():
    o = CheckOutcome(6, True, "term flagged", HARD, {"flagged_terms": 1.0})
    assert CheckOutcome.from_json(o.to_json()) == o
    assert o.hard_fire


def test_extractor_api(ex2):
    s, cand, traj = ex2
    ext = EvidenceExtractor(mode="static").fit([(traj, cand, s)])
    (rep,) = ext.transform([(traj, cand, s)])
    assert rep.mode == "static"
    assert ext.get_params() == {"mode": "static", "seed": 0}
    with pytest.raises(ValueError):
        EvidenceExtractor(mode="psychic").fit([])
