import pytest

from coordloop.diagnosis import (
    ACCEPT,
    DiagnosisAction,
    RepairPipeline,
    apply_codefix,
    behavior_unchanged,
    diagnose,
    local_validate,
    run_pipeline,
)
from coordloop.evidence import CHECKS, HARD, SOFT, WARNING, CheckOutcome, EvidenceReport
from coordloop.faults import FaultSpec, inject
from coordloop.formulation import Edit, PatchRejected, structurally_equal
from coordloop.formulation import build as b
from coordloop.oracles import CODEFIX, REFORMULATE, GroundTruthOracle, NoopOracle, RepairProposal
from coordloop.probes import probe_plans


def report(**fires):
    """``c6=("hard", {"flagged_terms": 1.0})`` style overrides; the rest stay quiet."""
    outs = []
    for c in range(1, 12):
        if f"c{c}" in fires:
            sev, metrics = fires[f"c{c}"]
            outs.append(CheckOutcome(c, True, f"check {c} fired", sev, metrics))
        else:
            outs.append(CheckOutcome(c, False, "quiet", CHECKS[c][2]))
    return EvidenceReport(tuple(outs))


@pytest.mark.parametrize(
    "fires,action",
    [
        ({}, ACCEPT),
        ({"c6": (HARD, {"flagged_terms": 1.0})}, CODEFIX),
        ({"c11": (HARD, {"missing": 1.0})}, CODEFIX),
        ({"c6": (HARD, {"flagged_terms": 1.0}), "c11": (HARD, {"missing": 1.0})}, CODEFIX),
        ({"c6": (HARD, {"flagged_terms": 2.0})}, REFORMULATE),
        ({"c11": (HARD, {"missing": 3.0})}, REFORMULATE),
        ({"c6": (WARNING, {"flagged_terms": 1.0})}, CODEFIX),
        ({"c8": (SOFT, {"marginal": -0.1})}, REFORMULATE),
        ({"c1": (HARD, {})}, REFORMULATE),
        ({"c3": (SOFT, {})}, REFORMULATE),
        ({"c6": (HARD, {"flagged_terms": 1.0}), "c2": (HARD, {})}, REFORMULATE),
        ({"c7": ("informational", {"structural_gap": 1.0})}, REFORMULATE),
        ({"c7": ("informational", {"structural_gap": 0.0})}, ACCEPT),
        ({"c5": ("informational", {}), "c9": ("informational", {}), "c10": ("informational", {})}, ACCEPT),
    ],
)
def test_rule_policy(fires, action):
    assert diagnose(report(**fires)).action == action


def test_accept_with_hard_failure_is_overridden():
    rep = report(c4=(HARD, {}))
    act = diagnose(rep, policy=lambda r: DiagnosisAction(ACCEPT, "looks fine"))
    assert act.action == REFORMULATE
    assert "overridden" in act.rationale


def test_accept_carries_no_repair(toy):
    with pytest.raises(ValueError):
        DiagnosisAction(ACCEPT, "x", formulation=toy)
    with pytest.raises(ValueError):
        DiagnosisAction("Shrug", "x")


def test_local_validation_passes_references(shipped):
    for s in shipped.values():
        assert local_validate(None, s.reference, s).ok


def test_local_validation_reports_invalid_formulation(shipped):
    s = shipped["example1"]
    bad = s.reference.with_(objective=(b.linear("t", "i,j,t", "ghost", "i,j,t"),))
    res = local_validate(None, bad, s)
    assert not res.ok and res.errors


def test_codefix_rejects_broken_patch(shipped):
    s = shipped["example1"]
    with pytest.raises(PatchRejected):
        apply_codefix(s.reference, [Edit("remove", "variables", "po")], s)


def test_behavior_unchanged_detects_difference(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("sign_flip"), s)
    probes = probe_plans(s.reference, s, 0)
    assert behavior_unchanged(s.reference, s.reference, probes)
    assert not behavior_unchanged(s.reference, c.ir, probes)


def test_ground_truth_repairs_localized_fault(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("missing_cost"), s)
    res = run_pipeline(s, c.ir, GroundTruthOracle(s.reference, c.repair))
    assert res.detected and res.accepted
    assert [a.action for a in res.history] == [CODEFIX, ACCEPT]
    assert structurally_equal(res.final_ir, s.reference)
    assert res.repairs == 1 and res.episodes == 2


def test_noop_exhausts_budget_without_accepting(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("sign_flip"), s)
    res = run_pipeline(s, c.ir, NoopOracle(), budget=2)
    assert not res.accepted and res.detected
    assert res.repairs == 2 and res.episodes == 3
    assert all(r.has_fail for r in res.reports)


def test_zero_budget_verifies_once(shipped):
    s = shipped["example1"]
    res = run_pipeline(s, s.reference, NoopOracle(), budget=0)
    assert res.accepted and not res.detected and res.episodes == 1


def test_interface_fault_needs_fresh_code(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("interface_mismatch"), s)
    noop = run_pipeline(s, c.ir, NoopOracle(), agent=c.make_agent(), budget=1)
    assert not noop.accepted and noop.episodes == 0
    assert [a.stage for a in noop.history] == ["local", "local"]
    fixed = run_pipeline(s, c.ir, GroundTruthOracle(s.reference), agent=c.make_agent())
    assert fixed.accepted and fixed.detected


class SamePatchOracle:
    """CodeFix that rewrites a term to itself: behavior is unchanged."""

    def __init__(self, term):
        self.term = term
        self.calls = 0

    def repair(self, request):
        self.calls += 1
        return RepairProposal(CODEFIX, patch=(Edit("replace", "objective", self.term.name, self.term),))


def test_escape_hatch_after_unchanged_codefix(shipped):
    s = shipped["example1"]
    fee = b.const("fee", "j", b.par("transport_cost", "j"))
    cand = s.reference.with_(objective=(*s.reference.objective, fee))
    oracle = SamePatchOracle(fee)
    res = run_pipeline(s, cand, oracle)
    assert [a.action for a in res.history] == [CODEFIX, ACCEPT]
    assert res.escape_hatch and res.accepted and oracle.calls == 1
    assert res.history[-1].report.outcome(6).severity == WARNING


class FailingOracle:
    def repair(self, request):
        from coordloop.oracles import OracleFailure

        raise OracleFailure("offline")


def test_oracle_failure_consumes_attempt(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("sign_flip"), s)
    res = run_pipeline(s, c.ir, FailingOracle(), budget=2)
    assert res.repairs == 2 and not res.accepted
    assert all(a.oracle_error == "offline" for a in res.history[:-1])


def test_best_candidate_prefers_fewer_hard_fires(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("sign_flip"), s)
    worse = inject(c.ir, FaultSpec("cost_on_data"), s).ir

    class Worse:
        def repair(self, request):
            return RepairProposal(REFORMULATE, formulation=worse)

    res = run_pipeline(s, c.ir, Worse(), budget=1)
    assert [a.report.hard_count for a in res.history] == [1, 2]
    assert res.final_ir is c.ir


def test_repair_pipeline_estimator(shipped):
    s = shipped["example1"]
    c = inject(s.reference, FaultSpec("missing_cost"), s)
    est = RepairPipeline(budget=2)
    assert est.get_params() == {"budget": 2, "mode": "full", "seed": 0}
    (res,) = est.fit().predict([(s, c.ir, GroundTruthOracle(s.reference, c.repair))])
    assert res.accepted
    with pytest.raises(ValueError):
        RepairPipeline(mode="tarot").fit()
