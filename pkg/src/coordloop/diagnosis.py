"""Diagnose evidence into Accept / CodeFix / Reformulate and run bounded repair.

Rule policy, applied in order:

1. Hard or soft fires limited to the cost-data (6) and missing-cost (11)
   checks, each localized to a single term or field, ask for a CodeFix.
   A cost-data finding at warning level also asks for a CodeFix.
2. Any other hard or soft fire asks for a Reformulate.
3. A decision-variable audit (7) reporting a missing decision or a missing or
   wrongly scoped expected constraint asks for a Reformulate.
4. Otherwise Accept.

The override is unconditional: Accept with a hard failure becomes Reformulate.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_choice, check_count, check_seed
from .agents import Counterparty, IRAgent
from .coordinator import VERIFICATION, CoordinationConfig, coord_run
from .core import DimsMismatch, PlanTensor
from .evidence import HARD, MODES, SOFT, WARNING, EvidenceReport, extract_evidence
from .formulation import FormulationIR, PatchRejected, apply_patch, validate
from .oracles import CODEFIX, REFORMULATE, OracleFailure, RepairRequest
from .probes import probe_plans
from .qpsolver import CompileError, SolverFailure, eval_private

ACCEPT = "Accept"
ACTIONS = (ACCEPT, CODEFIX, REFORMULATE)
DEFAULT_BUDGET = 3
ESCAPE_TOL = 1e-9


@dataclass(frozen=True)
class DiagnosisAction:
    action: str
    rationale: str
    patch: tuple | None = None
    formulation: FormulationIR | None = None

    def __post_init__(self):
        if self.action not in ACTIONS:
            raise ValueError(f"unknown action {self.action!r}")
        if self.action == ACCEPT and (self.patch is not None or self.formulation is not None):
            raise ValueError("Accept carries no repair")


def _localized(o) -> bool:
    if o.check == 6:
        return o.metrics.get("flagged_terms", 0.0) == 1.0
    if o.check == 11:
        return o.metrics.get("missing", 0.0) == 1.0
    return False


def raw_policy(report: EvidenceReport) -> DiagnosisAction:
    strong = [o for o in report.outcomes if o.fired and o.severity in (HARD, SOFT)]
    c6 = report.outcome(6)
    if strong and all(o.check in (6, 11) and _localized(o) for o in strong):
        return DiagnosisAction(CODEFIX, f"localized static finding(s): {'; '.join(o.detail for o in strong)}")
    if strong:
        ids = ", ".join(str(o.check) for o in strong)
        return DiagnosisAction(REFORMULATE, f"checks {ids} fired: {'; '.join(o.detail for o in strong)}")
    if c6.fired and c6.severity == WARNING:
        return DiagnosisAction(CODEFIX, f"cost-data warning: {c6.detail}")
    c7 = report.outcome(7)
    if c7.fired and c7.metrics.get("structural_gap", 0.0) == 1.0:
        return DiagnosisAction(REFORMULATE, f"described structure missing: {c7.detail}")
    return DiagnosisAction(ACCEPT, "no check calls for repair")


def diagnose(report: EvidenceReport, policy=raw_policy) -> DiagnosisAction:
    act = policy(report)
    if act.action == ACCEPT and report.has_fail:
        return DiagnosisAction(REFORMULATE, f"accept overridden by hard failure (checks {[o.check for o in report.outcomes if o.hard_fire]})")
    return act


# --- local validation ------------------------------------------------------------------


@dataclass(frozen=True)
class LocalResult:
    ok: bool
    errors: tuple[str, ...] = ()


def local_validate(agent, ir: FormulationIR, scenario) -> LocalResult:
    """Formulation checks plus one probe solve through the agent interface."""
    rep = validate(ir)
    if not rep.ok:
        return LocalResult(False, tuple(str(e) for e in rep.errors))
    dims = scenario.dims.public
    try:
        if agent is None:
            agent = IRAgent(ir)
        if agent.dims != dims:
            return LocalResult(False, (f"agent declares dims {agent.dims.to_list()}, scenario has {dims.to_list()}",))
        z, lam, rho = PlanTensor.zeros(dims), PlanTensor.zeros(dims), PlanTensor.full(dims, 1.0)
        r = agent.solve(z, lam, rho)
    except (CompileError, SolverFailure, DimsMismatch, ValueError, KeyError) as exc:
        return LocalResult(False, (f"{type(exc).__name__}: {exc}",))
    errs = []
    if not isinstance(r.proposal, PlanTensor) or r.proposal.dims != dims:
        got = r.proposal.dims.to_list() if isinstance(r.proposal, PlanTensor) else type(r.proposal).__name__
        errs.append(f"proposal dims {got} do not match {dims.to_list()}")
    elif np.any(r.proposal.values < -1e-9):
        errs.append("proposal has negative entries")
    if r.decomp is None:
        errs.append("response carries no objective decomposition")
    elif np.isfinite(r.augmented):
        if abs(r.decomp.augmented - r.augmented) > 1e-6 * (1.0 + abs(r.augmented)):
            errs.append("objective decomposition does not add up to the augmented value")
    return LocalResult(not errs, tuple(errs))


# --- code fixes --------------------------------------------------------------------------


def behavior_unchanged(a: FormulationIR, b: FormulationIR, probes) -> bool:
    for _, p in probes:
        try:
            va, vb = eval_private(a, p), eval_private(b, p)
        except SolverFailure:
            return False
        if (va is None) != (vb is None):
            return False
        if va is not None and abs(va - vb) > ESCAPE_TOL * (1.0 + abs(va)):
            return False
    return True


def apply_codefix(ir: FormulationIR, patch, scenario, seed: int = 0) -> tuple[FormulationIR, bool]:
    """Apply ``patch``; the flag is True when private behavior is unchanged at
    the probe plans (the escape-hatch condition)."""
    new = apply_patch(ir, patch)
    rep = validate(new)
    if not rep.ok:
        raise PatchRejected(f"patched formulation invalid: {rep}")
    return new, behavior_unchanged(ir, new, probe_plans(ir, scenario, seed))


# --- pipeline ------------------------------------------------------------------------------


@dataclass
class Attempt:
    index: int
    stage: str  # "local" | "verify"
    action: str
    rationale: str
    report: EvidenceReport | None = None
    local_errors: tuple[str, ...] = ()
    oracle_error: str | None = None
    formulation: FormulationIR | None = None
    final_z: PlanTensor | None = None
    episode_reason: str | None = None
    trajectory: object = None

    def to_json(self) -> dict:
        return {
            "index": self.index,
            "stage": self.stage,
            "action": self.action,
            "rationale": self.rationale,
            "report": None if self.report is None else self.report.to_json(),
            "local_errors": list(self.local_errors),
            "oracle_error": self.oracle_error,
            "episode_reason": self.episode_reason,
        }


@dataclass
class PipelineResult:
    final_ir: FormulationIR
    history: list
    repairs: int
    accepted: bool
    detected: bool
    episodes: int
    escape_hatch: bool = False
    final_z: PlanTensor | None = None
    wall_time: float = 0.0
    oracle_calls: int = 0
    reports: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "accepted": self.accepted,
            "detected": self.detected,
            "repairs": self.repairs,
            "episodes": self.episodes,
            "escape_hatch": self.escape_hatch,
            "oracle_calls": self.oracle_calls,
            "final_formulation": self.final_ir.to_dict(),
            "history": [a.to_json() for a in self.history],
        }


def _best(cands, scenario):
    """Pick by (has_fail, hard count, objective gap)."""
    from .metrics import evaluate

    def key(a):
        gap = 100.0
        try:
            gap = evaluate(scenario, a.formulation, None).obj_gap
        except Exception:  # noqa: BLE001 - an unevaluable candidate ranks last on gap
            pass
        return (a.report.has_fail, a.report.hard_count, gap, a.index)

    return min(cands, key=key)


def run_pipeline(
    scenario,
    candidate_ir: FormulationIR,
    oracle,
    budget: int = DEFAULT_BUDGET,
    seed: int = 0,
    mode: str = "full",
    agent=None,
    coordination: CoordinationConfig | None = None,
) -> PipelineResult:
    """Validate, verify through coordination, diagnose and repair, at most
    ``budget`` repairs and ``budget + 1`` verification episodes."""
    check_count(budget, "budget", minimum=0)
    check_choice(mode, MODES, "mode")
    cfg = coordination or CoordinationConfig(mode=VERIFICATION)
    t0 = time.perf_counter()
    ir = candidate_ir
    history: list[Attempt] = []
    repairs = episodes = calls = 0
    detected = False
    escape_pending = escaped = False
    cp = Counterparty(scenario.counterparty, scenario.dims.public)
    accepted = False
    last_z = None

    while True:
        k = len(history)
        local = local_validate(agent, ir, scenario)
        if not local.ok:
            if k == 0:
                detected = True
            att = Attempt(k, "local", REFORMULATE, "local validation failed", local_errors=local.errors, formulation=ir)
            history.append(att)
            if repairs >= budget:
                break
            request = RepairRequest(scenario, ir, REFORMULATE, k, None, local.errors)
        else:
            vend = agent if agent is not None else IRAgent(ir)
            traj = coord_run([vend, cp], cfg)
            episodes += 1
            report = extract_evidence(traj, ir, scenario, seed=seed, mode=mode)
            act = diagnose(report)
            if escape_pending and not report.has_fail and act.action != ACCEPT:
                act = DiagnosisAction(ACCEPT, "patch left behavior unchanged and re-verification is clean (escape hatch)")
                escaped = True
            escape_pending = False
            if k == 0 and act.action != ACCEPT:
                detected = True
            z = traj.records[-1].z if traj.records else None
            att = Attempt(k, "verify", act.action, act.rationale, report, formulation=ir, final_z=z, episode_reason=traj.reason, trajectory=traj)
            history.append(att)
            last_z = z
            if act.action == ACCEPT:
                assert not report.has_fail
                accepted = True
                break
            if repairs >= budget:
                break
            request = RepairRequest(scenario, ir, act.action, k, report)

        repairs += 1
        calls += 1
        try:
            prop = oracle.repair(request)
            if prop.patch is not None:
                new, unchanged = apply_codefix(ir, prop.patch, scenario, seed)
                escape_pending = unchanged
            else:
                new = prop.formulation
                rep = validate(new)
                if not rep.ok:
                    raise OracleFailure(f"oracle formulation invalid: {rep}")
            if new is not ir:
                # a fresh formulation means fresh agent code; an unchanged one keeps the adapter
                ir, agent = new, None
        except (OracleFailure, PatchRejected) as exc:
            history[-1].oracle_error = str(exc)

    final_ir, final_z = ir, last_z
    if not accepted:
        verified = [a for a in history if a.stage == "verify"]
        if verified:
            best = _best(verified, scenario)
            final_ir, final_z = best.formulation, best.final_z
    return PipelineResult(
        final_ir,
        history,
        repairs,
        accepted,
        detected,
        episodes,
        escaped,
        final_z,
        time.perf_counter() - t0,
        calls,
        [a.report for a in history if a.report is not None],
    )


class RepairPipeline(BaseEstimator):
    """Estimator-style wrapper around :func:`run_pipeline`.

    ``predict`` maps ``(scenario, candidate_formulation, oracle)`` triples to
    pipeline results.
    """

    def __init__(self, budget: int = DEFAULT_BUDGET, mode: str = "full", seed: int = 0):
        self.budget = budget
        self.mode = mode
        self.seed = seed

    def fit(self, X=None, y=None):
        check_count(self.budget, "budget")
        check_choice(self.mode, MODES, "mode")
        check_seed(self.seed)
        self.fitted_ = True
        return self

    def predict(self, X) -> list[PipelineResult]:
        if not hasattr(self, "fitted_"):
            self.fit()
        return [run_pipeline(s, ir, o, self.budget, self.seed, self.mode) for s, ir, o in X]
