"""Objective and social correctness metrics.

Objective match compares a candidate's private cost with the reference
formulation at reference-feasible probe plans. Social match compares the joint
cost at the coordinated plan with the centralized optimum. Both gaps are
percentages capped at 100.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .agents import CounterpartyParams, counterparty_ir
from .core import PlanTensor
from .formulation import FormulationIR, canonicalize
from .probes import probe_plans
from .qpsolver import SolverFailure, eval_private, project_plan, solve_qp

EPS = 1e-9
MATCH_TOL = 1e-3
SOCIAL_MATCH_PCT = 0.1
PROJECTION_TOL = 1e-3


class InfeasibleAtConsensus(ValueError):
    pass


def rel_err(cand: float | None, ref: float) -> float:
    if cand is None:
        return 1.0
    return abs(cand - ref) / max(abs(ref), EPS)


def _eval(ir: FormulationIR, p: PlanTensor):
    try:
        return eval_private(canonicalize(ir), p)
    except SolverFailure:
        return None


def reference_probes(reference: FormulationIR, scenario, seed: int = 0) -> list[tuple[str, PlanTensor]]:
    """Probe plans kept only where the reference has a feasible completion."""
    out = []
    for name, p in probe_plans(reference, scenario, seed):
        if _eval(reference, p) is not None:
            out.append((name, p))
    return out


def objective_metrics(candidate: FormulationIR, reference: FormulationIR, probes) -> tuple[bool, float, list[dict]]:
    """``(match, gap_pct, per-probe rows)``; ``probes`` are plans or ``(name, plan)`` pairs."""
    rows = []
    for k, item in enumerate(probes):
        name, p = item if isinstance(item, tuple) else (f"probe_{k}", item)
        ref = _eval(reference, p)
        if ref is None:
            continue
        try:
            cand = _eval(candidate, p)
        except Exception:  # noqa: BLE001 - a candidate that cannot be evaluated misses this probe
            cand = None
        rows.append({"probe": name, "reference": ref, "candidate": cand, "rel_err": rel_err(cand, ref)})
    if not rows:
        raise ValueError("no probe plan is feasible for the reference")
    errs = [r["rel_err"] for r in rows]
    match = all(e < MATCH_TOL for e in errs)
    gap = float(np.mean([min(e, 1.0) for e in errs]) * 100.0)
    return match, gap, rows


def centralized_optimum(vendor_ir: FormulationIR, cp: CounterpartyParams) -> float:
    from .scenarios import build_centralized

    sol = solve_qp(build_centralized(vendor_ir, cp))
    if not sol.optimal:
        raise SolverFailure(f"centralized problem ended with status {sol.status}")
    return sol.objective


def social_value(z: PlanTensor, vendor_ir: FormulationIR, cp: CounterpartyParams) -> tuple[float, PlanTensor]:
    """Joint cost at ``z``; a consensus slightly outside the vendor set is projected back."""
    vendor = canonicalize(vendor_ir)
    cir = counterparty_ir(cp, z.dims)
    v = _eval(vendor, z)
    if v is None:
        zp = project_plan(vendor, z)
        tol = PROJECTION_TOL * (1.0 + float(np.abs(z.values).max(initial=0.0)))
        if zp is None or float(np.abs(zp.values - z.values).max()) > tol:
            raise InfeasibleAtConsensus("coordinated plan is not feasible for the vendor")
        z = zp
        v = _eval(vendor, z)
        if v is None:
            raise InfeasibleAtConsensus("projected plan is not feasible for the vendor")
    c = _eval(cir, z)
    if c is None:
        raise InfeasibleAtConsensus("coordinated plan is not feasible for the counterparty")
    return v + c, z


def social_metrics(final_z: PlanTensor, vendor_ir: FormulationIR, cp: CounterpartyParams, reference_ir: FormulationIR | None = None):
    """``(match, gap_pct, detail)`` against the centralized optimum.

    The optimum uses ``reference_ir`` when given (a candidate is judged against
    the true joint problem), else ``vendor_ir``.
    """
    opt = centralized_optimum(reference_ir if reference_ir is not None else vendor_ir, cp)
    try:
        value, _ = social_value(final_z, reference_ir if reference_ir is not None else vendor_ir, cp)
    except InfeasibleAtConsensus as exc:
        return False, 100.0, {"optimum": opt, "coordinated": None, "reason": str(exc)}
    gap = min(abs(value - opt) / max(abs(opt), EPS), 1.0) * 100.0
    return gap < SOCIAL_MATCH_PCT, gap, {"optimum": opt, "coordinated": value}


@dataclass
class MetricsReport:
    scenario: str
    obj_match: bool
    obj_gap: float
    social_match: bool
    social_gap: float
    probes: list = field(default_factory=list)
    social: dict = field(default_factory=dict)
    efficiency: dict = field(default_factory=dict)

    def __post_init__(self):
        for g in (self.obj_gap, self.social_gap):
            if not 0.0 <= g <= 100.0:
                raise ValueError(f"gap {g} outside [0, 100]")

    def to_json(self) -> dict:
        return {
            "scenario": self.scenario,
            "obj_match": self.obj_match,
            "obj_gap": self.obj_gap,
            "social_match": self.social_match,
            "social_gap": self.social_gap,
            "probes": self.probes,
            "social": self.social,
            "efficiency": self.efficiency,
        }

    def row(self) -> dict:
        return {
            "scenario": self.scenario,
            "obj_match": int(self.obj_match),
            "social_match": int(self.social_match),
            "obj_gap": round(self.obj_gap, 6),
            "social_gap": round(self.social_gap, 6),
            **{k: self.efficiency[k] for k in sorted(self.efficiency)},
        }


def evaluate(scenario, candidate: FormulationIR, final_z: PlanTensor | None, seed: int = 0, efficiency=None) -> MetricsReport:
    """Objective metrics at reference probes plus social metrics at ``final_z``."""
    probes = reference_probes(scenario.reference, scenario, seed)
    om, og, rows = objective_metrics(candidate, scenario.reference, probes)
    if final_z is None:
        sm, sg, sd = False, 100.0, {"reason": "no coordinated plan"}
    else:
        sm, sg, sd = social_metrics(final_z, candidate, scenario.counterparty, reference_ir=scenario.reference)
    return MetricsReport(scenario.name, om, og, sm, sg, rows, sd, dict(efficiency or {}))


def to_csv(reports) -> str:
    rows = [r.row() for r in reports]
    if not rows:
        return ""
    keys = list(rows[0])
    for r in rows[1:]:
        keys.extend(k for k in r if k not in keys)
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def summarize(reports) -> dict:
    """Run-level rates and mean gaps (percentages)."""
    n = len(reports)
    if n == 0:
        return {"scenarios": 0}
    return {
        "scenarios": n,
        "obj_match_rate": 100.0 * sum(r.obj_match for r in reports) / n,
        "social_match_rate": 100.0 * sum(r.social_match for r in reports) / n,
        "obj_gap_mean": float(np.mean([r.obj_gap for r in reports])),
        "social_gap_mean": float(np.mean([r.social_gap for r in reports])),
    }
