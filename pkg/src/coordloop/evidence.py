"""Behavioral and static checks assembled into an evidence report.

Eleven checks, in a fixed order:

==  ============================  ==========  ===================
#   check                          source      severity
==  ============================  ==========  ===================
1   utility sign consistency      behavioral  hard
2   price-response sanity         behavioral  hard
3   convergence trajectory        behavioral  soft
4   degenerate plan               behavioral  hard / warning
5   social-gradient perturbation  behavioral  informational
6   cost-data anti-pattern        static      hard / warning
7   decision-variable audit       static      informational
8   marginal-cost consistency     behavioral  soft
9   demand-coverage sanity        behavioral  informational
10  dual-price outlier sanity     behavioral  informational
11  missing cost parameters       static      hard
==  ============================  ==========  ===================

A check that cannot run is reported as not fired with a ``skipped: ...``
detail. ``has_fail`` is true exactly when some hard check fired.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_choice, check_seed
from .agents import Counterparty, IRAgent, SolveFailed
from .coordinator import CONVERGED, CoordinationTrajectory
from .core import PlanTensor
from .formulation import (
    FormulationIR,
    audit_decision_variables,
    find_cost_data_antipatterns,
    find_missing_cost_parameters,
)
from .probes import is_feasible, probe_plans
from .qpsolver import CompileError, SolverFailure, eval_private

BEHAVIORAL = "behavioral"
STATIC = "static"
HARD, SOFT, INFO, WARNING = "hard", "soft", "informational", "warning"

CHECKS = {
    1: ("utility sign consistency", BEHAVIORAL, HARD),
    2: ("price-response sanity", BEHAVIORAL, HARD),
    3: ("convergence trajectory", BEHAVIORAL, SOFT),
    4: ("degenerate plan", BEHAVIORAL, HARD),
    5: ("social-gradient perturbation", BEHAVIORAL, INFO),
    6: ("cost-data anti-pattern", STATIC, HARD),
    7: ("decision-variable audit", STATIC, INFO),
    8: ("marginal-cost consistency", BEHAVIORAL, SOFT),
    9: ("demand-coverage sanity", BEHAVIORAL, INFO),
    10: ("dual-price outlier sanity", BEHAVIORAL, INFO),
    11: ("missing cost parameters", STATIC, HARD),
}
MODES = {"full": (BEHAVIORAL, STATIC), "static": (STATIC,), "behavioral": (BEHAVIORAL,)}

# declared thresholds
PRICE_SAMPLE = 4
PRICE_MAJORITY = 3
PRICE_DELTA_FACTOR = 10.0
DIRECTION_TOL = 1e-6
RATE_DECREASING = 0.98
RATE_STAGNATING = 0.999
OSCILLATION_FLIPS = 0.40
DEGENERATE_FRACTION = 0.80
ZERO_ENTRY = 1e-9
MARGINAL_LEVELS = (30.0, 80.0)
MARGINAL_RHO = 1e6
COVERAGE_BAND = (0.5, 3.0)
DUAL_OUTLIER_RATIO = 100.0
DUAL_GROWTH = 0.10
VALUE_TOL = 1e-6


@dataclass(frozen=True)
class CheckOutcome:
    check: int
    fired: bool
    detail: str
    severity: str
    metrics: dict = field(default_factory=dict, compare=False)

    @property
    def name(self) -> str:
        return CHECKS[self.check][0]

    @property
    def source(self) -> str:
        return CHECKS[self.check][1]

    @property
    def skipped(self) -> bool:
        return self.detail.startswith("skipped:")

    @property
    def hard_fire(self) -> bool:
        return self.fired and self.severity == HARD

    def to_json(self) -> dict:
        return {
            "check": self.check,
            "name": self.name,
            "source": self.source,
            "severity": self.severity,
            "fired": self.fired,
            "detail": self.detail,
            "metrics": {k: self.metrics[k] for k in sorted(self.metrics)},
        }

    @classmethod
    def from_json(cls, d: dict) -> "CheckOutcome":
        return cls(d["check"], d["fired"], d["detail"], d["severity"], dict(d.get("metrics", {})))


def _outcome(check: int, fired: bool, detail: str, severity: str | None = None, **metrics) -> CheckOutcome:
    if fired and not detail:
        raise ValueError("a fired check needs a detail")
    return CheckOutcome(check, bool(fired), detail, severity or CHECKS[check][2], metrics)


def skipped(check: int, reason: str) -> CheckOutcome:
    return _outcome(check, False, f"skipped: {reason}")


@dataclass(frozen=True)
class EvidenceReport:
    outcomes: tuple[CheckOutcome, ...]
    mode: str = "full"

    def __post_init__(self):
        ids = [o.check for o in self.outcomes]
        if ids != list(range(1, 12)):
            raise ValueError(f"report needs checks 1..11 in order, got {ids}")

    @property
    def has_fail(self) -> bool:
        return any(o.hard_fire for o in self.outcomes)

    @property
    def hard_count(self) -> int:
        return sum(o.hard_fire for o in self.outcomes)

    def outcome(self, check: int) -> CheckOutcome:
        return self.outcomes[check - 1]

    def fired(self) -> list[int]:
        return [o.check for o in self.outcomes if o.fired]

    def to_json(self) -> dict:
        return {"mode": self.mode, "has_fail": self.has_fail, "outcomes": [o.to_json() for o in self.outcomes]}

    @classmethod
    def from_json(cls, d: dict) -> "EvidenceReport":
        return cls(tuple(CheckOutcome.from_json(o) for o in d["outcomes"]), d.get("mode", "full"))

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1)

    def table(self) -> str:
        rows = [("#", "check", "source", "severity", "fired", "detail")]
        for o in self.outcomes:
            rows.append((str(o.check), o.name, o.source, o.severity, "yes" if o.fired else "no", o.detail))
        widths = [max(len(r[k]) for r in rows) for k in range(5)]
        lines = ["  ".join(r[k].ljust(widths[k]) for k in range(5)) + "  " + r[5] for r in rows]
        lines.append(f"has_fail: {str(self.has_fail).lower()}")
        return "\n".join(lines)


# --- behavioral checks ------------------------------------------------------------


def _tol(v: float) -> float:
    return VALUE_TOL * (1.0 + abs(v))


def check_utility_sign(ir: FormulationIR, scenario, probes) -> CheckOutcome:
    """Private cost must be nonnegative and nondecreasing along probe rays when
    the scenario's costs are nonnegative and the zero plan costs nothing."""
    values = {}
    for name, p in probes:
        try:
            values[name] = (p, eval_private(ir, p))
        except SolverFailure:
            values[name] = (p, None)
    feas = {k: v for k, v in values.items() if v[1] is not None}
    if not feas:
        return skipped(1, "private cost infeasible at every probe")
    if not scenario.expectations.nonnegative_costs:
        return skipped(1, "scenario does not declare nonnegative costs")
    neg = sorted(k for k, (_, v) in feas.items() if v < -_tol(v))
    metrics = {f"private_{k}": v for k, (_, v) in feas.items()}
    if neg:
        worst = min(feas[k][1] for k in neg)
        return _outcome(1, True, f"negative private cost at probe(s) {neg} (min {worst:.6g}) under nonnegative cost data", **metrics)
    zero = feas.get("zero")
    if zero is not None and abs(zero[1]) <= _tol(0.0):
        down = []
        for k, (p, v) in feas.items():
            if k == "zero" or not np.any(p.values > 0):
                continue
            try:
                half = eval_private(ir, p.scale(0.5))
            except SolverFailure:
                continue
            if half is not None and v < half - _tol(half):
                down.append(k)
        if down:
            return _outcome(1, True, f"private cost falls as the plan scales up at probe(s) {sorted(down)}", **metrics)
    return _outcome(1, False, "private cost nonnegative and nondecreasing along probe rays", **metrics)


def check_price_response(agent: IRAgent, scenario, z: PlanTensor, seed: int) -> CheckOutcome:
    """Raising the price on one component must not lower the proposal there."""
    dims = agent.dims
    n = dims.size
    rng = np.random.default_rng([seed, 2])
    comps = sorted(rng.choice(n, size=min(PRICE_SAMPLE, n), replace=False).tolist())
    need = PRICE_MAJORITY if len(comps) >= PRICE_SAMPLE else len(comps) // 2 + 1
    delta = PRICE_DELTA_FACTOR * scenario.cost_scale
    rho = PlanTensor.full(dims, 1.0)
    zero = PlanTensor.zeros(dims)
    try:
        base = agent.solve(z, zero, rho).proposal
        wrong, moves = [], {}
        for k in comps:
            lam = np.zeros(n)
            lam[k] = delta
            x = agent.solve(z, PlanTensor(dims, lam), rho).proposal
            moves[k] = x[k] - base[k]
            if moves[k] < -DIRECTION_TOL * (1.0 + abs(base[k])):
                wrong.append(k)
    except SolveFailed as exc:
        return skipped(2, f"solve failed ({exc.status})")
    metrics = {"delta": delta, "wrong_direction": float(len(wrong)), "sampled": float(len(comps))}
    for k, m in moves.items():
        metrics[f"move_{k}"] = m
    if len(wrong) >= need:
        return _outcome(2, True, f"{len(wrong)} of {len(comps)} sampled components fall when their price rises by {delta:g}", **metrics)
    return _outcome(2, False, f"{len(wrong)} of {len(comps)} sampled components move against the price", **metrics)


def classify_residuals(r: list[float], converged: bool) -> tuple[str, float, float]:
    """``(class, rate, flip fraction)`` of a primal-residual series."""
    if converged:
        return "converged", 0.0, 0.0
    k = len(r)
    w = max(2, min(50, k // 2))
    tail = np.asarray(r[-w:], dtype=float)
    d = np.diff(tail)
    nz = d[d != 0]
    flips = float(np.mean(np.sign(nz[1:]) != np.sign(nz[:-1]))) if nz.size > 1 else 0.0
    if tail[0] <= 0:
        rate = 0.0
    elif tail[-1] <= 0:
        rate = 0.0
    else:
        rate = float((tail[-1] / tail[0]) ** (1.0 / (w - 1)))
    if flips >= OSCILLATION_FLIPS:
        return "oscillating", rate, flips
    if rate <= RATE_DECREASING:
        return "decreasing", rate, flips
    if rate < RATE_STAGNATING:
        return "slow", rate, flips
    return "stagnating", rate, flips


def check_convergence(traj: CoordinationTrajectory) -> CheckOutcome:
    if len(traj.records) < 5:
        return skipped(3, f"only {len(traj.records)} iterations recorded")
    series = [rec.r for rec in traj.records]
    cls, rate, flips = classify_residuals(series, traj.reason == CONVERGED)
    fired = cls in ("stagnating", "oscillating")
    detail = f"primal residual {cls} (rate {rate:.4f}, sign flips {flips:.0%}, final r {series[-1]:.3g})"
    return _outcome(3, fired, detail, rate=rate, flips=flips, final_r=series[-1], iterations=float(len(series)))


def check_degenerate_plan(traj: CoordinationTrajectory, scenario, agent_index: int = 0) -> CheckOutcome:
    if not traj.records:
        return skipped(4, "no completed iteration")
    x = traj.records[-1].proposals[agent_index].values
    frac = float(np.mean(np.abs(x) <= ZERO_ENTRY))
    if not scenario.expectations.nontrivial_plan:
        return _outcome(4, False, f"{frac:.0%} zero entries; a trivial plan is acceptable here", zero_fraction=frac)
    if frac > DEGENERATE_FRACTION:
        sev = HARD if frac >= 1.0 else WARNING
        return _outcome(4, True, f"{frac:.0%} of final proposal entries are zero", sev, zero_fraction=frac)
    return _outcome(4, False, f"{frac:.0%} of final proposal entries are zero", zero_fraction=frac)


def check_social_gradient(
    agent: IRAgent, counterparty: IRAgent, z: PlanTensor, step: float, seed: int, lam: PlanTensor | None = None
) -> CheckOutcome:
    """Nudge consensus along a seeded direction and compare the agent's reaction
    with the forward-difference slope of the joint objective.

    The agent faces its final coordination price ``lam``; a reaction that pushes
    further along a direction in which the joint objective rises is flagged.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    dims = agent.dims
    rng = np.random.default_rng([seed, 5])
    d = np.abs(rng.normal(size=dims.size))
    d /= np.linalg.norm(d)
    dt = PlanTensor(dims, d)
    lam = lam if lam is not None else PlanTensor.zeros(dims)

    def social(p):
        a = eval_private(agent.ir, p)
        b = eval_private(counterparty.ir, p) if a is not None else None
        return None if b is None else a + b

    moved = z + dt.scale(step)
    try:
        here = social(z)
        there = social(moved)
        back = z - dt.scale(step)
        if there is None and np.all(back.values >= 0):
            there, step_ = social(back), -step
        else:
            step_ = step
        if here is None or there is None:
            return skipped(5, "joint objective not evaluable around the probe")
        grad = (there - here) / step_
        resp = agent.solve(moved, lam, PlanTensor.full(dims, 1.0)).proposal
    except (SolverFailure, SolveFailed) as exc:
        return skipped(5, f"solve failed ({exc})")
    move = float(np.dot(resp.values - moved.values, d))
    gtol = VALUE_TOL * (1.0 + abs(here))
    mtol = 1e-3 * step
    fired = grad > gtol and move > mtol
    detail = f"joint slope {grad:.4g} along the probe direction, agent reaction {move:.4g}"
    if fired:
        detail += " (agent pushes uphill for the joint objective)"
    return _outcome(5, fired, detail, slope=grad, movement=move, step=step)


def check_marginal_cost(agent: IRAgent, low: float = MARGINAL_LEVELS[0], high: float = MARGINAL_LEVELS[1]) -> CheckOutcome:
    """Private cost per extra unit of aggregate order volume must not be negative."""
    dims = agent.dims
    n = dims.size
    zero = PlanTensor.zeros(dims)
    rho = PlanTensor.full(dims, MARGINAL_RHO)
    vals = []
    for level in (low, high):
        z = PlanTensor.full(dims, level / n)
        if not is_feasible(agent.ir, z):
            return skipped(8, f"aggregate level {level:g} infeasible")
        try:
            vals.append(agent.solve(z, zero, rho).decomp.private)
        except SolveFailed as exc:
            return skipped(8, f"solve failed at level {level:g} ({exc.status})")
    marginal = (vals[1] - vals[0]) / (high - low)
    fired = marginal < -VALUE_TOL * (1.0 + abs(vals[0]) / (high - low))
    detail = f"marginal private cost {marginal:.6g} per unit between aggregate levels {low:g} and {high:g}"
    if fired:
        detail += " (positive marginal utility: more work reports lower cost)"
    return _outcome(8, fired, detail, marginal=marginal, private_low=vals[0], private_high=vals[1])


def check_demand_coverage(traj: CoordinationTrajectory, scenario, agent_index: int = 0) -> CheckOutcome:
    td = scenario.expectations.total_demand
    if td is None:
        return skipped(9, "scenario declares no demand")
    if not traj.records:
        return skipped(9, "no completed iteration")
    total = float(np.sum(traj.records[-1].proposals[agent_index].values))
    ratio = total / td if td > 0 else (math.inf if total > 0 else 1.0)
    fired = ratio < COVERAGE_BAND[0] or ratio > COVERAGE_BAND[1]
    return _outcome(9, fired, f"total proposed volume {total:.4g} is {ratio:.0%} of declared demand {td:g}", coverage=ratio, total=total)


def check_dual_outliers(traj: CoordinationTrajectory, agent_index: int = 0) -> CheckOutcome:
    recs = traj.records
    if len(recs) < 8:
        return skipped(10, f"only {len(recs)} iterations recorded")
    lam = np.abs(recs[-1].lams[agent_index].values)
    peak = float(lam.max(initial=0.0))
    nz = lam[lam > 1e-9 * max(peak, 1.0)]
    med = float(np.median(nz)) if nz.size else 0.0
    ratio = peak / med if med > 0 else 0.0
    series = [float(np.abs(r.lams[agent_index].values).max(initial=0.0)) for r in recs[-max(2, len(recs) // 4):]]
    rising = all(b > a for a, b in zip(series, series[1:])) and series[0] > 0 and series[-1] > (1 + DUAL_GROWTH) * series[0]
    fired = ratio > DUAL_OUTLIER_RATIO or rising
    why = []
    if ratio > DUAL_OUTLIER_RATIO:
        why.append(f"max |price| {peak:.4g} is {ratio:.0f}x the median")
    if rising:
        why.append(f"max |price| rose every iteration over the last {len(series)}")
    detail = "; ".join(why) if why else f"max |price| {peak:.4g}, {ratio:.1f}x median"
    return _outcome(10, fired, detail, max_abs=peak, median_ratio=ratio, rising=float(rising))


# --- static checks ------------------------------------------------------------------


def check_cost_data(ir: FormulationIR, scenario) -> CheckOutcome:
    flags = find_cost_data_antipatterns(ir, scenario.fields)
    if not flags:
        return _outcome(6, False, "no cost field multiplies fixed data only")
    sev = HARD if any(f.severity == "hard" for f in flags) else WARNING
    terms = sorted({f.term for f in flags})
    return _outcome(6, True, "; ".join(f.detail for f in flags), sev, flagged_terms=float(len(terms)))


def check_decision_audit(ir: FormulationIR, scenario) -> CheckOutcome:
    rep = audit_decision_variables(ir, scenario)
    if rep.empty:
        return _outcome(7, False, "private variables and constraints match the described decisions")
    return _outcome(7, True, "; ".join(rep.lines()), structural_gap=float(rep.structural_gap))


def check_missing_costs(ir: FormulationIR, scenario) -> CheckOutcome:
    missing = find_missing_cost_parameters(ir, scenario.fields)
    if missing:
        return _outcome(11, True, f"cost field(s) {missing} never enter the objective", missing=float(len(missing)))
    return _outcome(11, False, "every cost field enters the objective")


# --- assembly -----------------------------------------------------------------------


def extract_evidence(
    traj: CoordinationTrajectory,
    ir: FormulationIR,
    scenario,
    seed: int = 0,
    mode: str = "full",
) -> EvidenceReport:
    check_choice(mode, MODES, "mode")
    active = MODES[mode]
    out: dict[int, CheckOutcome] = {}

    if STATIC in active:
        out[6] = _guard(6, check_cost_data, ir, scenario)
        out[7] = _guard(7, check_decision_audit, ir, scenario)
        out[11] = _guard(11, check_missing_costs, ir, scenario)

    if BEHAVIORAL in active:
        try:
            agent = IRAgent(ir)
        except (CompileError, ValueError, KeyError) as exc:
            agent = None
            why = f"formulation does not compile ({exc})"
        if agent is None:
            for c in (1, 2, 5, 8):
                out[c] = skipped(c, why)
        else:
            dims = agent.dims
            z = traj.records[-1].z if traj.records else PlanTensor.zeros(dims)
            probes = _guard_value(lambda: probe_plans(ir, scenario, seed), [])
            out[1] = _guard(1, check_utility_sign, ir, scenario, probes)
            out[2] = _guard(2, check_price_response, agent, scenario, z, seed)
            step = max(0.01 * float(np.max(z.values, initial=0.0)), 1e-3)
            try:
                cp = Counterparty(scenario.counterparty, dims)
                lam = traj.records[-1].lams[0] if traj.records else None
                out[5] = _guard(5, check_social_gradient, agent, cp, z, step, seed, lam)
            except (CompileError, ValueError) as exc:
                out[5] = skipped(5, f"counterparty unavailable ({exc})")
            out[8] = _guard(8, check_marginal_cost, agent)
        out[3] = _guard(3, check_convergence, traj)
        out[4] = _guard(4, check_degenerate_plan, traj, scenario)
        out[9] = _guard(9, check_demand_coverage, traj, scenario)
        out[10] = _guard(10, check_dual_outliers, traj)

    for c in range(1, 12):
        if c not in out:
            out[c] = skipped(c, f"{CHECKS[c][1]} evidence suppressed in {mode} mode")
    return EvidenceReport(tuple(out[c] for c in range(1, 12)), mode)


def _guard(check: int, fn, *args) -> CheckOutcome:
    try:
        return fn(*args)
    except (SolverFailure, SolveFailed, CompileError, ValueError, np.linalg.LinAlgError) as exc:
        return skipped(check, f"{type(exc).__name__}: {exc}")


def _guard_value(fn, default):
    try:
        return fn()
    except (SolverFailure, CompileError, ValueError):
        return default


class EvidenceExtractor(BaseEstimator):
    """Estimator-style wrapper: ``transform`` maps episodes to reports.

    Each sample is a ``(trajectory, formulation, scenario)`` triple.
    """

    def __init__(self, mode: str = "full", seed: int = 0):
        self.mode = mode
        self.seed = seed

    def fit(self, X=None, y=None):
        check_choice(self.mode, MODES, "mode")
        check_seed(self.seed)
        self.checks_ = tuple(c for c in CHECKS if CHECKS[c][1] in MODES[self.mode])
        return self

    def transform(self, X) -> list[EvidenceReport]:
        if not hasattr(self, "checks_"):
            self.fit()
        return [extract_evidence(t, ir, s, seed=self.seed, mode=self.mode) for t, ir, s in X]

    def fit_transform(self, X, y=None):
        return self.fit(X).transform(X)
