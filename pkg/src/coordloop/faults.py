"""Inject labeled semantic faults into correct formulations.

Every fault except ``interface_mismatch`` yields a formulation that still
passes local validation; the bug is only visible through behavior or through
the formulation-level checks. Each candidate records the edit that undoes it.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .agents import AgentResponse, IRAgent
from .core import Dims, PlanTensor
from .formulation import (
    Edit,
    FormulationIR,
    ObjectiveTerm,
    ParamRef,
    apply_patch,
    canonicalize,
    patch_from_json,
    patch_to_json,
    validate,
)
from .formulation.ir import coef_params, parse_index
from .probes import probe_plans
from .qpsolver import SolverFailure, eval_private

KINDS = ("interface_mismatch", "sign_flip", "cost_on_data", "missing_cost", "constraint_scope", "degenerate")

# The check(s) expected to signal each fault; "local" is local validation.
DESIGNATED = {
    "interface_mismatch": ("local",),
    "sign_flip": (1, 2),
    "cost_on_data": (6,),
    "missing_cost": (11,),
    "constraint_scope": (3, 7),
    "degenerate": (4,),
}


class IncompatibleTarget(ValueError):
    pass


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    target: str | None = None
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}; expected one of {KINDS}")


@dataclass(frozen=True)
class FaultedCandidate:
    scenario: str
    kind: str
    target: str
    seed: int
    source: FormulationIR
    ir: FormulationIR
    repair: tuple[Edit, ...] | None
    designated: tuple
    description: str
    wrapper: str | None = None

    @property
    def label(self) -> str:
        return f"{self.scenario}:{self.kind}:{self.target}"

    def make_agent(self, name: str = "vendor"):
        agent = IRAgent(self.ir, name=name)
        if self.wrapper == "wrong_dims":
            return WrongDimsAgent(agent)
        if self.wrapper == "no_decomposition":
            return MissingDecompAgent(agent)
        return agent

    def sidecar(self) -> dict:
        return {
            "scenario": self.scenario,
            "kind": self.kind,
            "target": self.target,
            "seed": self.seed,
            "designated_checks": list(self.designated),
            "description": self.description,
            "wrapper": self.wrapper,
            "repair": None if self.repair is None else patch_to_json(self.repair),
        }

    def write(self, directory) -> tuple[Path, Path]:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        stem = f"{self.scenario}__{self.kind}__{self.target}".replace("/", "_")
        ir_path = d / f"{stem}.json"
        meta_path = d / f"{stem}.fault.json"
        ir_path.write_text(self.ir.to_json() + "\n")
        meta_path.write_text(json.dumps(self.sidecar(), indent=1, sort_keys=True) + "\n")
        return ir_path, meta_path


def read_candidate(ir_path, source: FormulationIR) -> FaultedCandidate:
    ir_path = Path(ir_path)
    meta = json.loads(ir_path.with_suffix(".fault.json").read_text())
    repair = None if meta["repair"] is None else patch_from_json(meta["repair"])
    return FaultedCandidate(
        meta["scenario"],
        meta["kind"],
        meta["target"],
        meta["seed"],
        source,
        FormulationIR.from_json(ir_path.read_text()),
        repair,
        tuple(meta["designated_checks"]),
        meta["description"],
        meta["wrapper"],
    )


# --- interface wrappers -----------------------------------------------------------


class _Wrapper:
    def __init__(self, inner: IRAgent):
        self.inner = inner
        self.name = inner.name
        self.dims = inner.dims
        self.ir = inner.ir


class WrongDimsAgent(_Wrapper):
    """Emits its proposal with one extra period appended."""

    def solve(self, z, lam, rho, warm=None) -> AgentResponse:
        r = self.inner.solve(z, lam, rho)
        d = self.dims
        arr = np.concatenate([r.proposal.as_array(), np.zeros((d.A, d.J, 1))], axis=2)
        bad = PlanTensor(Dims(d.A, d.J, d.T + 1), arr)
        return AgentResponse(bad, r.decomp, r.status, r.augmented)


class MissingDecompAgent(_Wrapper):
    """Drops the objective decomposition from its responses."""

    def solve(self, z, lam, rho, warm=None) -> AgentResponse:
        r = self.inner.solve(z, lam, rho)
        return AgentResponse(r.proposal, None, r.status, r.augmented)


# --- helpers ----------------------------------------------------------------------


def _order(names, seed: int) -> list[str]:
    names = sorted(names)
    if seed == 0:
        return names
    perm = np.random.default_rng([seed, 11]).permutation(len(names))
    return [names[k] for k in perm]


def _field_roles(scenario) -> dict[str, str]:
    return {f.name: f.role for f in scenario.fields}


def _sources(ir: FormulationIR) -> dict[str, str]:
    return {p.name: p.source for p in ir.parameters}


def _cost_terms(ir: FormulationIR, scenario) -> list[str]:
    roles = _field_roles(scenario)
    src = _sources(ir)
    out = []
    for t in ir.objective:
        if t.kind == "linear_var" and any(roles.get(src.get(p)) == "cost" for p in coef_params(t.coef)):
            out.append(t.name)
    return out


def _evals(ir, probes):
    out = []
    for _, p in probes:
        try:
            out.append(eval_private(ir, p))
        except SolverFailure:
            out.append(math.nan)
    return out


def _distinct(source: FormulationIR, buggy: FormulationIR, probes) -> bool:
    a, b = _evals(source, probes), _evals(buggy, probes)
    for x, y in zip(a, b):
        if (x is None) != (y is None):
            return True
        if x is None:
            continue
        if math.isnan(x) or math.isnan(y):
            continue
        if abs(x - y) > 1e-6 * (1.0 + abs(x)):
            return True
    try:
        ra, rb = IRAgent(source), IRAgent(buggy)
        dims = ra.dims
        zero, one = PlanTensor.zeros(dims), PlanTensor.full(dims, 1.0)
        for _, p in probes:
            xa = ra.solve(p, zero, one).proposal.values
            xb = rb.solve(p, zero, one).proposal.values
            if np.abs(xa - xb).max() > 1e-6 * (1.0 + np.abs(xa).max()):
                return True
    except Exception:  # noqa: BLE001 - a buggy model failing to solve is itself distinct
        return True
    return False


def _finish(spec, scenario, source, buggy, repair, target, description, wrapper=None) -> FaultedCandidate:
    if wrapper is None:
        rep = validate(buggy)
        if not rep.ok:
            raise IncompatibleTarget(f"injected formulation fails validation: {rep}")
    return FaultedCandidate(
        scenario.name, spec.kind, target, spec.seed, source, buggy, repair, DESIGNATED[spec.kind], description, wrapper
    )


# --- fault kinds --------------------------------------------------------------------


def _sign_flip(ir, scenario, spec, probes):
    targets = [spec.target] if spec.target else _order(_cost_terms(ir, scenario), spec.seed)
    for name in targets:
        t = ir.term(name)
        flipped = replace(t, sign=-t.sign)
        buggy = apply_patch(ir, [Edit("replace", "objective", name, flipped)])
        vals = [v for v in _evals(buggy, probes) if v is not None and not math.isnan(v)]
        if any(v < -1e-6 * (1 + abs(v)) for v in vals) and _distinct(ir, buggy, probes):
            return buggy, (Edit("replace", "objective", name, t),), name, f"objective term {name!r} enters with the wrong sign"
    raise IncompatibleTarget("no cost term whose sign flip is visible at the probe plans")


def _index_sets(index) -> set:
    return {parse_index(e)[0] for e in index}


def _cost_on_data(ir, scenario, spec, probes):
    roles = _field_roles(scenario)
    src = _sources(ir)
    targets = [spec.target] if spec.target else _order(_cost_terms(ir, scenario), spec.seed)
    for name in targets:
        t = ir.term(name)
        over = set(t.over)
        used = set(coef_params(t.coef))
        cands = [
            p
            for p in ir.parameters
            if p.name not in used and set(p.shape) <= over and roles.get(src.get(p.name)) != "cost"
        ]
        cands.sort(key=lambda p: (-len(p.shape), p.name))
        for p in cands:
            ref = ParamRef(p.name, tuple(p.shape))
            bad = ObjectiveTerm(t.name, "const_data", t.over, t.coef + (ref,), None, (), None, (), t.sign, t.where)
            buggy = apply_patch(ir, [Edit("replace", "objective", name, bad)])
            if _distinct(ir, buggy, probes):
                desc = f"cost in term {name!r} multiplies data {p.name!r} instead of variable {t.var!r}"
                return buggy, (Edit("replace", "objective", name, t),), name, desc
    raise IncompatibleTarget("no cost term with a data parameter to substitute")


def _missing_cost(ir, scenario, spec, probes):
    src = _sources(ir)
    costs = [f.name for f in scenario.fields if f.role == "cost"]
    targets = [spec.target] if spec.target else _order(costs, spec.seed)
    for fld in targets:
        terms = [t for t in ir.objective if any(src.get(p) == fld for p in coef_params(t.coef))]
        if not terms:
            continue
        buggy = ir.with_(objective=tuple(t for t in ir.objective if t not in terms))
        if _distinct(ir, buggy, probes):
            repair = tuple(Edit("add", "objective", t.name, t) for t in terms)
            desc = f"objective omits every term priced by field {fld!r}"
            return buggy, repair, fld, desc
    raise IncompatibleTarget("no cost field whose removal changes behavior")


def _mentions(obj, name: str) -> bool:
    idx = set(_index_sets(getattr(obj, "index", ())))
    for f in obj.coef:
        if isinstance(f, ParamRef):
            idx |= _index_sets(f.index)
    return name in idx or any(w[0] == name for w in obj.where)


def _drop_index(c, name: str):
    terms = tuple(replace(t, sum=t.sum + (name,)) if _mentions(t, name) else t for t in c.terms)
    rhs = tuple(replace(r, sum=r.sum + (name,)) if _mentions(r, name) else r for r in c.rhs)
    return replace(c, over=tuple(s for s in c.over if s != name), terms=terms, rhs=rhs)


def _constraint_scope(ir, scenario, spec, probes):
    targets = [spec.target] if spec.target else _order([c.name for c in ir.constraints], spec.seed)
    for name in targets:
        c = ir.constraint(name)
        variants = [(_drop_index(c, s), f"constraint {name!r} aggregates over {s!r} instead of holding per {s!r}") for s in c.over]
        variants.append((None, f"constraint {name!r} is missing"))
        for new, desc in variants:
            if new is None:
                buggy = apply_patch(ir, [Edit("remove", "constraints", name)])
                repair = (Edit("add", "constraints", name, c),)
            else:
                buggy = apply_patch(ir, [Edit("replace", "constraints", name, new)])
                repair = (Edit("replace", "constraints", name, c),)
            if validate(buggy).ok and _distinct(ir, buggy, probes):
                return buggy, repair, name, desc
    raise IncompatibleTarget("no constraint whose rescoping changes behavior")


def _degenerate(ir, scenario, spec, probes):
    if not scenario.expectations.nontrivial_plan:
        raise IncompatibleTarget("scenario expects a trivial plan; the degenerate-plan check is gated off")
    pv = ir.public
    buggy = apply_patch(ir, [Edit("replace", "variables", pv.name, replace(pv, upper=0.0))])
    if not _distinct(ir, buggy, probes):
        raise IncompatibleTarget("capping the public plan at zero changes nothing")
    return buggy, (Edit("replace", "variables", pv.name, pv),), pv.name, f"public variable {pv.name!r} is bounded above by zero"


_INJECTORS = {
    "sign_flip": _sign_flip,
    "cost_on_data": _cost_on_data,
    "missing_cost": _missing_cost,
    "constraint_scope": _constraint_scope,
    "degenerate": _degenerate,
}


def inject(ir: FormulationIR, spec: FaultSpec, scenario) -> FaultedCandidate:
    """Apply one fault of ``spec.kind`` to ``ir`` (the scenario's reference)."""
    ir = canonicalize(ir)
    if spec.kind == "interface_mismatch":
        wrapper = "wrong_dims" if spec.target in (None, "wrong_dims") else spec.target
        if wrapper not in ("wrong_dims", "no_decomposition"):
            raise IncompatibleTarget(f"unknown interface wrapper {wrapper!r}")
        desc = "agent emits a proposal with the wrong dimensions" if wrapper == "wrong_dims" else "agent omits its objective decomposition"
        return _finish(spec, scenario, ir, ir, None, wrapper, desc, wrapper)
    probes = probe_plans(ir, scenario, spec.seed)
    buggy, repair, target, desc = _INJECTORS[spec.kind](ir, scenario, spec, probes)
    return _finish(spec, scenario, ir, buggy, repair, target, desc)


def fault_matrix(scenarios, kinds=KINDS, seed: int = 0):
    """All applicable (scenario, kind) candidates plus the skipped pairs."""
    out, skipped = [], []
    for s in scenarios:
        for k in kinds:
            try:
                out.append(inject(s.reference, FaultSpec(k, None, seed), s))
            except IncompatibleTarget as exc:
                skipped.append((s.name, k, str(exc)))
    return out, skipped


__all__ = [
    "DESIGNATED",
    "FaultSpec",
    "FaultedCandidate",
    "IncompatibleTarget",
    "KINDS",
    "MissingDecompAgent",
    "WrongDimsAgent",
    "fault_matrix",
    "inject",
    "read_candidate",
]
