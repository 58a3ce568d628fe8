"""Structural queries on formulations: validation, canonical form and static audits."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .expand import CompileError, Layout, ParamTable, _bindings, ground_objective
from .ir import (
    FormulationIR,
    LinearConstraint,
    ObjectiveTerm,
    ParamRef,
    coef_params,
    factor_to_json,
    parse_index,
)

PUBLIC_DIMS = ("item", "node", "period")


@dataclass(frozen=True)
class ValidationError:
    code: str
    message: str

    def __str__(self) -> str:
        return f"[{self.code}] {self.message}"


@dataclass(frozen=True)
class ValidationReport:
    errors: tuple[ValidationError, ...] = ()

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> list[str]:
        return [e.code for e in self.errors]

    def __len__(self) -> int:
        return len(self.errors)


def validate(ir: FormulationIR) -> ValidationReport:
    """Collect resolution, shape, convexity and public-variable errors.

    An empty report means the formulation can be compiled into a convex QP.
    """
    errs: list[ValidationError] = []

    def err(code, msg):
        errs.append(ValidationError(code, msg))

    for section, items in (
        ("set", ir.sets),
        ("parameter", ir.parameters),
        ("variable", ir.variables),
        ("constraint", ir.constraints),
        ("objective term", ir.objective),
    ):
        seen = set()
        for it in items:
            if it.name in seen:
                err("duplicate", f"{section} {it.name!r} declared twice")
            seen.add(it.name)

    sets = {s.name: s for s in ir.sets}
    params = {p.name: p for p in ir.parameters}
    variables = {v.name: v for v in ir.variables}

    for p in ir.parameters:
        missing = [s for s in p.shape if s not in sets]
        if missing:
            err("resolution", f"parameter {p.name!r} uses undeclared sets {missing}")
            continue
        need = int(np.prod([sets[s].size for s in p.shape])) if p.shape else 1
        if len(p.values) != need:
            err("shape", f"parameter {p.name!r} has {len(p.values)} values, shape needs {need}")

    for v in ir.variables:
        missing = [s for s in v.shape if s not in sets]
        if missing:
            err("resolution", f"variable {v.name!r} uses undeclared sets {missing}")
        if v.lower > v.upper:
            err("bounds", f"variable {v.name!r} has lower bound above upper bound")

    pubs = [v for v in ir.variables if v.is_public]
    if not pubs:
        err("public", "no public variable declared")
    elif len(pubs) > 1:
        err("public", f"{len(pubs)} public variables declared; exactly one is required")
    else:
        pv = pubs[0]
        dims = tuple(sets[s].dim if s in sets else "?" for s in pv.shape)
        if dims != PUBLIC_DIMS:
            err("public", f"public variable {pv.name!r} must span (item, node, period), spans {dims}")

    def check_factors(where, factors, bound):
        for f in factors:
            if not isinstance(f, ParamRef):
                continue
            p = params.get(f.param)
            if p is None:
                err("resolution", f"{where}: undeclared parameter {f.param!r}")
                continue
            check_index(where, f"parameter {p.name!r}", p.shape, f.index, bound)

    def check_index(where, what, shape, index, bound):
        if len(index) != len(shape):
            err("shape", f"{where}: {what} indexed with {len(index)} indices, declared over {len(shape)}")
            return
        for expr, s in zip(index, shape):
            name, _ = parse_index(expr)
            if name != s:
                err("shape", f"{where}: {what} position over {s!r} indexed by {name!r}")
            if name not in bound:
                err("resolution", f"{where}: index {name!r} is not quantified or summed")

    def check_sets(where, names):
        bad = [n for n in names if n not in sets]
        if bad:
            err("resolution", f"{where}: undeclared sets {bad}")
        return not bad

    def check_where(where, w, bound):
        for name, _ in w:
            if name not in bound:
                err("resolution", f"{where}: filter on unbound index {name!r}")

    for c in ir.constraints:
        label = f"constraint {c.name!r}"
        check_sets(label, c.over)
        if not c.terms:
            err("shape", f"{label} has no variable terms")
        for t in c.terms:
            check_sets(label, t.sum)
            bound = set(c.over) | set(t.sum)
            v = variables.get(t.var)
            if v is None:
                err("resolution", f"{label}: undeclared variable {t.var!r}")
            else:
                check_index(label, f"variable {v.name!r}", v.shape, t.index, bound)
            check_factors(label, t.coef, bound)
            check_where(label, t.where, bound)
        for rt in c.rhs:
            check_sets(label, rt.sum)
            bound = set(c.over) | set(rt.sum)
            check_factors(label, rt.coef, bound)
            check_where(label, rt.where, bound)

    for t in ir.objective:
        label = f"objective term {t.name!r}"
        check_sets(label, t.over)
        bound = set(t.over)
        check_factors(label, t.coef, bound)
        check_where(label, t.where, bound)
        if t.kind == "const_data":
            if t.var is not None or t.var2 is not None:
                err("shape", f"{label}: const_data term must not reference variables")
            continue
        if t.var is None:
            err("shape", f"{label}: {t.kind} term needs a variable")
            continue
        for var, index in ((t.var, t.index), (t.var2, t.index2 or t.index)):
            if var is None:
                continue
            v = variables.get(var)
            if v is None:
                err("resolution", f"{label}: undeclared variable {var!r}")
            else:
                check_index(label, f"variable {v.name!r}", v.shape, index, bound)
        if t.kind == "linear_var" and t.var2 is not None:
            err("shape", f"{label}: linear_var term has a second variable")

    if not errs:
        _check_convexity(ir, err)
    return ValidationReport(tuple(errs))


def _check_convexity(ir: FormulationIR, err) -> None:
    layout = Layout.of(ir)
    table = ParamTable(ir, layout.sizes)
    cross = False
    for t in ir.objective:
        if t.kind != "quadratic_var":
            continue
        if t.var2 is not None and (t.var2 != t.var or (t.index2 and t.index2 != t.index)):
            cross = True
            continue
        for b in _bindings(layout.sizes, t.over, t.where):
            k = table.coef(t.coef, b)
            if k is not None and t.sign * k < 0:
                err("nonconvex", f"objective term {t.name!r} has a negative coefficient on a square")
                break
    if cross:
        g = ground_objective(ir, layout, table)
        if g.P.size and np.linalg.eigvalsh(g.P).min() < -1e-9 * max(1.0, np.abs(g.P).max()):
            err("nonconvex", "quadratic objective is not positive semidefinite")


def compile_ok(ir: FormulationIR) -> bool:
    try:
        Layout.of(ir)
        return True
    except CompileError:
        return False


# --- canonical form ------------------------------------------------------


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _canon_coef(coef) -> tuple:
    lit = 1.0
    prm = []
    for f in coef:
        if isinstance(f, ParamRef):
            prm.append(f)
        else:
            lit *= float(f)
    prm.sort(key=lambda f: _dump(factor_to_json(f)))
    if lit == 1.0 and prm:
        return tuple(prm)
    return (lit, *prm)


def _canon_constraint(c: LinearConstraint) -> LinearConstraint:
    terms = [replace(t, coef=_canon_coef(t.coef), sum=tuple(sorted(t.sum))) for t in c.terms]
    rhs = [replace(r, coef=_canon_coef(r.coef), sum=tuple(sorted(r.sum))) for r in c.rhs]
    from .ir import _lterm_to_dict, _rterm_to_dict

    terms.sort(key=lambda t: _dump(_lterm_to_dict(t)))
    rhs.sort(key=lambda r: _dump(_rterm_to_dict(r)))
    return replace(c, terms=tuple(terms), rhs=tuple(rhs), roles=tuple(sorted(set(c.roles))))


def _canon_term(t: ObjectiveTerm) -> ObjectiveTerm:
    var, index, var2, index2 = t.var, t.index, t.var2, t.index2
    if t.kind == "quadratic_var" and var2 is not None:
        if var2 == var and (not index2 or index2 == index):
            var2, index2 = None, ()
        elif (var2, index2) < (var, index):
            var, index, var2, index2 = var2, index2, var, index
    return replace(t, coef=_canon_coef(t.coef), var=var, index=index, var2=var2, index2=index2, sign=float(t.sign))


def canonicalize(ir: FormulationIR) -> FormulationIR:
    """Sorted, normalized copy; ``canonicalize(canonicalize(ir)) == canonicalize(ir)``."""
    return ir.with_(
        sets=tuple(sorted(ir.sets, key=lambda s: s.name)),
        parameters=tuple(sorted(ir.parameters, key=lambda p: p.name)),
        variables=tuple(
            sorted((replace(v, roles=tuple(sorted(set(v.roles)))) for v in ir.variables), key=lambda v: v.name)
        ),
        constraints=tuple(sorted((_canon_constraint(c) for c in ir.constraints), key=lambda c: c.name)),
        objective=tuple(sorted((_canon_term(t) for t in ir.objective), key=lambda t: t.name)),
    )


def structure_key(ir: FormulationIR) -> str:
    """Canonical JSON with constraint and objective-term labels removed."""
    d = canonicalize(ir).to_dict()
    cons = []
    for c in d["constraints"]:
        c = dict(c)
        c.pop("name")
        cons.append(_dump(c))
    terms = []
    for t in d["objective"]:
        t = dict(t)
        t.pop("name")
        terms.append(_dump(t))
    d["constraints"] = sorted(cons)
    d["objective"] = sorted(terms)
    return _dump(d)


def structurally_equal(a: FormulationIR, b: FormulationIR) -> bool:
    return structure_key(a) == structure_key(b)


# --- static evidence ------------------------------------------------------


@dataclass(frozen=True)
class TermFlag:
    term: str
    cost_fields: tuple[str, ...]
    severity: str
    detail: str


def _roles(fields) -> dict[str, str]:
    return {f.name: f.role for f in fields}


def _source_of(ir: FormulationIR) -> dict[str, str]:
    return {p.name: p.source for p in ir.parameters}


def _cost_fields_of(term: ObjectiveTerm, ir: FormulationIR, roles: dict[str, str]) -> list[str]:
    src = _source_of(ir)
    out = []
    for name in coef_params(term.coef):
        f = src.get(name)
        if f is not None and roles.get(f) == "cost" and f not in out:
            out.append(f)
    return out


def find_cost_data_antipatterns(ir: FormulationIR, fields) -> list[TermFlag]:
    """Flag constant objective terms that carry a cost field.

    A flag is ``hard`` when the cost field is never applied to a decision
    variable anywhere in the objective, ``warning`` otherwise.
    """
    roles = _roles(fields)
    applied = set()
    for t in ir.objective:
        if t.kind != "const_data":
            applied.update(_cost_fields_of(t, ir, roles))
    flags = []
    for t in sorted(ir.objective, key=lambda t: t.name):
        if t.kind != "const_data":
            continue
        costs = _cost_fields_of(t, ir, roles)
        if not costs:
            continue
        detached = [c for c in costs if c not in applied]
        sev = "hard" if detached else "warning"
        others = [p for p in coef_params(t.coef) if _source_of(ir).get(p) not in costs]
        detail = f"term {t.name!r} multiplies cost field(s) {costs} by fixed data {others or 'literals'}"
        flags.append(TermFlag(t.name, tuple(costs), sev, detail))
    return flags


@dataclass(frozen=True)
class AuditReport:
    missing_roles: tuple[str, ...] = ()
    unexpected_variables: tuple[str, ...] = ()
    missing_constraints: tuple[str, ...] = ()
    misscoped_constraints: tuple[str, ...] = ()

    @property
    def empty(self) -> bool:
        return not (self.missing_roles or self.unexpected_variables or self.missing_constraints or self.misscoped_constraints)

    @property
    def structural_gap(self) -> bool:
        """An expected decision or constraint is absent or scoped wrongly."""
        return bool(self.missing_roles or self.missing_constraints or self.misscoped_constraints)

    def lines(self) -> list[str]:
        out = []
        if self.missing_roles:
            out.append(f"expected decisions without a variable: {list(self.missing_roles)}")
        if self.unexpected_variables:
            out.append(f"variables matching no described decision: {list(self.unexpected_variables)}")
        if self.missing_constraints:
            out.append(f"expected constraints absent: {list(self.missing_constraints)}")
        if self.misscoped_constraints:
            out.append(f"constraints quantified over the wrong index sets: {list(self.misscoped_constraints)}")
        return out


def audit_decision_variables(ir: FormulationIR, scenario) -> AuditReport:
    """Compare private variables and constraint roles with the described decisions."""
    exp = scenario.expectations
    expected = set(exp.decision_roles)
    private = [v for v in ir.variables if not v.is_public]
    have = set()
    unexpected = []
    for v in sorted(private, key=lambda v: v.name):
        hit = expected.intersection(v.roles)
        have |= hit
        if not hit:
            unexpected.append(v.name)
    missing_roles = sorted(expected - have)

    dim_of = {s.name: s.dim for s in ir.sets}
    missing_c, misscoped = [], []
    for spec in exp.constraint_roles:
        role, want = spec["role"], tuple(sorted(spec["over"]))
        cands = [c for c in ir.constraints if role in c.roles]
        if not cands:
            missing_c.append(role)
            continue
        for c in sorted(cands, key=lambda c: c.name):
            scope = tuple(sorted(dim_of.get(s, "?") for s in c.over))
            if scope != want:
                misscoped.append(f"{c.name} ({role}): expected over {list(want)}, found {list(scope)}")
    return AuditReport(tuple(missing_roles), tuple(unexpected), tuple(sorted(set(missing_c))), tuple(misscoped))


def find_missing_cost_parameters(ir: FormulationIR, fields) -> list[str]:
    """Cost fields never referenced by an objective term (constraint use does not count)."""
    src = _source_of(ir)
    used = set()
    for t in ir.objective:
        for p in coef_params(t.coef):
            if p in src:
                used.add(src[p])
    return [f.name for f in fields if f.role == "cost" and f.name not in used]


__all__ = [
    "ValidationError",
    "ValidationReport",
    "validate",
    "canonicalize",
    "structure_key",
    "structurally_equal",
    "TermFlag",
    "find_cost_data_antipatterns",
    "AuditReport",
    "audit_decision_variables",
    "find_missing_cost_parameters",
]
