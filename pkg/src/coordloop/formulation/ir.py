"""Declarative convex-QP formulation IR and its JSON encoding.

A formulation is a small algebraic model: named index sets, parameters bound
to scenario data fields, variables, affine constraints and objective terms.
Index expressions are set names with an optional integer shift (``"t-1"``);
an instance whose shifted index falls outside the set is dropped, which is how
inventory-balance lags are written. ``where`` filters restrict a term to
listed positions of named sets (``{"t": [0]}``).

JSON layout::

    {"sets": [{"name": "i", "size": 2, "dim": "item"}, ...],
     "parameters": [{"name", "shape", "source", "values"}],
     "variables": [{"name", "shape", "visibility", "lower", "upper", "roles"}],
     "constraints": [{"name", "over", "relation", "terms", "rhs", "roles"}],
     "objective": [{"name", "kind", "sign", "coef", "var", "index",
                    "var2", "index2", "over", "where"}],
     "sense": "minimize"}

Factors inside ``coef`` lists are numbers or ``{"param": name, "index": [...]}``.
``null`` bounds mean unbounded.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, replace
from typing import Union

SET_DIMS = ("item", "node", "period", "warehouse", "custom")
RELATIONS = ("<=", "==", ">=")
TERM_KINDS = ("linear_var", "quadratic_var", "const_data")

_INDEX_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?:([+-])\s*(\d+))?\s*$")


class IRFormatError(ValueError):
    """Malformed formulation document."""


def parse_index(expr: str) -> tuple[str, int]:
    m = _INDEX_RE.match(expr)
    if not m:
        raise IRFormatError(f"bad index expression {expr!r}")
    name, sign, k = m.groups()
    off = 0 if sign is None else (int(k) if sign == "+" else -int(k))
    return name, off


def format_index(name: str, off: int) -> str:
    if off == 0:
        return name
    return f"{name}{'+' if off > 0 else '-'}{abs(off)}"


def _norm_index(exprs) -> tuple[str, ...]:
    return tuple(format_index(*parse_index(e)) for e in exprs)


@dataclass(frozen=True)
class IndexSet:
    name: str
    size: int
    dim: str = "custom"


@dataclass(frozen=True)
class Parameter:
    name: str
    shape: tuple[str, ...]
    source: str
    values: tuple[float, ...]


@dataclass(frozen=True)
class Variable:
    name: str
    shape: tuple[str, ...]
    visibility: str = "private"
    lower: float = 0.0
    upper: float = math.inf
    roles: tuple[str, ...] = ()

    @property
    def is_public(self) -> bool:
        return self.visibility == "public"


@dataclass(frozen=True)
class ParamRef:
    param: str
    index: tuple[str, ...] = ()


Factor = Union[float, ParamRef]
Where = tuple[tuple[str, tuple[int, ...]], ...]


@dataclass(frozen=True)
class LinearTerm:
    """``prod(coef) * var[index]`` summed over ``sum`` within one constraint row."""

    var: str
    index: tuple[str, ...]
    coef: tuple[Factor, ...] = (1.0,)
    sum: tuple[str, ...] = ()
    where: Where = ()


@dataclass(frozen=True)
class RhsTerm:
    coef: tuple[Factor, ...]
    sum: tuple[str, ...] = ()
    where: Where = ()


@dataclass(frozen=True)
class LinearConstraint:
    name: str
    over: tuple[str, ...]
    terms: tuple[LinearTerm, ...]
    relation: str
    rhs: tuple[RhsTerm, ...] = ()
    roles: tuple[str, ...] = ()


@dataclass(frozen=True)
class ObjectiveTerm:
    name: str
    kind: str
    over: tuple[str, ...]
    coef: tuple[Factor, ...] = (1.0,)
    var: str | None = None
    index: tuple[str, ...] = ()
    var2: str | None = None
    index2: tuple[str, ...] = ()
    sign: float = 1.0
    where: Where = ()


@dataclass(frozen=True)
class FormulationIR:
    sets: tuple[IndexSet, ...]
    parameters: tuple[Parameter, ...] = ()
    variables: tuple[Variable, ...] = ()
    constraints: tuple[LinearConstraint, ...] = ()
    objective: tuple[ObjectiveTerm, ...] = ()
    sense: str = "minimize"

    def set(self, name: str) -> IndexSet:
        for s in self.sets:
            if s.name == name:
                return s
        raise KeyError(name)

    def parameter(self, name: str) -> Parameter:
        for p in self.parameters:
            if p.name == name:
                return p
        raise KeyError(name)

    def variable(self, name: str) -> Variable:
        for v in self.variables:
            if v.name == name:
                return v
        raise KeyError(name)

    def constraint(self, name: str) -> LinearConstraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(name)

    def term(self, name: str) -> ObjectiveTerm:
        for t in self.objective:
            if t.name == name:
                return t
        raise KeyError(name)

    @property
    def public_variables(self) -> list[Variable]:
        return [v for v in self.variables if v.is_public]

    @property
    def public(self) -> Variable:
        pubs = self.public_variables
        if len(pubs) != 1:
            raise ValueError(f"expected exactly one public variable, found {len(pubs)}")
        return pubs[0]

    def with_(self, **changes) -> "FormulationIR":
        return replace(self, **changes)

    # serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "sets": [{"name": s.name, "size": s.size, "dim": s.dim} for s in self.sets],
            "parameters": [_param_to_dict(p) for p in self.parameters],
            "variables": [_var_to_dict(v) for v in self.variables],
            "constraints": [_constraint_to_dict(c) for c in self.constraints],
            "objective": [_term_to_dict(t) for t in self.objective],
            "sense": self.sense,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FormulationIR":
        try:
            return _ir_from_dict(d)
        except IRFormatError:
            raise
        except (KeyError, TypeError, ValueError, AttributeError) as exc:
            raise IRFormatError(f"malformed formulation: {exc!r}") from exc

    def to_json(self, indent: int | None = 1) -> str:
        return json.dumps(self.to_dict(), indent=indent, sort_keys=False)

    @classmethod
    def from_json(cls, text: str) -> "FormulationIR":
        try:
            d = json.loads(text)
        except json.JSONDecodeError as exc:
            raise IRFormatError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(d)


# --- dict helpers ---------------------------------------------------------


def _bound_out(v: float):
    return None if math.isinf(v) else float(v)


def _bound_in(v, default: float) -> float:
    if v is None:
        return default
    return float(v)


def factor_to_json(f: Factor):
    if isinstance(f, ParamRef):
        return {"param": f.param, "index": list(f.index)}
    return float(f)


def factor_from_json(obj) -> Factor:
    if isinstance(obj, dict):
        return ParamRef(str(obj["param"]), _norm_index(obj.get("index", [])))
    if isinstance(obj, bool) or not isinstance(obj, (int, float)):
        raise IRFormatError(f"bad factor {obj!r}")
    return float(obj)


def where_to_json(w: Where) -> dict:
    return {k: list(v) for k, v in w}


def where_from_json(obj) -> Where:
    if not obj:
        return ()
    return tuple(sorted((str(k), tuple(sorted(int(x) for x in v))) for k, v in obj.items()))


def _param_to_dict(p: Parameter) -> dict:
    return {"name": p.name, "shape": list(p.shape), "source": p.source, "values": [float(v) for v in p.values]}


def _var_to_dict(v: Variable) -> dict:
    return {
        "name": v.name,
        "shape": list(v.shape),
        "visibility": v.visibility,
        "lower": _bound_out(v.lower),
        "upper": _bound_out(v.upper),
        "roles": list(v.roles),
    }


def _lterm_to_dict(t: LinearTerm) -> dict:
    d = {"coef": [factor_to_json(f) for f in t.coef], "var": t.var, "index": list(t.index)}
    if t.sum:
        d["sum"] = list(t.sum)
    if t.where:
        d["where"] = where_to_json(t.where)
    return d


def _rterm_to_dict(t: RhsTerm) -> dict:
    d = {"coef": [factor_to_json(f) for f in t.coef]}
    if t.sum:
        d["sum"] = list(t.sum)
    if t.where:
        d["where"] = where_to_json(t.where)
    return d


def _constraint_to_dict(c: LinearConstraint) -> dict:
    return {
        "name": c.name,
        "over": list(c.over),
        "relation": c.relation,
        "terms": [_lterm_to_dict(t) for t in c.terms],
        "rhs": [_rterm_to_dict(t) for t in c.rhs],
        "roles": list(c.roles),
    }


def _term_to_dict(t: ObjectiveTerm) -> dict:
    d = {"name": t.name, "kind": t.kind, "sign": float(t.sign), "coef": [factor_to_json(f) for f in t.coef]}
    if t.var is not None:
        d["var"] = t.var
        d["index"] = list(t.index)
    if t.var2 is not None:
        d["var2"] = t.var2
        d["index2"] = list(t.index2)
    d["over"] = list(t.over)
    if t.where:
        d["where"] = where_to_json(t.where)
    return d


def param_from_dict(d: dict) -> Parameter:
    return Parameter(str(d["name"]), tuple(d.get("shape", [])), str(d["source"]), tuple(float(x) for x in d["values"]))


def variable_from_dict(d: dict) -> Variable:
    vis = d.get("visibility", "private")
    if vis not in ("public", "private"):
        raise IRFormatError(f"variable {d.get('name')!r}: bad visibility {vis!r}")
    return Variable(
        str(d["name"]),
        tuple(d.get("shape", [])),
        vis,
        _bound_in(d.get("lower", 0.0), -math.inf),
        _bound_in(d.get("upper"), math.inf),
        tuple(d.get("roles", [])),
    )


def _lterm_from_dict(d: dict) -> LinearTerm:
    return LinearTerm(
        var=str(d["var"]),
        index=_norm_index(d.get("index", [])),
        coef=tuple(factor_from_json(f) for f in d.get("coef", [1.0])),
        sum=tuple(d.get("sum", [])),
        where=where_from_json(d.get("where")),
    )


def _rterm_from_dict(d: dict) -> RhsTerm:
    return RhsTerm(
        coef=tuple(factor_from_json(f) for f in d.get("coef", [])),
        sum=tuple(d.get("sum", [])),
        where=where_from_json(d.get("where")),
    )


def constraint_from_dict(d: dict) -> LinearConstraint:
    rel = d["relation"]
    if rel not in RELATIONS:
        raise IRFormatError(f"constraint {d.get('name')!r}: bad relation {rel!r}")
    return LinearConstraint(
        name=str(d["name"]),
        over=tuple(d.get("over", [])),
        terms=tuple(_lterm_from_dict(t) for t in d.get("terms", [])),
        relation=rel,
        rhs=tuple(_rterm_from_dict(t) for t in d.get("rhs", [])),
        roles=tuple(d.get("roles", [])),
    )


def term_from_dict(d: dict) -> ObjectiveTerm:
    kind = d["kind"]
    if kind not in TERM_KINDS:
        raise IRFormatError(f"objective term {d.get('name')!r}: bad kind {kind!r}")
    return ObjectiveTerm(
        name=str(d["name"]),
        kind=kind,
        over=tuple(d.get("over", [])),
        coef=tuple(factor_from_json(f) for f in d.get("coef", [1.0])),
        var=d.get("var"),
        index=_norm_index(d.get("index", [])),
        var2=d.get("var2"),
        index2=_norm_index(d.get("index2", [])),
        sign=float(d.get("sign", 1.0)),
        where=where_from_json(d.get("where")),
    )


def _ir_from_dict(d: dict) -> FormulationIR:
    if not isinstance(d, dict):
        raise IRFormatError("formulation must be a JSON object")
    sense = d.get("sense", "minimize")
    if sense != "minimize":
        raise IRFormatError(f"only minimize is supported, got {sense!r}")
    sets = []
    for s in d.get("sets", []):
        dim = s.get("dim", "custom")
        if dim not in SET_DIMS:
            raise IRFormatError(f"set {s.get('name')!r}: bad dim {dim!r}")
        size = s["size"]
        if isinstance(size, bool) or int(size) != size or size < 1:
            raise IRFormatError(f"set {s.get('name')!r}: size must be a positive integer")
        sets.append(IndexSet(str(s["name"]), int(size), dim))
    return FormulationIR(
        sets=tuple(sets),
        parameters=tuple(param_from_dict(p) for p in d.get("parameters", [])),
        variables=tuple(variable_from_dict(v) for v in d.get("variables", [])),
        constraints=tuple(constraint_from_dict(c) for c in d.get("constraints", [])),
        objective=tuple(term_from_dict(t) for t in d.get("objective", [])),
        sense=sense,
    )


def coef_params(coef) -> list[str]:
    return [f.param for f in coef if isinstance(f, ParamRef)]


__all__ = [
    "IRFormatError",
    "IndexSet",
    "Parameter",
    "Variable",
    "ParamRef",
    "LinearTerm",
    "RhsTerm",
    "LinearConstraint",
    "ObjectiveTerm",
    "FormulationIR",
    "parse_index",
    "format_index",
    "coef_params",
]
