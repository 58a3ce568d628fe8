"""Scenario schema, loading and emission.

A scenario file is JSON with top-level keys ``schema_version``, ``name``,
``tags``, ``dims``, ``nl_text``, ``fields``, ``reference_formulation``,
``counterparty``, ``expectations`` and optionally ``notes``. Emission is
canonical (sorted keys, one-space indent, trailing newline), so loading and
re-emitting a shipped file reproduces it byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..agents import CounterpartyParams
from ..core import Dims
from ..formulation import FormulationIR, IRFormatError, validate

SCHEMA_VERSION = 1
FIELD_ROLES = ("cost", "capacity", "inflow", "demand", "inventory", "other")
DIM_SYMBOLS = {"item": "A", "node": "J", "period": "T", "warehouse": "W"}


class ParseError(ValueError):
    pass


class SchemaError(ValueError):
    pass


@dataclass(frozen=True)
class ScenarioDims:
    A: int
    J: int
    T: int
    W: int | None = None

    def size_of(self, sym: str) -> int:
        v = getattr(self, sym, None)
        if v is None:
            raise SchemaError(f"dimension {sym!r} is not declared")
        return v

    @property
    def public(self) -> Dims:
        return Dims(self.A, self.J, self.T)

    def to_json(self) -> dict:
        d = {"A": self.A, "J": self.J, "T": self.T}
        if self.W is not None:
            d["W"] = self.W
        return d


@dataclass(frozen=True)
class FieldMeta:
    name: str
    shape: tuple[str, ...]
    role: str
    data: tuple[float, ...]

    @property
    def array(self) -> np.ndarray:
        return np.asarray(self.data, dtype=float)

    def to_json(self) -> dict:
        return {"name": self.name, "shape": list(self.shape), "role": self.role, "data": list(self.data)}


@dataclass(frozen=True)
class Expectations:
    nontrivial_plan: bool = True
    total_demand: float | None = None
    decision_roles: tuple[str, ...] = ()
    constraint_roles: tuple = ()
    nonnegative_costs: bool = True

    def to_json(self) -> dict:
        return {
            "nontrivial_plan": self.nontrivial_plan,
            "total_demand": self.total_demand,
            "decision_roles": list(self.decision_roles),
            "constraint_roles": [dict(c) for c in self.constraint_roles],
            "nonnegative_costs": self.nonnegative_costs,
        }


@dataclass(frozen=True)
class ScenarioSpec:
    name: str
    tags: tuple[str, ...]
    dims: ScenarioDims
    nl_text: str
    fields: tuple[FieldMeta, ...]
    reference: FormulationIR
    counterparty: CounterpartyParams
    expectations: Expectations
    notes: tuple[str, ...] = field(default=())

    def field(self, name: str) -> FieldMeta:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def data(self) -> dict[str, list[float]]:
        return {f.name: list(f.data) for f in self.fields}

    @property
    def cost_scale(self) -> float:
        """Largest cost-field magnitude, at least 1."""
        vals = [abs(v) for f in self.fields if f.role == "cost" for v in f.data]
        return max([1.0] + vals)

    def to_json(self) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "tags": list(self.tags),
            "dims": self.dims.to_json(),
            "nl_text": self.nl_text,
            "fields": [f.to_json() for f in self.fields],
            "reference_formulation": self.reference.to_dict(),
            "counterparty": self.counterparty.to_json(),
            "expectations": self.expectations.to_json(),
        }
        if self.notes:
            d["notes"] = list(self.notes)
        return d


def emit(spec: ScenarioSpec) -> str:
    return json.dumps(spec.to_json(), indent=1, sort_keys=True) + "\n"


def _need(d: dict, key: str, where: str):
    if key not in d:
        raise SchemaError(f"{where}: missing key {key!r}")
    return d[key]


def scenario_from_json(d: dict) -> ScenarioSpec:
    if not isinstance(d, dict):
        raise SchemaError("scenario must be a JSON object")
    ver = d.get("schema_version", SCHEMA_VERSION)
    if ver != SCHEMA_VERSION:
        raise SchemaError(f"unsupported schema_version {ver!r}")
    dd = _need(d, "dims", "scenario")
    try:
        dims = ScenarioDims(int(dd["A"]), int(dd["J"]), int(dd["T"]), int(dd["W"]) if dd.get("W") is not None else None)
        Dims(dims.A, dims.J, dims.T)
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"dims: {exc}") from exc
    fields = []
    for k, fd in enumerate(_need(d, "fields", "scenario")):
        where = f"fields[{k}]"
        name = _need(fd, "name", where)
        role = _need(fd, "role", where)
        if role not in FIELD_ROLES:
            raise SchemaError(f"field {name!r}: role {role!r} not in {FIELD_ROLES}")
        shape = tuple(_need(fd, "shape", where))
        data = tuple(float(x) for x in _need(fd, "data", where))
        expect = int(np.prod([dims.size_of(s) for s in shape])) if shape else 1
        if len(data) != expect:
            raise SchemaError(f"field {name!r}: shape {list(shape)} needs {expect} values, got {len(data)}")
        fields.append(FieldMeta(name, shape, role, data))
    names = [f.name for f in fields]
    if len(set(names)) != len(names):
        raise SchemaError("duplicate field names")
    try:
        ir = FormulationIR.from_dict(_need(d, "reference_formulation", "scenario"))
    except (IRFormatError, KeyError, TypeError) as exc:
        raise SchemaError(f"reference_formulation: {exc}") from exc
    try:
        cp = CounterpartyParams.from_json(_need(d, "counterparty", "scenario"))
    except (TypeError, ValueError) as exc:
        raise SchemaError(f"counterparty: {exc}") from exc
    ed = _need(d, "expectations", "scenario")
    exp = Expectations(
        bool(ed.get("nontrivial_plan", True)),
        None if ed.get("total_demand") is None else float(ed["total_demand"]),
        tuple(ed.get("decision_roles", ())),
        tuple(dict(c) for c in ed.get("constraint_roles", ())),
        bool(ed.get("nonnegative_costs", True)),
    )
    spec = ScenarioSpec(
        _need(d, "name", "scenario"),
        tuple(d.get("tags", ())),
        dims,
        _need(d, "nl_text", "scenario"),
        tuple(fields),
        ir,
        cp,
        exp,
        tuple(d.get("notes", ())),
    )
    check_scenario(spec)
    return spec


def check_bindings(ir: FormulationIR, spec: ScenarioSpec) -> list[str]:
    """Cross-check parameters bound to data fields: shape and values."""
    problems = []
    sets = {s.name: s for s in ir.sets}
    fields = {f.name: f for f in spec.fields}
    for s in ir.sets:
        sym = DIM_SYMBOLS.get(s.dim)
        if sym is not None and getattr(spec.dims, sym, None) not in (None, s.size):
            problems.append(f"set {s.name!r} has size {s.size}, scenario {sym}={getattr(spec.dims, sym)}")
    for p in ir.parameters:
        f = fields.get(p.source)
        if f is None:
            continue
        syms = tuple(DIM_SYMBOLS.get(sets[s].dim, "?") if s in sets else "?" for s in p.shape)
        if syms != f.shape:
            problems.append(f"parameter {p.name!r} has shape {list(syms)}, field {f.name!r} has {list(f.shape)}")
            continue
        if not np.allclose(np.asarray(p.values), f.array, rtol=0, atol=0):
            problems.append(f"parameter {p.name!r} values differ from field {f.name!r}")
    return problems


def check_scenario(spec: ScenarioSpec) -> None:
    rep = validate(spec.reference)
    if not rep.ok:
        raise SchemaError(f"reference formulation invalid: {rep}")
    problems = check_bindings(spec.reference, spec)
    if problems:
        raise SchemaError("; ".join(problems))
    spec.counterparty.arrays(spec.dims.public)


def load_scenario(path) -> ScenarioSpec:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ParseError(f"{p}: {exc}") from exc
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{p}: {exc}") from exc
    return scenario_from_json(d)
