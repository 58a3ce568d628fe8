"""Bounded edits to a formulation (the unit of a localized fix)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

from .ir import (
    FormulationIR,
    IRFormatError,
    LinearConstraint,
    ObjectiveTerm,
    Parameter,
    Variable,
    _constraint_to_dict,
    _param_to_dict,
    _term_to_dict,
    _var_to_dict,
    constraint_from_dict,
    param_from_dict,
    term_from_dict,
    variable_from_dict,
)

MAX_EDITS = 2

_SECTIONS = {
    "objective": ("objective", ObjectiveTerm, _term_to_dict, term_from_dict),
    "constraints": ("constraints", LinearConstraint, _constraint_to_dict, constraint_from_dict),
    "variables": ("variables", Variable, _var_to_dict, variable_from_dict),
    "parameters": ("parameters", Parameter, _param_to_dict, param_from_dict),
}


class PatchRejected(ValueError):
    """The patch is malformed, too large, or breaks the formulation."""


@dataclass(frozen=True)
class Edit:
    op: str  # add | remove | replace
    section: str
    name: str
    element: Any = None

    def to_json(self) -> dict:
        d = {"op": self.op, "section": self.section, "name": self.name}
        if self.element is not None:
            d["element"] = _SECTIONS[self.section][2](self.element)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "Edit":
        try:
            section = d["section"]
            if section not in _SECTIONS:
                raise PatchRejected(f"unknown patch section {section!r}")
            op = d["op"]
            if op not in ("add", "remove", "replace"):
                raise PatchRejected(f"unknown patch op {op!r}")
            el = d.get("element")
            if el is not None:
                el = _SECTIONS[section][3](el)
            elif op != "remove":
                raise PatchRejected(f"{op} edit needs an element")
            return cls(op, section, str(d["name"]), el)
        except (KeyError, TypeError, IRFormatError, ValueError) as exc:
            if isinstance(exc, PatchRejected):
                raise
            raise PatchRejected(f"malformed edit: {exc!r}") from exc


def patch_to_json(edits) -> list[dict]:
    return [e.to_json() for e in edits]


def patch_from_json(items) -> tuple[Edit, ...]:
    if not isinstance(items, list):
        raise PatchRejected("patch must be a list of edits")
    return tuple(Edit.from_json(d) for d in items)


def apply_patch(ir: FormulationIR, edits, max_edits: int = MAX_EDITS) -> FormulationIR:
    """Apply edits in order; structural validity is the caller's concern."""
    edits = tuple(edits)
    if len(edits) > max_edits:
        raise PatchRejected(f"patch has {len(edits)} edits; at most {max_edits} allowed")
    for e in edits:
        attr = _SECTIONS[e.section][0]
        items = list(getattr(ir, attr))
        names = [it.name for it in items]
        if e.op == "add":
            if e.name in names:
                raise PatchRejected(f"{e.section} {e.name!r} already exists")
            items.append(e.element)
        elif e.name not in names:
            raise PatchRejected(f"{e.section} {e.name!r} does not exist")
        elif e.op == "remove":
            items.pop(names.index(e.name))
        else:
            items[names.index(e.name)] = e.element
        ir = ir.with_(**{attr: tuple(items)})
    return ir
