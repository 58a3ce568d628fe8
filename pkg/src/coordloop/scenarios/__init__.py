"""Scenario schema, the shipped scenarios, a generator and the joint problem."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from ..agents import CounterpartyParams, counterparty_ir
from ..core import DimsMismatch
from ..formulation import FormulationIR, canonicalize
from ..qpsolver import CompiledQP, build_joint, compile_base, public_dims
from .generator import TEMPLATES, generate_scenario
from .spec import (
    Expectations,
    FieldMeta,
    ParseError,
    ScenarioDims,
    ScenarioSpec,
    SchemaError,
    emit,
    load_scenario,
    scenario_from_json,
)

DATA_DIR = Path(__file__).parent / "data"
SHIPPED = ("example1", "example2", "example3")


@dataclass(frozen=True)
class LabeledCandidate:
    """A known-buggy formulation shipped alongside a scenario."""

    name: str
    scenario: str
    kind: str
    designated: tuple
    formulation: FormulationIR

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "scenario": self.scenario,
            "fault_kind": self.kind,
            "designated_checks": list(self.designated),
            "formulation": self.formulation.to_dict(),
        }


def shipped_path(name: str) -> Path:
    return DATA_DIR / f"{name}.json"


def load_shipped(name: str) -> ScenarioSpec:
    if name not in SHIPPED:
        raise KeyError(f"no shipped scenario {name!r}; have {SHIPPED}")
    return load_scenario(shipped_path(name))


def resolve_scenario(ref: str) -> ScenarioSpec:
    """A shipped name or a path to a scenario file."""
    if ref in SHIPPED:
        return load_shipped(ref)
    return load_scenario(ref)


def load_candidate(path) -> LabeledCandidate:
    try:
        d = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return LabeledCandidate(
        d["name"], d["scenario"], d["fault_kind"], tuple(d["designated_checks"]), FormulationIR.from_dict(d["formulation"])
    )


def shipped_candidates() -> list[LabeledCandidate]:
    return [load_candidate(p) for p in sorted(DATA_DIR.glob("candidate_*.json"))]


def build_centralized(vendor_ir: FormulationIR, cp: CounterpartyParams) -> CompiledQP:
    """One QP over the shared public plan with both parties' private parts."""
    v = compile_base(canonicalize(vendor_ir))
    dims = public_dims(vendor_ir)
    c = compile_base(counterparty_ir(cp, dims))
    if v.public_idx.size != c.public_idx.size:
        raise DimsMismatch("vendor and counterparty disagree on public dims")
    return build_joint([v, c])


def write_shipped(directory: Path = DATA_DIR) -> list[Path]:
    """Regenerate the shipped data files from the Python definitions."""
    from .library import BUILDERS, CANDIDATES

    directory.mkdir(parents=True, exist_ok=True)
    out = []
    for name, fn in BUILDERS.items():
        p = directory / f"{name}.json"
        p.write_text(emit(fn()))
        out.append(p)
    for name, (scen, fn, kind, checks) in CANDIDATES.items():
        p = directory / f"candidate_{name}.json"
        cand = LabeledCandidate(name, scen, kind, checks, fn())
        p.write_text(json.dumps(cand.to_json(), indent=1, sort_keys=True) + "\n")
        out.append(p)
    return out


__all__ = [
    "DATA_DIR",
    "Expectations",
    "FieldMeta",
    "LabeledCandidate",
    "ParseError",
    "SHIPPED",
    "ScenarioDims",
    "ScenarioSpec",
    "SchemaError",
    "TEMPLATES",
    "build_centralized",
    "emit",
    "generate_scenario",
    "load_candidate",
    "load_scenario",
    "load_shipped",
    "resolve_scenario",
    "scenario_from_json",
    "shipped_candidates",
    "shipped_path",
    "write_shipped",
]
