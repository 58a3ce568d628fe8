"""Formulation IR: data model, grounding, structural checks and patches."""

from .analysis import (
    AuditReport,
    TermFlag,
    ValidationError,
    ValidationReport,
    audit_decision_variables,
    canonicalize,
    find_cost_data_antipatterns,
    find_missing_cost_parameters,
    structurally_equal,
    structure_key,
    validate,
)
from .expand import CompileError
from .ir import (
    FormulationIR,
    IndexSet,
    IRFormatError,
    LinearConstraint,
    LinearTerm,
    ObjectiveTerm,
    Parameter,
    ParamRef,
    RhsTerm,
    Variable,
)
from .patch import Edit, PatchRejected, apply_patch, patch_from_json, patch_to_json

__all__ = [
    "AuditReport",
    "CompileError",
    "Edit",
    "FormulationIR",
    "IRFormatError",
    "IndexSet",
    "LinearConstraint",
    "LinearTerm",
    "ObjectiveTerm",
    "ParamRef",
    "Parameter",
    "PatchRejected",
    "RhsTerm",
    "TermFlag",
    "ValidationError",
    "ValidationReport",
    "Variable",
    "apply_patch",
    "audit_decision_variables",
    "canonicalize",
    "find_cost_data_antipatterns",
    "find_missing_cost_parameters",
    "patch_from_json",
    "patch_to_json",
    "structurally_equal",
    "structure_key",
    "validate",
]
