"""Distributed planning coordination with formulation verification and repair.

A vendor agent built from a declarative formulation coordinates a shared
purchase-order plan with a trusted counterparty through consensus ADMM. The
trajectory, together with static inspection of the formulation, yields an
evidence report; a rule policy turns the report into Accept, CodeFix or
Reformulate and drives a bounded repair loop.
"""

from .agents import Counterparty, CounterpartyParams, IRAgent
from .coordinator import CoordinationConfig, CoordinationTrajectory, coord_run
from .core import Dims, DimsMismatch, PlanTensor
from .diagnosis import RepairPipeline, diagnose, local_validate, run_pipeline
from .evidence import EvidenceExtractor, EvidenceReport, extract_evidence
from .faults import FaultSpec, fault_matrix, inject
from .formulation import FormulationIR
from .metrics import evaluate, objective_metrics, social_metrics
from .oracles import ExternalOracle, GroundTruthOracle, NoopOracle, make_oracle
from .qpsolver import solve_qp
from .scenarios import ScenarioSpec, load_scenario, load_shipped

__version__ = "0.1.0"

__all__ = [
    "CoordinationConfig",
    "CoordinationTrajectory",
    "Counterparty",
    "CounterpartyParams",
    "Dims",
    "DimsMismatch",
    "EvidenceExtractor",
    "EvidenceReport",
    "ExternalOracle",
    "FaultSpec",
    "FormulationIR",
    "GroundTruthOracle",
    "IRAgent",
    "NoopOracle",
    "PlanTensor",
    "RepairPipeline",
    "ScenarioSpec",
    "coord_run",
    "diagnose",
    "evaluate",
    "extract_evidence",
    "fault_matrix",
    "inject",
    "load_scenario",
    "load_shipped",
    "local_validate",
    "make_oracle",
    "objective_metrics",
    "run_pipeline",
    "social_metrics",
    "solve_qp",
]
