"""Agents answer ``solve(z, lam, rho)`` with a proposal and an objective split.

Each agent minimizes its augmented subproblem::

    f(x) - <lam, x> + 0.5 * || sqrt(rho) * (x - z) ||^2

over its own feasible set and reports the private, price and proximal parts
of the optimal value separately. The private part is recovered from the
solved augmented value rather than re-evaluated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .core import Dims, DimsMismatch, PlanTensor, inner
from .formulation import FormulationIR
from .formulation import build as b
from .qpsolver import CompiledQP, QPSolution, compile_base, public_dims, solve_qp


class SolveFailed(RuntimeError):
    def __init__(self, status: str, message: str = ""):
        super().__init__(message or f"local solve ended with status {status!r}")
        self.status = status


@dataclass(frozen=True)
class ObjDecomp:
    private: float
    price: float
    prox: float

    @property
    def augmented(self) -> float:
        return self.private - self.price + self.prox

    def to_json(self) -> dict:
        return {"private": self.private, "price": self.price, "prox": self.prox}

    @classmethod
    def from_json(cls, d: dict) -> "ObjDecomp":
        return cls(float(d["private"]), float(d["price"]), float(d["prox"]))


@dataclass(frozen=True)
class AgentResponse:
    proposal: PlanTensor
    decomp: ObjDecomp
    status: str = "optimal"
    augmented: float = math.nan
    solution: QPSolution | None = field(default=None, compare=False, repr=False)


def objective_split(x: PlanTensor, z: PlanTensor, lam: PlanTensor, rho: PlanTensor, augmented: float) -> ObjDecomp:
    price = inner(lam, x)
    d = (x - z).values
    prox = 0.5 * float(np.sum(rho.values * d * d))
    return ObjDecomp(augmented + price - prox, price, prox)


class Agent(Protocol):
    name: str
    dims: Dims

    def solve(self, z: PlanTensor, lam: PlanTensor, rho: PlanTensor, warm: AgentResponse | None = None) -> AgentResponse: ...


def _check_inputs(dims: Dims, z: PlanTensor, lam: PlanTensor, rho: PlanTensor) -> None:
    for t in (z, lam, rho):
        if t.dims != dims:
            raise DimsMismatch(f"agent expects dims {dims.to_list()}, got {t.dims.to_list()}")
    if np.any(rho.values <= 0):
        raise ValueError("rho must be strictly positive")


class IRAgent:
    """Agent backed by a compiled formulation."""

    def __init__(self, ir: FormulationIR, name: str = "vendor", tol: float = 1e-8):
        self.ir = ir
        self.name = name
        self.tol = tol
        self.dims = public_dims(ir)
        self._base: CompiledQP = compile_base(ir)

    def subproblem(self, z: PlanTensor, lam: PlanTensor, rho: PlanTensor) -> CompiledQP:
        return self._base.with_prox(z, lam, rho)

    def solve(self, z, lam, rho, warm: AgentResponse | None = None) -> AgentResponse:
        _check_inputs(self.dims, z, lam, rho)
        qp = self.subproblem(z, lam, rho)
        sol = solve_qp(qp, tol=self.tol, warm=warm.solution if warm is not None else None)
        if not sol.optimal:
            raise SolveFailed(sol.status)
        x = PlanTensor(self.dims, np.maximum(sol.x[self._base.public_idx], 0.0))
        return AgentResponse(x, objective_split(x, z, lam, rho, sol.objective), sol.status, sol.objective, sol)

    def __repr__(self) -> str:
        return f"IRAgent(name={self.name!r}, dims={self.dims.to_list()})"


@dataclass(frozen=True)
class CounterpartyParams:
    """Retail inventory agent data; costs are per unit per week."""

    holding_cost: float = 0.4
    backlog_penalty: float = 2.0
    terminal_weight: float = 1.0
    safety_stock: float | tuple = 10.0
    demand: tuple | float = 20.0
    initial_inventory: tuple | float = 0.0

    def __post_init__(self):
        for name in ("holding_cost", "backlog_penalty", "terminal_weight"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if np.any(np.asarray(self.demand, dtype=float) < 0):
            raise ValueError("demand must be nonnegative")

    def arrays(self, dims: Dims) -> dict[str, np.ndarray]:
        A, J, T = dims.shape
        dem = np.full(A * J * T, float(self.demand)) if np.ndim(self.demand) == 0 else np.asarray(self.demand, dtype=float).reshape(-1)
        if dem.size != A * J * T:
            raise DimsMismatch(f"demand has {dem.size} entries, expected {A * J * T}")
        out = {"demand": dem}
        for key in ("safety_stock", "initial_inventory"):
            v = getattr(self, key)
            arr = np.full(A * J, float(v)) if np.ndim(v) == 0 else np.asarray(v, dtype=float).reshape(-1)
            if arr.size != A * J:
                raise DimsMismatch(f"{key} has {arr.size} entries, expected {A * J}")
            out[key] = arr
        return out

    def to_json(self) -> dict:
        def enc(v):
            return float(v) if np.ndim(v) == 0 else [float(x) for x in np.asarray(v).reshape(-1)]

        return {k: enc(getattr(self, k)) for k in ("holding_cost", "backlog_penalty", "terminal_weight", "safety_stock", "demand", "initial_inventory")}

    @classmethod
    def from_json(cls, d: dict) -> "CounterpartyParams":
        def dec(v):
            return float(v) if not isinstance(v, list) else tuple(float(x) for x in v)

        return cls(**{k: dec(v) for k, v in d.items()})


def counterparty_ir(params: CounterpartyParams, dims: Dims) -> FormulationIR:
    """Retail model: orders feed inventory, unmet demand accrues backlog."""
    A, J, T = dims.shape
    arr = params.arrays(dims)
    last = b.where(t=[T - 1])
    return FormulationIR(
        sets=(b.iset("i", A, "item"), b.iset("j", J, "node"), b.iset("t", T, "period")),
        parameters=(
            b.param("demand", "i,j,t", arr["demand"]),
            b.param("initial_inventory", "i,j", arr["initial_inventory"]),
            b.param("holding_cost", "", [params.holding_cost]),
            b.param("backlog_penalty", "", [params.backlog_penalty]),
            b.param("terminal_weight", "", [params.terminal_weight]),
            b.param("safety_stock", "i,j", arr["safety_stock"]),
        ),
        variables=(
            b.var("po", "i,j,t", public=True, roles=("purchase_order",)),
            b.var("inv", "i,j,t", roles=("inventory",)),
            b.var("backlog", "i,j,t", roles=("backlog",)),
        ),
        constraints=(
            b.cons(
                "inventory_balance",
                "i,j,t",
                "==",
                [
                    b.lin("inv", "i,j,t"),
                    b.lin("backlog", "i,j,t", -1.0),
                    b.lin("inv", "i,j,t-1", -1.0),
                    b.lin("backlog", "i,j,t-1"),
                    b.lin("po", "i,j,t", -1.0),
                ],
                [b.rhs(-1.0, b.par("demand", "i,j,t")), b.rhs(b.par("initial_inventory", "i,j"), where=b.where(t=[0]))],
                roles=("inventory_balance",),
            ),
        ),
        objective=(
            b.linear("holding", "i,j,t", "inv", "i,j,t", b.par("holding_cost")),
            b.linear("backlog", "i,j,t", "backlog", "i,j,t", b.par("backlog_penalty")),
            b.square("terminal_quadratic", "i,j,t", "inv", "i,j,t", b.par("terminal_weight"), where=last),
            b.linear(
                "terminal_linear", "i,j,t", "inv", "i,j,t", -2.0, b.par("terminal_weight"), b.par("safety_stock", "i,j"), where=last
            ),
            b.const("terminal_constant", "i,j", b.par("terminal_weight"), b.par("safety_stock", "i,j"), b.par("safety_stock", "i,j")),
        ),
    )


class Counterparty(IRAgent):
    """Fixed hand-coded retail inventory agent."""

    def __init__(self, params: CounterpartyParams, dims: Dims, name: str = "counterparty", tol: float = 1e-8):
        self.params = params
        super().__init__(counterparty_ir(params, dims), name=name, tol=tol)


def counterparty_solve(params: CounterpartyParams, z: PlanTensor, lam: PlanTensor, rho: PlanTensor) -> AgentResponse:
    return Counterparty(params, z.dims).solve(z, lam, rho)


def agent_solve(agent: Agent, z: PlanTensor, lam: PlanTensor, rho: PlanTensor) -> AgentResponse:
    return agent.solve(z, lam, rho)
