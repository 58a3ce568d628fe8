"""Consensus ADMM across agents sharing one public plan.

Each iteration asks every agent for a proposal given ``(z, lam_m, rho)``,
averages proposals into the new consensus ``z``, moves every dual toward
agreement, measures primal and dual residuals and rescales ``rho`` when one
residual dominates the other by a factor of ten.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .agents import AgentResponse, ObjDecomp, SolveFailed
from .core import Dims, DimsMismatch, PlanTensor, elementwise

VERIFICATION = "verification"
EVALUATION = "evaluation"
MODE_CAPS = {VERIFICATION: 300, EVALUATION: 2000}

CONVERGED = "converged"
ITERATION_CAP = "iteration_cap"
AGENT_FAILURE = "agent_failure"


@dataclass(frozen=True)
class CoordinationConfig:
    mode: str = VERIFICATION
    max_iter: int | None = None
    primal_tol: float = 1e-4
    dual_tol: float = 1e-4
    rho_init: PlanTensor | None = None
    lam_init: PlanTensor | None = None
    z_init: PlanTensor | None = None
    adapt: bool = True

    def __post_init__(self):
        if self.mode not in MODE_CAPS:
            raise ValueError(f"mode must be one of {sorted(MODE_CAPS)}")
        if self.primal_tol <= 0 or self.dual_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @property
    def cap(self) -> int:
        return self.max_iter if self.max_iter is not None else MODE_CAPS[self.mode]

    def initial(self, dims: Dims) -> tuple[PlanTensor, PlanTensor, PlanTensor]:
        z = self.z_init or PlanTensor.zeros(dims)
        lam = self.lam_init or PlanTensor.zeros(dims)
        rho = self.rho_init or PlanTensor.full(dims, 1.0)
        for t in (z, lam, rho):
            if t.dims != dims:
                raise DimsMismatch("initial tensors disagree with agent dims")
        return z, lam, rho

    def to_json(self) -> dict:
        enc = lambda t: None if t is None else t.to_json()  # noqa: E731
        return {
            "mode": self.mode,
            "max_iter": self.cap,
            "primal_tol": self.primal_tol,
            "dual_tol": self.dual_tol,
            "rho_init": enc(self.rho_init),
            "lam_init": enc(self.lam_init),
            "z_init": enc(self.z_init),
            "adapt": self.adapt,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CoordinationConfig":
        dec = lambda v: None if v is None else PlanTensor.from_json(v)  # noqa: E731
        return cls(
            d["mode"], d["max_iter"], d["primal_tol"], d["dual_tol"], dec(d["rho_init"]), dec(d["lam_init"]), dec(d["z_init"]), d["adapt"]
        )


@dataclass(frozen=True)
class IterationRecord:
    """State after iteration ``k``; ``rho`` is the penalty used during it."""

    k: int
    proposals: tuple[PlanTensor, ...]
    decomps: tuple[ObjDecomp, ...]
    z: PlanTensor
    lams: tuple[PlanTensor, ...]
    rho: PlanTensor
    r: float
    s: float

    def to_json(self) -> dict:
        return {
            "k": self.k,
            "proposals": [p.to_json() for p in self.proposals],
            "decomps": [None if d is None else d.to_json() for d in self.decomps],
            "z": self.z.to_json(),
            "lams": [x.to_json() for x in self.lams],
            "rho": self.rho.to_json(),
            "r": self.r,
            "s": self.s,
        }

    @classmethod
    def from_json(cls, d: dict) -> "IterationRecord":
        return cls(
            d["k"],
            tuple(PlanTensor.from_json(p) for p in d["proposals"]),
            tuple(None if x is None else ObjDecomp.from_json(x) for x in d["decomps"]),
            PlanTensor.from_json(d["z"]),
            tuple(PlanTensor.from_json(x) for x in d["lams"]),
            PlanTensor.from_json(d["rho"]),
            d["r"],
            d["s"],
        )


@dataclass(frozen=True)
class CoordinationTrajectory:
    config: CoordinationConfig
    records: tuple[IterationRecord, ...]
    reason: str
    agents: tuple[str, ...] = ()
    z0: PlanTensor | None = None
    failure: str | None = field(default=None, compare=False)

    @property
    def converged(self) -> bool:
        return self.reason == CONVERGED

    @property
    def final(self) -> IterationRecord | None:
        return self.records[-1] if self.records else None

    def z_before(self, idx: int) -> PlanTensor:
        """Consensus that record ``idx`` started from."""
        return self.z0 if idx == 0 else self.records[idx - 1].z

    def to_jsonl(self) -> str:
        head = {
            "type": "config",
            "config": self.config.to_json(),
            "agents": list(self.agents),
            "reason": self.reason,
            "z0": None if self.z0 is None else self.z0.to_json(),
            "failure": self.failure,
        }
        lines = [json.dumps(head)]
        lines.extend(json.dumps(r.to_json()) for r in self.records)
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text: str) -> "CoordinationTrajectory":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise ValueError("empty trajectory")
        head = json.loads(lines[0])
        if head.get("type") != "config":
            raise ValueError("first trajectory line must be the config header")
        recs = tuple(IterationRecord.from_json(json.loads(ln)) for ln in lines[1:])
        z0 = None if head["z0"] is None else PlanTensor.from_json(head["z0"])
        return cls(CoordinationConfig.from_json(head["config"]), recs, head["reason"], tuple(head["agents"]), z0, head.get("failure"))


def z_update(proposals: Sequence[PlanTensor]) -> PlanTensor:
    if not proposals:
        raise ValueError("need at least one proposal")
    dims = proposals[0].dims
    for p in proposals:
        if p.dims != dims:
            raise DimsMismatch("proposals disagree on dims")
    acc = np.zeros(dims.size)
    for p in proposals:
        acc = acc + p.values
    return PlanTensor(dims, acc / len(proposals))


def lambda_update(lam: PlanTensor, rho: PlanTensor, z_new: PlanTensor, proposal: PlanTensor) -> PlanTensor:
    return lam + rho * (z_new - proposal)


def residuals(proposals: Sequence[PlanTensor], z_new: PlanTensor, z_old: PlanTensor, rho: PlanTensor) -> tuple[float, float]:
    r2 = 0.0
    for p in proposals:
        d = elementwise("sub", p, z_new).values
        r2 += float(d @ d)
    step = (rho * (z_new - z_old)).values
    s = math.sqrt(len(proposals)) * float(np.linalg.norm(step))
    return math.sqrt(r2), s


def adapt_rho(rho: PlanTensor, r: float, s: float) -> PlanTensor:
    if r > 10 * s:
        return rho.scale(2.0)
    if s > 10 * r:
        return rho.scale(0.5)
    return rho


def coord_run(agents: Sequence, config: CoordinationConfig = CoordinationConfig(), workers: int = 1) -> CoordinationTrajectory:
    """Run consensus until both residuals fall below tolerance or the cap."""
    if not agents:
        raise ValueError("need at least one agent")
    dims = agents[0].dims
    for a in agents:
        if a.dims != dims:
            raise DimsMismatch(f"agent {a.name!r} has dims {a.dims.to_list()}, expected {dims.to_list()}")
    z, lam0, rho = config.initial(dims)
    z0 = z
    lams = [lam0 for _ in agents]
    warm: list[AgentResponse | None] = [None] * len(agents)
    records: list[IterationRecord] = []
    names = tuple(a.name for a in agents)
    pool = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None

    def finish(reason, failure=None):
        if pool is not None:
            pool.shutdown()
        return CoordinationTrajectory(config, tuple(records), reason, names, z0, failure)

    for k in range(1, config.cap + 1):
        try:
            if pool is None:
                resp = [a.solve(z, lams[m], rho, warm=warm[m]) for m, a in enumerate(agents)]
            else:
                futs = [pool.submit(a.solve, z, lams[m], rho, warm=warm[m]) for m, a in enumerate(agents)]
                resp = [f.result() for f in futs]
            for a, x in zip(agents, resp):
                if x.proposal.dims != dims:
                    raise DimsMismatch(f"agent {a.name!r} proposed dims {x.proposal.dims.to_list()}, expected {dims.to_list()}")
        except (SolveFailed, DimsMismatch, ValueError) as exc:
            return finish(AGENT_FAILURE, f"{type(exc).__name__}: {exc}")
        warm = resp
        props = [r.proposal for r in resp]
        z_new = z_update(props)
        lams = [lambda_update(lams[m], rho, z_new, props[m]) for m in range(len(agents))]
        r, s = residuals(props, z_new, z, rho)
        records.append(IterationRecord(k, tuple(props), tuple(x.decomp for x in resp), z_new, tuple(lams), rho, r, s))
        z = z_new
        if r < config.primal_tol and s < config.dual_tol:
            return finish(CONVERGED)
        if config.adapt:
            rho = adapt_rho(rho, r, s)
    return finish(ITERATION_CAP)
