"""Public plans at which formulations are evaluated and compared."""

from __future__ import annotations

import numpy as np

from .core import Dims, PlanTensor
from .formulation import FormulationIR
from .qpsolver import linear_feasible, pinned_private


def is_feasible(ir: FormulationIR, plan: PlanTensor, tol: float = 1e-8) -> bool:
    """Whether the private part of ``ir`` has a completion at ``plan``."""
    qp, ok = pinned_private(ir, plan, tol)
    return ok and linear_feasible(qp.A, qp.l, qp.u, qp.lb, qp.ub)


def max_feasible_scale(ir: FormulationIR, plan: PlanTensor, hi: float = 1.0, iters: int = 30) -> float:
    """Largest ``s`` in ``[0, hi]`` with ``s * plan`` feasible (0 if none)."""
    if is_feasible(ir, plan.scale(hi)):
        return hi
    if not is_feasible(ir, plan.scale(0.0)):
        return 0.0
    lo, up = 0.0, hi
    for _ in range(iters):
        mid = 0.5 * (lo + up)
        if is_feasible(ir, plan.scale(mid)):
            lo = mid
        else:
            up = mid
    return lo


def mean_demand(scenario, dims: Dims) -> float:
    td = scenario.expectations.total_demand
    if td is None or td <= 0:
        return 10.0
    return float(td) / dims.size


def probe_plans(ir: FormulationIR, scenario, seed: int = 0, n_random: int = 2) -> list[tuple[str, PlanTensor]]:
    """Zero, uniform-at-mean-demand, uniform at 80% of the largest feasible
    uniform level, and seeded random plans scaled back into feasibility.

    Plans are generated against ``ir``; callers filter them further as needed.
    """
    dims = scenario.dims.public
    md = mean_demand(scenario, dims)
    ones = PlanTensor.full(dims, 1.0)
    out = [("zero", PlanTensor.zeros(dims)), ("uniform_mean_demand", PlanTensor.full(dims, md))]
    top = max_feasible_scale(ir, ones, hi=4.0 * md)
    if top > 0:
        out.append(("uniform_80pct_max", PlanTensor.full(dims, 0.8 * top)))
    rng = np.random.default_rng([seed, 7919])
    for k in range(n_random):
        p = PlanTensor(dims, rng.uniform(0.0, 2.0 * md, dims.size))
        s = max_feasible_scale(ir, p, hi=1.0)
        if s > 0:
            out.append((f"random_{k}", p.scale(s * (1.0 - 1e-6))))
    return out
