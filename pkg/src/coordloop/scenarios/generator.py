"""Seeded scenarios assembled from primitive model families.

Coefficient ranges (uniform unless noted):

=================  ==========================
transport cost      0.5 .. 3.0 per unit, per node
production cost     0.1 .. 0.5 per unit, per item
holding cost        0.1 .. 0.5 per unit-week
congestion factor   0.01 .. 0.05 per unit squared
initial inventory   integer 20 .. 60
weekly inflow       integer 15 .. 35
capacities          1.5 .. 3 x mean weekly demand in scope
counterparty demand integer 10 .. 25 per (item, node, week)
=================  ==========================
"""

from __future__ import annotations

import numpy as np

from ..agents import CounterpartyParams
from ..formulation import FormulationIR
from ..formulation import build as b
from .spec import Expectations, FieldMeta, ScenarioDims, ScenarioSpec

TEMPLATES = ("transport", "inventory", "shared_capacity", "congestion")
_AGG = {"role": "order_aggregation", "over": ["item", "node", "period"]}
_BAL = {"role": "inventory_balance", "over": ["item", "warehouse", "period"]}


def _f(name, shape, role, data) -> FieldMeta:
    return FieldMeta(name, tuple(shape), role, tuple(round(float(x), 4) for x in np.asarray(data, dtype=float).reshape(-1)))


def _coerce(dims) -> ScenarioDims:
    if isinstance(dims, ScenarioDims):
        d = dims
    else:
        d = ScenarioDims(*dims)
    for v in (d.A, d.J, d.T, d.W or 1):
        if not 1 <= v <= 5:
            raise ValueError("generator dims must lie in 1..5")
    return d


def generate_scenario(template: str, dims, seed: int) -> ScenarioSpec:
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; choose from {TEMPLATES}")
    d = _coerce(dims)
    rng = np.random.default_rng([seed, TEMPLATES.index(template)])
    A, J, T = d.A, d.J, d.T
    demand = rng.integers(10, 26, size=A * J * T).astype(float)
    cp = CounterpartyParams(demand=tuple(demand))
    pub = b.var("po", "i,j,t", public=True, roles=("purchase_order",))
    sets = [b.iset("i", A, "item"), b.iset("j", J, "node"), b.iset("t", T, "period")]

    if template == "transport":
        W = 1
        fields = [
            _f("transport_cost", ["J"], "cost", rng.uniform(0.5, 3.0, J)),
            _f("warehouse_capacity", [], "capacity", [round(float(rng.uniform(1.5, 3.0)) * demand.mean() * J)]),
        ]
        shapes = {"transport_cost": "j", "warehouse_capacity": ""}
        variables = (pub, b.var("ship", "i,j,t", roles=("shipment",)))
        constraints = (
            b.cons("order_aggregation", "i,j,t", "==", [b.lin("po", "i,j,t"), b.lin("ship", "i,j,t", -1.0)], roles=("order_aggregation",)),
            b.cons(
                "outbound_capacity",
                "i,t",
                "<=",
                [b.lin("ship", "i,j,t", sum="j")],
                [b.rhs(b.par("warehouse_capacity"))],
                roles=("warehouse_capacity",),
            ),
        )
        objective = (b.linear("transport", "i,j,t", "ship", "i,j,t", b.par("transport_cost", "j")),)
        roles = ("shipment",)
        croles = (_AGG, {"role": "warehouse_capacity", "over": ["item", "period"]})
        d = ScenarioDims(A, J, T)
        text = f"Ship {A} items from one warehouse to {J} nodes over {T} weeks; per-node transport cost; outbound capacity per item per week."
    else:
        W = d.W or 2
        d = ScenarioDims(A, J, T, W)
        sets.append(b.iset("w", W, "warehouse"))
        fields = [
            _f("production_cost", ["A"], "cost", rng.uniform(0.1, 0.5, A)),
            _f("transport_cost", ["J"], "cost", rng.uniform(0.5, 3.0, J)),
            _f("holding_cost", [], "cost", [rng.uniform(0.1, 0.5)]),
            _f("initial_inventory", ["A", "W"], "inventory", rng.integers(20, 61, A * W)),
            _f("procurement", ["A", "W", "T"], "inflow", rng.integers(15, 36, A * W * T)),
        ]
        shapes = {
            "production_cost": "i",
            "transport_cost": "j",
            "holding_cost": "",
            "initial_inventory": "i,w",
            "procurement": "i,w,t",
        }
        variables = (pub, b.var("ship", "i,w,j,t", roles=("shipment",)), b.var("inv", "i,w,t", roles=("inventory",)))
        constraints = [
            b.cons(
                "order_aggregation",
                "i,j,t",
                "==",
                [b.lin("po", "i,j,t"), b.lin("ship", "i,w,j,t", -1.0, sum="w")],
                roles=("order_aggregation",),
            ),
            b.cons(
                "inventory_balance",
                "i,w,t",
                "==",
                [b.lin("inv", "i,w,t"), b.lin("inv", "i,w,t-1", -1.0), b.lin("ship", "i,w,j,t", sum="j")],
                [b.rhs(b.par("procurement", "i,w,t")), b.rhs(b.par("initial_inventory", "i,w"), where=b.where(t=[0]))],
                roles=("inventory_balance",),
            ),
        ]
        carried = b.where(t=list(range(T - 1))) if T > 1 else b.where(t=[])
        objective = [
            b.linear("production", "i,w,j,t", "ship", "i,w,j,t", b.par("production_cost", "i")),
            b.linear("transport", "i,w,j,t", "ship", "i,w,j,t", b.par("transport_cost", "j")),
            b.linear("holding", "i,w,t", "inv", "i,w,t", b.par("holding_cost"), where=carried),
        ]
        roles = ("shipment", "inventory")
        croles = [_AGG, _BAL]
        text = f"{A} items stocked at {W} warehouses with fixed weekly inflow, shipped to {J} nodes over {T} weeks."
        if template == "shared_capacity":
            cap = round(float(rng.uniform(1.5, 3.0)) * demand.mean() * A * J / W, 1)
            fields.append(_f("outbound_capacity", [], "capacity", [cap]))
            shapes["outbound_capacity"] = ""
            constraints.append(
                b.cons(
                    "outbound",
                    "w,t",
                    "<=",
                    [b.lin("ship", "i,w,j,t", sum="i,j")],
                    [b.rhs(b.par("outbound_capacity"))],
                    roles=("outbound_capacity",),
                )
            )
            croles.append({"role": "outbound_capacity", "over": ["warehouse", "period"]})
            text += " All items share an outbound capacity per warehouse per week."
        if template == "congestion":
            fields.append(_f("congestion_factor", [], "cost", [rng.uniform(0.01, 0.05)]))
            shapes["congestion_factor"] = ""
            objective.append(b.square("congestion", "i,w,j,t", "ship", "i,w,j,t", b.par("congestion_factor")))
            text += " Each lane carries a quadratic congestion cost on top of its base rate."
        constraints = tuple(constraints)
        objective = tuple(objective)
        croles = tuple(croles)

    fields = tuple(fields)
    ir = FormulationIR(
        sets=tuple(sets),
        parameters=tuple(b.param(f.name, shapes[f.name], f.data) for f in fields),
        variables=variables,
        constraints=constraints,
        objective=objective,
    )
    exp = Expectations(True, float(demand.sum()), roles, croles)
    return ScenarioSpec(
        f"{template}_{A}x{J}x{T}" + (f"x{W}" if template != "transport" else "") + f"_s{seed}",
        ("QP", "generated", template),
        d,
        text,
        fields,
        ir,
        cp,
        exp,
        ("generated; counterparty demand drawn from the documented range",),
    )
