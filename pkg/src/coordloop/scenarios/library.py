"""The shipped worked scenarios and their labeled buggy candidates."""

from __future__ import annotations

import numpy as np

from ..agents import CounterpartyParams
from ..formulation import FormulationIR
from ..formulation import build as b
from .spec import Expectations, FieldMeta, ScenarioDims, ScenarioSpec

DEFAULTS_NOTE = (
    "counterparty holding/backlog/terminal/safety-stock values and demand are declared defaults, "
    "not part of the scenario description"
)

AGG = {"role": "order_aggregation", "over": ["item", "node", "period"]}


def _field(name, shape, role, data) -> FieldMeta:
    return FieldMeta(name, tuple(shape), role, tuple(float(x) for x in np.asarray(data, dtype=float).reshape(-1)))


def _params(fields, sets_for) -> tuple:
    return tuple(b.param(f.name, sets_for[f.name], f.data) for f in fields)


def _cp(dims: ScenarioDims, demand: float) -> tuple[CounterpartyParams, float]:
    cp = CounterpartyParams(demand=demand)
    return cp, float(demand) * dims.A * dims.J * dims.T


# --- transport to two nodes under outbound capacity -------------------------------

EXAMPLE1_TEXT = (
    "A vendor operates a single warehouse and ships 2 ASINs to 2 Retail inbound nodes over 3 weeks. "
    "The warehouse has a maximum outbound shipping capacity of 150 units per ASIN per week. "
    "Transportation costs vary by destination: to node 1, $2 per unit; to node 2, $3 per unit. "
    "The vendor wants to minimize total transportation cost while respecting the warehouse outbound capacity."
)


def example1() -> ScenarioSpec:
    dims = ScenarioDims(2, 2, 3)
    fields = (
        _field("transport_cost", ["J"], "cost", [2.0, 3.0]),
        _field("warehouse_capacity", [], "capacity", [150.0]),
    )
    ir = FormulationIR(
        sets=(b.iset("i", 2, "item"), b.iset("j", 2, "node"), b.iset("t", 3, "period")),
        parameters=_params(fields, {"transport_cost": "j", "warehouse_capacity": ""}),
        variables=(
            b.var("po", "i,j,t", public=True, roles=("purchase_order",)),
            b.var("ship", "i,j,t", roles=("shipment",)),
        ),
        constraints=(
            b.cons("order_aggregation", "i,j,t", "==", [b.lin("po", "i,j,t"), b.lin("ship", "i,j,t", -1.0)], roles=("order_aggregation",)),
            b.cons(
                "outbound_capacity",
                "i,t",
                "<=",
                [b.lin("ship", "i,j,t", sum="j")],
                [b.rhs(b.par("warehouse_capacity"))],
                roles=("warehouse_capacity",),
            ),
        ),
        objective=(b.linear("transport", "i,j,t", "ship", "i,j,t", b.par("transport_cost", "j")),),
    )
    cp, total = _cp(dims, 20.0)
    exp = Expectations(
        True,
        total,
        ("shipment",),
        (AGG, {"role": "warehouse_capacity", "over": ["item", "period"]}),
    )
    return ScenarioSpec(
        "example1",
        ("QP", "order_aggregation", "warehouse_capacity", "transport_cost"),
        dims,
        EXAMPLE1_TEXT,
        fields,
        ir,
        cp,
        exp,
        (DEFAULTS_NOTE,),
    )


# --- fixed inflow with shared production lines ----------------------------------

EXAMPLE2_TEXT = (
    "Our operation is straightforward, but the capacity situation is a bit nuanced. We have two warehouses, "
    "three products, two Retail docks, and three weeks. Making products A, B, and C costs $0.15, $0.25, and "
    "$0.20 per unit, respectively. Shipping costs $0.10 per unit on every lane. Holding inventory costs $0.20 "
    "per unit per week. Each warehouse starts with 40 units of every product and receives 25 units of each "
    "product each week. The catch is that products A and B share a production line: together, they cannot "
    "exceed 100 units per warehouse per week. Product C has its own line with capacity 80 units per warehouse "
    "per week. In addition, each warehouse can ship at most 150 units per week in total across all products "
    "and destinations. Keep costs down."
)

_EX2_SETS = (
    b.iset("a", 3, "item"),
    b.iset("w", 2, "warehouse"),
    b.iset("j", 2, "node"),
    b.iset("t", 3, "period"),
)


def _ex2_fields():
    return (
        _field("production_cost", ["A"], "cost", [0.15, 0.25, 0.20]),
        _field("transport_cost_per_unit", [], "cost", [0.10]),
        _field("holding_cost", [], "cost", [0.20]),
        _field("initial_inventory", ["A", "W"], "inventory", np.full(6, 40.0)),
        _field("procurement", ["A", "W", "T"], "inflow", np.full(18, 25.0)),
        _field("shared_line_capacity", [], "capacity", [100.0]),
        _field("dedicated_line_capacity", [], "capacity", [80.0]),
        _field("outbound_capacity", [], "capacity", [150.0]),
    )


_EX2_SHAPES = {
    "production_cost": "a",
    "transport_cost_per_unit": "",
    "holding_cost": "",
    "initial_inventory": "a,w",
    "procurement": "a,w,t",
    "shared_line_capacity": "",
    "dedicated_line_capacity": "",
    "outbound_capacity": "",
}


def _carried(T: int):
    """Holding is charged on inventory carried into a following week."""
    return b.where(t=list(range(T - 1)))


def _balance(extra_source=None):
    terms = [b.lin("inv", "a,w,t"), b.lin("inv", "a,w,t-1", -1.0), b.lin("ship", "a,w,j,t", sum="j")]
    if extra_source:
        terms.append(b.lin(extra_source, "a,w,t", -1.0))
    return b.cons(
        "inventory_balance",
        "a,w,t",
        "==",
        terms,
        [b.rhs(b.par("procurement", "a,w,t")), b.rhs(b.par("initial_inventory", "a,w"), where=b.where(t=[0]))],
        roles=("inventory_balance",),
    )


def _lines(var: str, index: str, sum_: str):
    return (
        b.cons(
            "shared_line",
            "w,t",
            "<=",
            [b.lin(var, index, sum=sum_, where=b.where(a=[0, 1]))],
            [b.rhs(b.par("shared_line_capacity"))],
            roles=("production_capacity",),
        ),
        b.cons(
            "dedicated_line",
            "w,t",
            "<=",
            [b.lin(var, index, sum=sum_, where=b.where(a=[2]))],
            [b.rhs(b.par("dedicated_line_capacity"))],
            roles=("production_capacity",),
        ),
    )


def _ex2_common_constraints():
    return (
        b.cons(
            "order_aggregation",
            "a,j,t",
            "==",
            [b.lin("po", "a,j,t"), b.lin("ship", "a,w,j,t", -1.0, sum="w")],
            roles=("order_aggregation",),
        ),
        b.cons(
            "outbound",
            "w,t",
            "<=",
            [b.lin("ship", "a,w,j,t", sum="a,j")],
            [b.rhs(b.par("outbound_capacity"))],
            roles=("outbound_capacity",),
        ),
    )


def example2() -> ScenarioSpec:
    dims = ScenarioDims(3, 2, 3, W=2)
    fields = _ex2_fields()
    ir = FormulationIR(
        sets=_EX2_SETS,
        parameters=_params(fields, _EX2_SHAPES),
        variables=(
            b.var("po", "a,j,t", public=True, roles=("purchase_order",)),
            b.var("ship", "a,w,j,t", roles=("shipment",)),
            b.var("inv", "a,w,t", roles=("inventory",)),
        ),
        constraints=_ex2_common_constraints() + (_balance(),) + _lines("ship", "a,w,j,t", "a,j"),
        objective=(
            b.linear("production", "a,w,j,t", "ship", "a,w,j,t", b.par("production_cost", "a")),
            b.linear("transport", "a,w,j,t", "ship", "a,w,j,t", b.par("transport_cost_per_unit")),
            b.linear("holding", "a,w,t", "inv", "a,w,t", b.par("holding_cost"), where=_carried(3)),
        ),
    )
    cp, total = _cp(dims, 15.0)
    exp = Expectations(
        True,
        total,
        ("shipment", "inventory"),
        (
            AGG,
            {"role": "inventory_balance", "over": ["item", "period", "warehouse"]},
            {"role": "production_capacity", "over": ["period", "warehouse"]},
            {"role": "outbound_capacity", "over": ["period", "warehouse"]},
        ),
    )
    return ScenarioSpec(
        "example2",
        ("QP", "order_aggregation", "inventory_balance", "shared_capacity", "ambiguous_nl"),
        dims,
        EXAMPLE2_TEXT,
        fields,
        ir,
        cp,
        exp,
        (DEFAULTS_NOTE, "line capacities bound fulfilled flow; holding applies to inventory carried into the next week"),
    )


def example2_spurious_production() -> FormulationIR:
    """Adds a free production decision next to the fixed inflow."""
    ref = example2().reference
    return ref.with_(
        variables=ref.variables + (b.var("prod", "a,w,t", roles=("production",)),),
        constraints=_ex2_common_constraints() + (_balance("prod"),) + _lines("prod", "a,w,t", "a"),
        objective=(
            b.linear("production", "a,w,t", "prod", "a,w,t", b.par("production_cost", "a")),
            b.linear("transport", "a,w,j,t", "ship", "a,w,j,t", b.par("transport_cost_per_unit")),
            b.linear("holding", "a,w,t", "inv", "a,w,t", b.par("holding_cost"), where=_carried(3)),
        ),
    )


# --- congestion-priced lanes ------------------------------------------------------

EXAMPLE3_TEXT = (
    "We run a couple of warehouses and move two product lines to Retail through two receiving docks over "
    "three weeks. Our stuff costs about $0.30 per unit to make. We keep track of what's in the warehouse---at "
    "the start of the planning window we've got 50 of everything everywhere. Each warehouse gets 30 units of "
    "each product per week from our suppliers. Storage runs us $0.40 per unit sitting around each week. "
    "Shipping is $1.50 per unit base, but when a lane gets busy the cost goes up---there's a congestion "
    "factor of 0.02 per unit squared on top of the base rate."
)


def example3() -> ScenarioSpec:
    dims = ScenarioDims(2, 2, 3, W=2)
    fields = (
        _field("production_cost", [], "cost", [0.30]),
        _field("initial_inventory", ["A", "W"], "inventory", np.full(4, 50.0)),
        _field("procurement", ["A", "W", "T"], "inflow", np.full(12, 30.0)),
        _field("holding_cost", [], "cost", [0.40]),
        _field("base_transport_cost", [], "cost", [1.50]),
        _field("congestion_factor", [], "cost", [0.02]),
    )
    shapes = {
        "production_cost": "",
        "initial_inventory": "a,w",
        "procurement": "a,w,t",
        "holding_cost": "",
        "base_transport_cost": "",
        "congestion_factor": "",
    }
    ir = FormulationIR(
        sets=(b.iset("a", 2, "item"), b.iset("w", 2, "warehouse"), b.iset("j", 2, "node"), b.iset("t", 3, "period")),
        parameters=_params(fields, shapes),
        variables=(
            b.var("po", "a,j,t", public=True, roles=("purchase_order",)),
            b.var("ship", "a,w,j,t", roles=("shipment",)),
            b.var("inv", "a,w,t", roles=("inventory",)),
        ),
        constraints=(
            b.cons(
                "order_aggregation",
                "a,j,t",
                "==",
                [b.lin("po", "a,j,t"), b.lin("ship", "a,w,j,t", -1.0, sum="w")],
                roles=("order_aggregation",),
            ),
            _balance(),
        ),
        objective=(
            b.linear("production", "a,w,j,t", "ship", "a,w,j,t", b.par("production_cost")),
            b.linear("base_transport", "a,w,j,t", "ship", "a,w,j,t", b.par("base_transport_cost")),
            b.square("congestion", "a,w,j,t", "ship", "a,w,j,t", b.par("congestion_factor")),
            b.linear("holding", "a,w,t", "inv", "a,w,t", b.par("holding_cost"), where=_carried(3)),
        ),
    )
    cp, total = _cp(dims, 20.0)
    exp = Expectations(
        True,
        total,
        ("shipment", "inventory"),
        (AGG, {"role": "inventory_balance", "over": ["item", "period", "warehouse"]}),
    )
    return ScenarioSpec(
        "example3",
        ("QP", "order_aggregation", "inventory_balance", "congestion_cost", "ambiguous_nl"),
        dims,
        EXAMPLE3_TEXT,
        fields,
        ir,
        cp,
        exp,
        (DEFAULTS_NOTE, "holding applies to inventory carried into the next week"),
    )


def example3_surcharge() -> FormulationIR:
    """Congestion read as a fixed surcharge: congestion_factor x base_transport_cost."""
    ref = example3().reference
    terms = tuple(t for t in ref.objective if t.name != "congestion")
    surcharge = b.const("congestion", "a,w,j,t", b.par("congestion_factor"), b.par("base_transport_cost"))
    return ref.with_(objective=terms + (surcharge,))


BUILDERS = {"example1": example1, "example2": example2, "example3": example3}

CANDIDATES = {
    "example2_spurious_production": ("example2", example2_spurious_production, "constraint_scope", (8,)),
    "example3_surcharge": ("example3", example3_surcharge, "cost_on_data", (6,)),
}
