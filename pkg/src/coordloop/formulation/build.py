"""Terse constructors for writing formulations in Python."""

from __future__ import annotations

import math

import numpy as np

from .ir import (
    IndexSet,
    LinearConstraint,
    LinearTerm,
    ObjectiveTerm,
    Parameter,
    ParamRef,
    RhsTerm,
    Variable,
)


def idx(spec: str) -> tuple[str, ...]:
    """``"i,j,t-1"`` -> ``("i", "j", "t-1")``."""
    return tuple(s.strip() for s in spec.split(",") if s.strip())


def par(name: str, index: str = "") -> ParamRef:
    return ParamRef(name, idx(index))


def where(**sel) -> tuple:
    return tuple(sorted((k, tuple(int(x) for x in v)) for k, v in sel.items()))


def iset(name: str, size: int, dim: str) -> IndexSet:
    return IndexSet(name, int(size), dim)


def param(name: str, shape: str, values, source: str | None = None) -> Parameter:
    arr = np.asarray(values, dtype=float).reshape(-1)
    return Parameter(name, idx(shape), source if source is not None else name, tuple(float(v) for v in arr))


def var(name: str, shape: str, public: bool = False, lower: float = 0.0, upper: float = math.inf, roles=()) -> Variable:
    return Variable(name, idx(shape), "public" if public else "private", lower, upper, tuple(roles))


def lin(v: str, index: str, *coef, sum: str = "", where=()) -> LinearTerm:
    return LinearTerm(v, idx(index), tuple(coef) or (1.0,), idx(sum), tuple(where))


def rhs(*coef, sum: str = "", where=()) -> RhsTerm:
    return RhsTerm(tuple(coef), idx(sum), tuple(where))


def cons(name: str, over: str, relation: str, terms, rhs_terms=(), roles=()) -> LinearConstraint:
    return LinearConstraint(name, idx(over), tuple(terms), relation, tuple(rhs_terms), tuple(roles))


def linear(name: str, over: str, v: str, index: str, *coef, sign: float = 1.0, where=()) -> ObjectiveTerm:
    return ObjectiveTerm(name, "linear_var", idx(over), tuple(coef) or (1.0,), v, idx(index), None, (), sign, tuple(where))


def square(name: str, over: str, v: str, index: str, *coef, sign: float = 1.0, where=()) -> ObjectiveTerm:
    return ObjectiveTerm(name, "quadratic_var", idx(over), tuple(coef) or (1.0,), v, idx(index), None, (), sign, tuple(where))


def const(name: str, over: str, *coef, sign: float = 1.0, where=()) -> ObjectiveTerm:
    return ObjectiveTerm(name, "const_data", idx(over), tuple(coef) or (1.0,), None, (), None, (), sign, tuple(where))
