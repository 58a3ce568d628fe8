"""Ground a formulation into numeric rows and objective coefficients."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .ir import FormulationIR, ParamRef, parse_index


class CompileError(ValueError):
    """The formulation references something that does not exist."""


def _bindings(sizes: dict[str, int], names: tuple[str, ...], where) -> Iterator[dict[str, int]]:
    allowed = dict(where)
    ranges = []
    for n in names:
        if n not in sizes:
            raise CompileError(f"unknown index set {n!r}")
        r = range(sizes[n])
        if n in allowed:
            r = [v for v in r if v in allowed[n]]
        ranges.append(r)
    for combo in itertools.product(*ranges):
        yield dict(zip(names, combo))


def _resolve(exprs: tuple[str, ...], binding: dict[str, int], sizes: dict[str, int]) -> tuple[int, ...] | None:
    out = []
    for e in exprs:
        name, off = parse_index(e)
        if name not in binding:
            raise CompileError(f"index {name!r} is not bound here")
        v = binding[name] + off
        if v < 0 or v >= sizes[name]:
            return None
        out.append(v)
    return tuple(out)


@dataclass
class Layout:
    """Column layout of all variables; variables are laid out in declaration order."""

    ir: FormulationIR
    sizes: dict[str, int]
    offsets: dict[str, int]
    strides: dict[str, tuple[int, ...]]
    n: int

    @classmethod
    def of(cls, ir: FormulationIR) -> "Layout":
        sizes = {s.name: s.size for s in ir.sets}
        offsets, strides = {}, {}
        n = 0
        for v in ir.variables:
            dims = []
            for s in v.shape:
                if s not in sizes:
                    raise CompileError(f"variable {v.name!r}: unknown set {s!r}")
                dims.append(sizes[s])
            offsets[v.name] = n
            strides[v.name] = _strides(dims)
            n += int(np.prod(dims)) if dims else 1
        return cls(ir, sizes, offsets, strides, n)

    def column(self, var: str, idx: tuple[int, ...]) -> int:
        if var not in self.offsets:
            raise CompileError(f"unknown variable {var!r}")
        st = self.strides[var]
        if len(idx) != len(st):
            raise CompileError(f"variable {var!r} indexed with {len(idx)} indices, expects {len(st)}")
        return self.offsets[var] + sum(a * b for a, b in zip(idx, st))

    def columns_of(self, var: str) -> np.ndarray:
        v = self.ir.variable(var)
        size = int(np.prod([self.sizes[s] for s in v.shape])) if v.shape else 1
        return np.arange(self.offsets[var], self.offsets[var] + size)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        lb = np.empty(self.n)
        ub = np.empty(self.n)
        for v in self.ir.variables:
            cols = self.columns_of(v.name)
            lb[cols] = v.lower
            ub[cols] = v.upper
        return lb, ub


def _strides(dims: list[int]) -> tuple[int, ...]:
    st = []
    acc = 1
    for d in reversed(dims):
        st.append(acc)
        acc *= d
    return tuple(reversed(st))


class ParamTable:
    def __init__(self, ir: FormulationIR, sizes: dict[str, int]):
        self.params = {}
        for p in ir.parameters:
            dims = []
            for s in p.shape:
                if s not in sizes:
                    raise CompileError(f"parameter {p.name!r}: unknown set {s!r}")
                dims.append(sizes[s])
            arr = np.asarray(p.values, dtype=float)
            expect = int(np.prod(dims)) if dims else 1
            if arr.size != expect:
                raise CompileError(f"parameter {p.name!r}: {arr.size} values for shape {p.shape} (needs {expect})")
            self.params[p.name] = arr.reshape(dims) if dims else arr.reshape(())
        self.sizes = sizes

    def coef(self, factors, binding: dict[str, int]) -> float | None:
        val = 1.0
        for f in factors:
            if isinstance(f, ParamRef):
                if f.param not in self.params:
                    raise CompileError(f"unknown parameter {f.param!r}")
                arr = self.params[f.param]
                if len(f.index) != arr.ndim:
                    raise CompileError(f"parameter {f.param!r} indexed with {len(f.index)} indices, expects {arr.ndim}")
                idx = _resolve(f.index, binding, self.sizes)
                if idx is None:
                    return None
                val *= float(arr[idx]) if idx else float(arr)
            else:
                val *= float(f)
        return val


@dataclass
class GroundRows:
    A: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    names: list[tuple[str, tuple[int, ...]]]


def ground_constraints(ir: FormulationIR, layout: Layout, params: ParamTable) -> GroundRows:
    rows, los, his, names = [], [], [], []
    sizes = layout.sizes
    for c in ir.constraints:
        for qb in _bindings(sizes, c.over, ()):
            row = np.zeros(layout.n)
            for term in c.terms:
                for sb in _bindings(sizes, term.sum, ()):
                    b = {**qb, **sb}
                    if not _where_ok(term.where, b):
                        continue
                    idx = _resolve(term.index, b, sizes)
                    if idx is None:
                        continue
                    k = params.coef(term.coef, b)
                    if k is None:
                        continue
                    row[layout.column(term.var, idx)] += k
            rhs = 0.0
            for rt in c.rhs:
                for sb in _bindings(sizes, rt.sum, ()):
                    b = {**qb, **sb}
                    if not _where_ok(rt.where, b):
                        continue
                    k = params.coef(rt.coef, b)
                    if k is not None:
                        rhs += k
            lo = -np.inf if c.relation == "<=" else rhs
            hi = np.inf if c.relation == ">=" else rhs
            rows.append(row)
            los.append(lo)
            his.append(hi)
            names.append((c.name, tuple(qb[n] for n in c.over)))
    A = np.array(rows) if rows else np.zeros((0, layout.n))
    return GroundRows(A, np.array(los, dtype=float), np.array(his, dtype=float), names)


def _where_ok(where, b: dict[str, int]) -> bool:
    for name, allowed in where:
        if name in b and b[name] not in allowed:
            return False
    return True


@dataclass
class GroundObjective:
    P: np.ndarray
    q: np.ndarray
    offset: float


def ground_objective(ir: FormulationIR, layout: Layout, params: ParamTable, only=None) -> GroundObjective:
    """``0.5 x'Px + q'x + offset``; ``only`` restricts to a subset of term names."""
    n = layout.n
    P = np.zeros((n, n))
    q = np.zeros(n)
    offset = 0.0
    sizes = layout.sizes
    for t in ir.objective:
        if only is not None and t.name not in only:
            continue
        for b in _bindings(sizes, t.over, t.where):
            k = params.coef(t.coef, b)
            if k is None:
                continue
            k *= t.sign
            if t.kind == "const_data":
                offset += k
                continue
            idx = _resolve(t.index, b, sizes)
            if idx is None:
                continue
            c1 = layout.column(t.var, idx)
            if t.kind == "linear_var":
                q[c1] += k
                continue
            if t.var2 is None:
                c2 = c1
            else:
                idx2 = _resolve(t.index2 or t.index, b, sizes)
                if idx2 is None:
                    continue
                c2 = layout.column(t.var2, idx2)
            if c1 == c2:
                P[c1, c1] += 2.0 * k
            else:
                P[c1, c2] += k
                P[c2, c1] += k
    return GroundObjective(P, q, offset)


__all__ = ["CompileError", "Layout", "ParamTable", "GroundRows", "GroundObjective", "ground_constraints", "ground_objective"]
