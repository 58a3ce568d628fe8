"""Dense convex QP engine for local subproblems and joint problems.

Problems are held in the form::

    minimize    0.5 x'Px + q'x + offset
    subject to  l <= A x <= u,   lb <= x <= ub

and solved by an operator-splitting iteration (over-relaxed ADMM on the
stacked constraint rows, with Ruiz equilibration and adaptive step size).
Whenever the iterate is close, the active set it suggests is solved exactly
from the KKT equations ("polishing"); a polished point is returned only if it
passes a full KKT test at the requested tolerance.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import linprog

from .core import Dims, DimsMismatch, PlanTensor
from .formulation.expand import Layout, ParamTable, ground_constraints, ground_objective
from .formulation.ir import FormulationIR

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
ITERATION_LIMIT = "iteration_limit"

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50_000
EARLY_FEASIBILITY_CHECK = 500


@dataclass(frozen=True)
class CompiledQP:
    P: np.ndarray
    q: np.ndarray
    A: np.ndarray
    l: np.ndarray
    u: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    offset: float = 0.0
    public_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    columns: tuple = ()

    @property
    def n(self) -> int:
        return self.q.size

    def objective(self, x: np.ndarray) -> float:
        return float(0.5 * x @ self.P @ x + self.q @ x + self.offset)

    def with_prox(self, z: PlanTensor, lam: PlanTensor, rho: PlanTensor) -> "CompiledQP":
        """Add ``-<lam, x> + 0.5 ||sqrt(rho) * (x - z)||^2`` on the public columns."""
        pi = self.public_idx
        if pi.size != z.dims.size:
            raise DimsMismatch(f"public block has {pi.size} entries, tensors have {z.dims.size}")
        r = rho.values
        if np.any(r <= 0):
            raise ValueError("penalties must be strictly positive")
        P = self.P.copy()
        q = self.q.copy()
        P[pi, pi] += r
        q[pi] += -lam.values - r * z.values
        offset = self.offset + 0.5 * float(np.sum(r * z.values * z.values))
        return replace(self, P=P, q=q, offset=offset)

    def fix(self, cols: np.ndarray, values: np.ndarray, tol: float = 1e-9):
        """Substitute fixed values for ``cols``; returns ``(qp, ok)``.

        ``ok`` is False when a fixed value violates its own bounds.
        """
        cols = np.asarray(cols, dtype=int)
        v = np.asarray(values, dtype=float)
        slack = tol * (1.0 + np.abs(v))
        ok = bool(np.all(v >= self.lb[cols] - slack) and np.all(v <= self.ub[cols] + slack))
        keep = np.setdiff1d(np.arange(self.n), cols)
        shift = self.A[:, cols] @ v
        q = self.q[keep] + self.P[np.ix_(keep, cols)] @ v
        offset = self.offset + 0.5 * float(v @ self.P[np.ix_(cols, cols)] @ v) + float(self.q[cols] @ v)
        qp = CompiledQP(
            P=self.P[np.ix_(keep, keep)],
            q=q,
            A=self.A[:, keep],
            l=self.l - shift,
            u=self.u - shift,
            lb=self.lb[keep],
            ub=self.ub[keep],
            offset=offset,
            public_idx=np.zeros(0, dtype=int),
            columns=tuple(self.columns[k] for k in keep) if self.columns else (),
        )
        return qp, ok


@dataclass(frozen=True)
class QPSolution:
    x: np.ndarray
    objective: float
    status: str
    kkt_residual: float
    y: np.ndarray | None = None
    iterations: int = 0

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


class CompileError(ValueError):
    pass


# --- compilation ----------------------------------------------------------


@functools.lru_cache(maxsize=512)
def compile_base(ir: FormulationIR) -> CompiledQP:
    """Private objective and feasible set of ``ir`` with no coordination terms."""
    from .formulation.expand import CompileError as _CE

    try:
        layout = Layout.of(ir)
        table = ParamTable(ir, layout.sizes)
        rows = ground_constraints(ir, layout, table)
        obj = ground_objective(ir, layout, table)
    except _CE as exc:
        raise CompileError(str(exc)) from exc
    lb, ub = layout.bounds()
    pubs = [v for v in ir.variables if v.is_public]
    pidx = layout.columns_of(pubs[0].name) if len(pubs) == 1 else np.zeros(0, dtype=int)
    cols = []
    for v in ir.variables:
        dims = [layout.sizes[s] for s in v.shape]
        for idx in np.ndindex(*dims) if dims else [()]:
            cols.append((v.name, tuple(int(i) for i in idx)))
    return CompiledQP(obj.P, obj.q, rows.A, rows.lo, rows.hi, lb, ub, obj.offset, pidx, tuple(cols))


def compile_subproblem(ir: FormulationIR, z: PlanTensor, lam: PlanTensor, rho: PlanTensor) -> CompiledQP:
    return compile_base(ir).with_prox(z, lam, rho)


def zero_objective(qp: CompiledQP) -> CompiledQP:
    return replace(qp, P=np.zeros_like(qp.P), q=np.zeros_like(qp.q), offset=0.0)


def build_joint(parts: list[CompiledQP]) -> CompiledQP:
    """Stack several parties over one shared public block (columns ``0..N-1``)."""
    npub = parts[0].public_idx.size
    for p in parts:
        if p.public_idx.size != npub:
            raise DimsMismatch("parties disagree on public dimension")
    priv = [np.setdiff1d(np.arange(p.n), p.public_idx) for p in parts]
    n = npub + sum(len(c) for c in priv)
    P = np.zeros((n, n))
    q = np.zeros(n)
    lb = np.full(n, -np.inf)
    ub = np.full(n, np.inf)
    lb[:npub] = -np.inf
    A_blocks, l_parts, u_parts = [], [], []
    offset = 0.0
    start = npub
    cols = [("x", (k,)) for k in range(npub)]
    for m, (p, pc) in enumerate(zip(parts, priv)):
        mapping = np.empty(p.n, dtype=int)
        mapping[p.public_idx] = np.arange(npub)
        mapping[pc] = np.arange(start, start + len(pc))
        start += len(pc)
        P[np.ix_(mapping, mapping)] += p.P
        q[mapping] += p.q
        offset += p.offset
        lb[mapping] = np.maximum(lb[mapping], p.lb)
        ub[mapping] = np.minimum(ub[mapping], p.ub)
        A = np.zeros((p.A.shape[0], n))
        A[:, mapping] = p.A
        A_blocks.append(A)
        l_parts.append(p.l)
        u_parts.append(p.u)
        if p.columns:
            cols.extend((f"{m}:{p.columns[k][0]}", p.columns[k][1]) for k in pc)
    return CompiledQP(
        P,
        q,
        np.vstack(A_blocks) if A_blocks else np.zeros((0, n)),
        np.concatenate(l_parts) if l_parts else np.zeros(0),
        np.concatenate(u_parts) if u_parts else np.zeros(0),
        lb,
        ub,
        offset,
        np.arange(npub),
        tuple(cols),
    )


# --- KKT measurement --------------------------------------------------------


def _stack(qp: CompiledQP):
    """Constraint rows with variable bounds appended as identity rows."""
    n = qp.n
    rows = [qp.A]
    ls, us = [qp.l], [qp.u]
    bcols = np.where(np.isfinite(qp.lb) | np.isfinite(qp.ub))[0]
    if bcols.size:
        E = np.zeros((bcols.size, n))
        E[np.arange(bcols.size), bcols] = 1.0
        rows.append(E)
        ls.append(qp.lb[bcols])
        us.append(qp.ub[bcols])
    return np.vstack(rows), np.concatenate(ls), np.concatenate(us)


def kkt_residual(P, q, A, l, u, x, y) -> float:
    """Scaled max of primal infeasibility, stationarity and complementarity."""
    Ax = A @ x
    fin_l = np.abs(l[np.isfinite(l)])
    fin_u = np.abs(u[np.isfinite(u)])
    pscale = 1.0 + max(
        np.abs(Ax).max(initial=0.0), fin_l.max(initial=0.0), fin_u.max(initial=0.0), np.abs(x).max(initial=0.0)
    )
    with np.errstate(invalid="ignore"):
        viol = np.maximum(np.maximum(l - Ax, Ax - u), 0.0)
    prim = np.nan_to_num(viol, nan=0.0).max(initial=0.0) / pscale
    Px = P @ x
    Aty = A.T @ y
    grad = Px + q + Aty
    dscale = 1.0 + max(np.abs(Px).max(initial=0.0), np.abs(q).max(initial=0.0), np.abs(Aty).max(initial=0.0))
    dual = np.abs(grad).max(initial=0.0) / dscale
    yscale = 1.0 + np.abs(y).max(initial=0.0)
    with np.errstate(invalid="ignore"):
        slack = np.where(y > 0, u - Ax, Ax - l)
    slack = np.where(np.isfinite(slack), np.abs(slack) / pscale, np.inf)
    comp = np.minimum(np.abs(y) / yscale, slack)
    comp = comp[np.abs(y) > 0].max(initial=0.0)
    return float(max(prim, dual, comp))


# --- solver -----------------------------------------------------------------


def _ruiz(P, q, A, iters=15):
    n, m = P.shape[0], A.shape[0]
    D = np.ones(n)
    E = np.ones(m)
    Ps, As, qs = P.copy(), A.copy(), q.copy()
    for _ in range(iters):
        col = np.maximum(np.abs(Ps).max(axis=0, initial=0.0), np.abs(As).max(axis=0, initial=0.0))
        col = np.where(col < 1e-4, 1.0, col)
        dD = 1.0 / np.sqrt(col)
        row = np.abs(As).max(axis=1, initial=0.0)
        row = np.where(row < 1e-4, 1.0, row)
        dE = 1.0 / np.sqrt(row)
        Ps = dD[:, None] * Ps * dD[None, :]
        As = dE[:, None] * As * dD[None, :]
        qs = dD * qs
        D *= dD
        E *= dE
    pn = np.abs(Ps).max(axis=0, initial=0.0).mean() if n else 1.0
    qn = np.abs(qs).max(initial=0.0)
    c = 1.0 / max(pn, qn, 1e-4)
    c = min(c, 1e4)
    return D, E, c


def _polish(P, q, A, l, u, x, z, y, tol):
    n, m = P.shape[0], A.shape[0]
    eq = np.isclose(l, u, rtol=0.0, atol=0.0) | (np.abs(u - l) <= 1e-12 * (1.0 + np.abs(l)))
    scale = 1.0 + np.abs(y).max(initial=0.0)
    cands = []
    lo1 = (z - l < -y) | eq
    hi1 = (u - z < y) & ~lo1
    cands.append((lo1, hi1))
    thr = 1e-9 * scale
    Ax = A @ x
    sl = 1e-6 * (1.0 + np.abs(Ax))
    lo2 = ((y < -thr) & (Ax - l <= sl)) | eq
    hi2 = (y > thr) & (u - Ax <= sl) & ~lo2
    cands.append((lo2, hi2))
    best = None
    seen = set()
    for lo, hi in cands:
        key = (lo.tobytes(), hi.tobytes())
        if key in seen:
            continue
        seen.add(key)
        act = np.where(lo | hi)[0]
        b = np.where(lo[act], l[act], u[act])
        if not np.all(np.isfinite(b)):
            continue
        Aa = A[act]
        k = act.size
        delta = 1e-10 * max(1.0, np.abs(P).max(initial=0.0), np.abs(Aa).max(initial=0.0))
        K = np.zeros((n + k, n + k))
        K[:n, :n] = P
        K[:n, n:] = Aa.T
        K[n:, :n] = Aa
        Kreg = K.copy()
        Kreg[np.arange(n), np.arange(n)] += delta
        Kreg[n + np.arange(k), n + np.arange(k)] -= delta
        rhs = np.concatenate([-q, b])
        try:
            lu = sla.lu_factor(Kreg, check_finite=False)
        except (ValueError, sla.LinAlgError):
            continue
        sol = sla.lu_solve(lu, rhs, check_finite=False)
        for _ in range(25):
            res = rhs - K @ sol
            if np.abs(res).max(initial=0.0) <= 1e-14 * (1.0 + np.abs(rhs).max(initial=0.0)):
                break
            sol = sol + sla.lu_solve(lu, res, check_finite=False)
        if not np.all(np.isfinite(sol)):
            continue
        xp = sol[:n]
        yp = np.zeros(m)
        yp[act] = sol[n:]
        r = kkt_residual(P, q, A, l, u, xp, yp)
        if best is None or r < best[2]:
            best = (xp, yp, r)
        if r <= tol:
            return best
    return best


def linear_feasible(A, l, u, lb, ub) -> bool:
    """Exact feasibility of ``l <= Ax <= u, lb <= x <= ub`` via an LP solve."""
    n = A.shape[1]
    if n == 0:
        return bool(np.all(l <= 1e-9 * (1.0 + np.abs(l))) and np.all(u >= -1e-9 * (1.0 + np.abs(u))))
    eq = np.isfinite(l) & np.isfinite(u) & (l == u)
    up = np.isfinite(u) & ~eq
    lo = np.isfinite(l) & ~eq
    A_ub = np.vstack([A[up], -A[lo]])
    b_ub = np.concatenate([u[up], -l[lo]])
    bounds = [(None if not np.isfinite(a) else a, None if not np.isfinite(b) else b) for a, b in zip(lb, ub)]
    res = linprog(
        np.zeros(n),
        A_ub=A_ub if A_ub.size else None,
        b_ub=b_ub if A_ub.size else None,
        A_eq=A[eq] if eq.any() else None,
        b_eq=l[eq] if eq.any() else None,
        bounds=bounds,
        method="highs",
    )
    return res.status != 2


def _cert_infeasible(A, l, u, dy, eps=1e-6) -> bool:
    nrm = np.abs(dy).max(initial=0.0)
    if nrm <= 1e-12:
        return False
    if np.abs(A.T @ dy).max(initial=0.0) > eps * nrm:
        return False
    pos = np.maximum(dy, 0.0)
    neg = np.minimum(dy, 0.0)
    if np.any((pos > eps * nrm) & ~np.isfinite(u)) or np.any((neg < -eps * nrm) & ~np.isfinite(l)):
        return False
    val = float(np.sum(np.where(pos > 0, np.nan_to_num(u, posinf=0.0) * pos, 0.0)))
    val += float(np.sum(np.where(neg < 0, np.nan_to_num(l, neginf=0.0) * neg, 0.0)))
    return val < -eps * nrm


def solve_qp(
    qp: CompiledQP,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm: QPSolution | None = None,
) -> QPSolution:
    """Solve ``qp`` to a KKT residual of at most ``tol`` (relative scaling).

    Returns status ``infeasible`` when a primal infeasibility certificate is
    found or the primal residual stalls while the duals grow, and
    ``iteration_limit`` when ``max_iter`` passes without an optimal point.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = qp.n
    A, l, u = _stack(qp)
    P, q = qp.P, qp.q

    # constant rows carry no variables; check them and drop
    nz = np.abs(A).max(axis=1, initial=0.0) > 0
    if not np.all(nz):
        lz, uz = l[~nz], u[~nz]
        ctol = tol * (1.0 + np.maximum(np.abs(np.nan_to_num(lz, neginf=0.0)), np.abs(np.nan_to_num(uz, posinf=0.0))))
        if np.any(lz > ctol) or np.any(uz < -ctol):
            return QPSolution(np.zeros(n), math.inf, INFEASIBLE, math.inf)
        A, l, u = A[nz], l[nz], u[nz]
    m = A.shape[0]

    if n == 0:
        return QPSolution(np.zeros(0), qp.offset, OPTIMAL, 0.0, np.zeros(m))

    def finish(x, y, status, r, it):
        return QPSolution(x, qp.objective(x), status, r, y, it)

    if warm is not None and warm.x.size == n and warm.y is not None and warm.y.size == m:
        x0, y0 = warm.x.copy(), warm.y.copy()
        pol = _polish(P, q, A, l, u, x0, A @ x0, y0, tol)
        if pol is not None and pol[2] <= tol:
            return finish(pol[0], pol[1], OPTIMAL, pol[2], 0)
    else:
        x0, y0 = np.zeros(n), np.zeros(m)

    D, E, c = _ruiz(P, q, A)
    Ps = c * (D[:, None] * P * D[None, :])
    qsc = c * D * q
    As = E[:, None] * A * D[None, :]
    with np.errstate(invalid="ignore", over="ignore"):
        ls = np.where(np.isfinite(l), l * E, -np.inf)
        us = np.where(np.isfinite(u), u * E, np.inf)
    eqrow = np.abs(us - ls) <= 1e-12 * (1.0 + np.abs(np.nan_to_num(ls, neginf=0.0)))
    loose = ~np.isfinite(ls) & ~np.isfinite(us)

    sigma = 1e-6
    alpha = 1.6
    rho_bar = 0.1

    def rho_vec(rb):
        r = np.full(m, rb)
        r[eqrow] = 1e3 * rb
        r[loose] = 1e-6
        return r

    def factor(r):
        M = Ps + sigma * np.eye(n) + As.T @ (r[:, None] * As)
        return sla.cho_factor(M, check_finite=False)

    rho = rho_vec(rho_bar)
    fac = factor(rho)
    xs = x0 / D
    zs = As @ xs
    ys = c * y0 / E
    y_prev = ys.copy()

    check_every = 25
    stall = 0
    best = None
    it = 0
    lp_checked = False
    while it < max_iter:
        it += 1
        y_prev = ys
        rhs = sigma * xs - qsc + As.T @ (rho * zs - ys)
        xt = sla.cho_solve(fac, rhs, check_finite=False)
        zt = As @ xt
        xs = alpha * xt + (1 - alpha) * xs
        zr = alpha * zt + (1 - alpha) * zs
        zn = np.clip(zr + ys / rho, ls, us)
        ys = ys + rho * (zr - zn)
        zs = zn
        if it % check_every and it != 1:
            continue
        # unscaled iterate
        x = D * xs
        y = E * ys / c
        Ax = A @ x
        zu = zs / E
        prim = np.abs(Ax - zu).max(initial=0.0)
        pnorm = max(np.abs(Ax).max(initial=0.0), np.abs(zu).max(initial=0.0))
        dres = np.abs(P @ x + q + A.T @ y).max(initial=0.0)
        dnorm = max(np.abs(P @ x).max(initial=0.0), np.abs(A.T @ y).max(initial=0.0), np.abs(q).max(initial=0.0))
        prel = prim / (1.0 + pnorm)
        drel = dres / (1.0 + dnorm)

        dy = E * (ys - y_prev) / c
        if _cert_infeasible(A, l, u, dy):
            return finish(x, y, INFEASIBLE, math.inf, it)

        if prel < 1e-3 and drel < 1e-3:
            pol = _polish(P, q, A, l, u, x, zu, y, tol)
            if pol is not None:
                if best is None or pol[2] < best[2]:
                    best = pol
                if pol[2] <= tol:
                    return finish(pol[0], pol[1], OPTIMAL, pol[2], it)
            r_admm = kkt_residual(P, q, A, l, u, x, y)
            if r_admm <= tol:
                return finish(x, y, OPTIMAL, r_admm, it)
            if best is None or r_admm < best[2]:
                best = (x, y, r_admm)

        if prel > 1e-3 and it == EARLY_FEASIBILITY_CHECK and not lp_checked:
            lp_checked = True
            if not linear_feasible(qp.A, qp.l, qp.u, qp.lb, qp.ub):
                return finish(x, y, INFEASIBLE, math.inf, it)
        if prel > 1e-3:
            stall += check_every
            if stall >= 5000 and np.abs(y).max(initial=0.0) > 1e6 * (1.0 + dnorm):
                return finish(x, y, INFEASIBLE, math.inf, it)
        else:
            stall = 0

        # step-size adaptation on scaled residuals
        sp = np.abs(As @ xs - zs).max(initial=0.0) / max(
            np.abs(As @ xs).max(initial=0.0), np.abs(zs).max(initial=0.0), 1e-12
        )
        sd = np.abs(Ps @ xs + qsc + As.T @ ys).max(initial=0.0) / max(
            np.abs(Ps @ xs).max(initial=0.0), np.abs(As.T @ ys).max(initial=0.0), np.abs(qsc).max(initial=0.0), 1e-12
        )
        if sp > 0 and sd > 0:
            new = float(np.clip(rho_bar * math.sqrt(sp / sd), 1e-6, 1e6))
            if new > 5 * rho_bar or new < 0.2 * rho_bar:
                rho_bar = new
                rho = rho_vec(rho_bar)
                fac = factor(rho)

    x = D * xs
    y = E * ys / c
    if best is None:
        best = (x, y, kkt_residual(P, q, A, l, u, x, y))
    return finish(best[0], best[1], ITERATION_LIMIT, best[2], it)


# --- value function ------------------------------------------------------------


def pinned_private(ir: FormulationIR, plan: PlanTensor, tol: float = 1e-9):
    """The private problem at a fixed public plan: ``(qp, bounds_ok)``."""
    base = compile_base(ir)
    if base.public_idx.size != plan.dims.size:
        raise DimsMismatch(f"formulation public block has {base.public_idx.size} entries, plan has {plan.dims.size}")
    return base.fix(base.public_idx, plan.values, tol)


def eval_private(ir: FormulationIR, plan: PlanTensor, tol: float = DEFAULT_TOL) -> float | None:
    """Minimal private cost at ``plan``; ``None`` when no private completion exists."""
    qp, ok = pinned_private(ir, plan)
    if not ok:
        return None
    sol = solve_qp(qp, tol=tol)
    if sol.status == INFEASIBLE:
        return None
    if not sol.optimal:
        raise SolverFailure(f"private evaluation ended with status {sol.status}")
    return sol.objective


class SolverFailure(RuntimeError):
    pass


def project_plan(ir: FormulationIR, plan: PlanTensor, tol: float = DEFAULT_TOL) -> PlanTensor | None:
    """Nearest plan (Euclidean) for which ``ir`` has a feasible completion."""
    base = zero_objective(compile_base(ir))
    ones = PlanTensor.full(plan.dims, 1.0)
    qp = base.with_prox(plan, PlanTensor.zeros(plan.dims), ones)
    sol = solve_qp(qp, tol=tol)
    if not sol.optimal:
        return None
    return PlanTensor(plan.dims, np.maximum(sol.x[base.public_idx], 0.0))


def public_dims(ir: FormulationIR) -> Dims:
    pv = ir.public
    sizes = {s.name: s.size for s in ir.sets}
    return Dims(*[sizes[s] for s in pv.shape])
