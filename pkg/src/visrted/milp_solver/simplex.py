"""Bounded-variable dual revised simplex.

Rows ``A x (<=|>=|==) b`` become ``A x + s = b`` with one logical ``s`` per
row bounded by the row sense. The slack basis is dual feasible once every
nonbasic variable sits at the bound matching the sign of its reduced cost;
where that bound is infinite an artificial box of ``BIG`` is used. A
solution resting on an artificial bound with a nonzero reduced cost is
reported unbounded.

The basis inverse is kept explicitly and refreshed by rank-one updates with
periodic refactorisation. Pricing uses the largest primal infeasibility and
a two-pass Harris ratio test; a stall switches to Bland's rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

BIG = 1e7

BASIC, AT_LB, AT_UB, FREE = 0, 1, 2, 3


class LpNumericalError(RuntimeError):
    pass


@dataclass
class Basis:
    head: np.ndarray  # basic variable per row (indices into structurals + logicals)
    status: np.ndarray  # per variable: BASIC, AT_LB, AT_UB, FREE
    inv: np.ndarray | None = field(default=None, repr=False, compare=False)  # optional cached inverse

    def copy(self) -> "Basis":
        return Basis(self.head.copy(), self.status.copy(), self.inv)


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | cutoff | iteration_limit
    x: np.ndarray | None
    objective: float
    duals: np.ndarray | None
    reduced_costs: np.ndarray | None
    basis: Basis | None
    iterations: int


class DualSimplex:
    def __init__(self, c, A, sense, rhs, lb, ub, tol=1e-9, refactor_every=64):
        A = np.asarray(A, dtype=float)
        m, n = A.shape
        self.m, self.n = m, n
        self.N = n + m
        self.A = np.hstack([A, np.eye(m)])
        self.c = np.concatenate([np.asarray(c, dtype=float), np.zeros(m)])
        self.b = np.asarray(rhs, dtype=float).copy()
        slo = np.zeros(m)
        shi = np.zeros(m)
        for i, s in enumerate(sense):
            if s == "<=":
                shi[i] = math.inf
            elif s == ">=":
                slo[i] = -math.inf
        self.slack_lb, self.slack_ub = slo, shi
        self.lb0 = np.asarray(lb, dtype=float)
        self.ub0 = np.asarray(ub, dtype=float)
        self.tol = tol
        self.piv_tol = 1e-9
        self.refactor_every = refactor_every

    # -- setup -------------------------------------------------------------

    def _bounds(self, lb, ub):
        L = np.concatenate([self.lb0 if lb is None else np.asarray(lb, float), self.slack_lb])
        U = np.concatenate([self.ub0 if ub is None else np.asarray(ub, float), self.slack_ub])
        return L, U

    def _place(self, j, dj, L, U, La, Ua, status):
        """Put nonbasic ``j`` on the bound its reduced cost asks for."""
        lo_f, hi_f = math.isfinite(L[j]), math.isfinite(U[j])
        if lo_f and hi_f:
            if L[j] == U[j]:
                status[j] = AT_LB
            else:
                status[j] = AT_LB if dj >= 0 else AT_UB
        elif lo_f:
            if dj >= 0:
                status[j] = AT_LB
            else:
                Ua[j] = max(L[j], 0.0) + BIG
                status[j] = AT_UB
        elif hi_f:
            if dj <= 0:
                status[j] = AT_UB
            else:
                La[j] = min(U[j], 0.0) - BIG
                status[j] = AT_LB
        else:
            if dj == 0:
                status[j] = FREE
            elif dj > 0:
                La[j] = -BIG
                status[j] = AT_LB
            else:
                Ua[j] = BIG
                status[j] = AT_UB

    def _nonbasic_values(self, status, La, Ua):
        x = np.zeros(self.N)
        lo = status == AT_LB
        hi = status == AT_UB
        x[lo] = La[lo]
        x[hi] = Ua[hi]
        return x

    # -- main --------------------------------------------------------------

    def solve(self, lb=None, ub=None, basis: Basis | None = None, cutoff=math.inf, max_iter=None):
        m, N = self.m, self.N
        A, c = self.A, self.c
        L, U = self._bounds(lb, ub)
        if np.any(L > U + self.tol):
            return LpSolution("infeasible", None, math.inf, None, None, None, 0)
        if m == 0:
            return self._solve_unconstrained(L, U)
        La, Ua = L.copy(), U.copy()
        if basis is None:
            head = np.arange(self.n, N)
            status = np.full(N, AT_LB, dtype=np.int8)
        else:
            head = basis.head.copy()
            status = basis.status.copy()
        status[head] = BASIC
        if basis is not None and basis.inv is not None and basis.inv.shape == (m, m):
            Binv = basis.inv.copy()
        else:
            try:
                Binv = self._invert(head)
            except LpNumericalError:
                self._repair(head, status, L, U)
                Binv = self._invert(head)
        d = c - (c[head] @ Binv) @ A
        nb = np.flatnonzero(status != BASIC)
        for j in nb:
            self._place_warm(j, d[j], L, U, La, Ua, status)
        xN = self._nonbasic_values(status, La, Ua)
        xB = Binv @ (self.b - A @ xN)

        max_iter = max_iter or 50 * (N + m) + 1000
        bland = False
        stall = 0
        last_obj = -math.inf
        since_refactor = 0
        released = 0
        it = 0
        while True:
            x_full = xN.copy()
            x_full[head] = xB
            obj = float(c @ x_full)
            if obj > last_obj + 1e-12 * (1.0 + abs(obj)):
                stall = 0
                last_obj = obj
            else:
                stall += 1
                if stall > 50:
                    bland = True
            if obj > cutoff and not self._artificial_active(status, L, U, La, Ua, d):
                return LpSolution("cutoff", None, obj, None, None, Basis(head, status), it)

            Lb, Ub = La[head], Ua[head]
            below = Lb - xB
            above = xB - Ub
            infeas = np.maximum(below, above)
            scale = 1.0 + np.maximum(np.abs(Lb, where=np.isfinite(Lb), out=np.zeros(m)),
                                     np.abs(Ub, where=np.isfinite(Ub), out=np.zeros(m)))
            cand = infeas > self.tol * scale
            if not cand.any():
                if since_refactor > 0:
                    # accept the updated inverse only if residuals say it is still exact
                    d_true = self._checked_duals(head, status, Binv, xB, xN, L, U)
                    if d_true is None:
                        since_refactor = 0
                        Binv, xB, d, xN = self._refresh(head, status, L, U, La, Ua)
                        continue
                    d = d_true
                if self._artificial_active(status, L, U, La, Ua, d):
                    break
                art = np.flatnonzero((status != BASIC) & ((La != L) | (Ua != U)))
                if art.size == 0 or released > 2:
                    break
                # zero-cost variables parked on an artificial bound: pull them back
                released += 1
                for j in art:
                    La[j], Ua[j] = L[j], U[j]
                    if math.isfinite(L[j]):
                        status[j] = AT_LB
                    elif math.isfinite(U[j]):
                        status[j] = AT_UB
                    else:
                        status[j] = FREE
                since_refactor = 0
                Binv, xB, d, xN = self._refresh(head, status, L, U, La, Ua)
                continue
            if it >= max_iter:
                return LpSolution("iteration_limit", None, obj, None, None, Basis(head, status), it)
            it += 1
            if bland:
                rows = np.flatnonzero(cand)
                r = int(rows[np.argmin(head[rows])])
            else:
                r = int(np.argmax(np.where(cand, infeas, -1.0)))
            p = head[r]
            to_lower = xB[r] < La[p]
            target = La[p] if to_lower else Ua[p]
            alpha = Binv[r] @ A
            q = self._ratio_test(alpha, d, status, L, U, to_lower, bland)
            if q < 0:
                if since_refactor > 0 and not self._row_exact(head, Binv, r, xB, xN, La[p], Ua[p]):
                    # confirm on a fresh factorisation before declaring infeasibility
                    since_refactor = 0
                    Binv, xB, d, xN = self._refresh(head, status, L, U, La, Ua)
                    continue
                return LpSolution("infeasible", None, math.inf, None, None, Basis(head, status), it)
            w = Binv @ A[:, q]
            wr = w[r]
            if abs(wr) < 1e-11:
                if since_refactor == 0:
                    raise LpNumericalError(f"tiny pivot {wr:.3g} on a fresh factorisation")
                since_refactor = 0
                Binv, xB, d, xN = self._refresh(head, status, L, U, La, Ua)
                continue
            theta_d = d[q] / wr
            d -= theta_d * alpha
            d[q] = 0.0
            d[head] = 0.0
            d[p] = -theta_d
            theta_p = (xB[r] - target) / wr
            xq = xN[q] + theta_p if status[q] != FREE else theta_p
            xB -= theta_p * w
            xB[r] = xq
            status[p] = AT_LB if to_lower else AT_UB
            xN[p] = target
            status[q] = BASIC
            xN[q] = 0.0
            La[q], Ua[q] = L[q], U[q]
            head[r] = q
            piv = Binv[r] / wr
            Binv -= np.outer(w, piv)
            Binv[r] = piv
            since_refactor += 1
            if since_refactor >= self.refactor_every:
                since_refactor = 0
                Binv, xB, d, xN = self._refresh(head, status, L, U, La, Ua)

        x_full = xN.copy()
        x_full[head] = xB
        if self._artificial_active(status, L, U, La, Ua, d):
            return LpSolution("unbounded", None, -math.inf, None, None, Basis(head, status), it)
        # one refinement step removes drift left by large early pivots
        x_full[head] += Binv @ (self.b - A @ x_full)
        y = c[head] @ Binv
        x = x_full[: self.n]
        return LpSolution(
            "optimal",
            x,
            float(self.c[: self.n] @ x),
            y,
            d[: self.n].copy(),
            Basis(head.copy(), status.copy(), Binv),
            it,
        )

    # -- helpers -----------------------------------------------------------

    def _place_warm(self, j, dj, L, U, La, Ua, status):
        if status[j] == AT_LB and math.isfinite(L[j]) and (dj >= -self.tol or L[j] == U[j]):
            return
        if status[j] == AT_UB and math.isfinite(U[j]) and (dj <= self.tol or L[j] == U[j]):
            return
        if status[j] == FREE and abs(dj) <= self.tol and not (math.isfinite(L[j]) or math.isfinite(U[j])):
            return
        self._place(j, dj, L, U, La, Ua, status)

    def _row_exact(self, head, Binv, r, xB, xN, lo, hi) -> bool:
        """Whether row ``r`` of the updated inverse still inverts the basis and
        the basic value it implies is still out of bounds."""
        row = Binv[r]
        e = row @ self.A[:, head]
        e[r] -= 1.0
        if float(np.abs(e).max()) > 1e-11 * (1.0 + float(np.abs(row).max())):
            return False
        xn = xN.copy()
        xn[head] = 0.0
        xr = row @ (self.b - self.A @ xn)
        tol = 1e-7 * (1.0 + abs(xr))
        return bool(xr < lo - tol or xr > hi + tol)

    def _checked_duals(self, head, status, Binv, xB, xN, L, U):
        """Reduced costs from ``Binv`` if primal/dual residuals are tiny, else None."""
        A, c = self.A, self.c
        x = xN.copy()
        x[head] = xB
        rp = np.abs(self.b - A @ x).max()
        if rp > 1e-9 * (1.0 + np.abs(self.b).max() + np.abs(x).max()):
            return None
        y = c[head] @ Binv
        rd = np.abs(y @ A[:, head] - c[head]).max() if self.m else 0.0
        if rd > 1e-10 * (1.0 + np.abs(c).max()):
            return None
        d = c - y @ A
        d[head] = 0.0
        tol = self.tol * 10
        movable = L < U
        bad = movable & (((status == AT_LB) & (d < -tol)) |
                         ((status == AT_UB) & (d > tol)) |
                         ((status == FREE) & (np.abs(d) > tol)))
        if np.any(bad):
            return None
        return d

    def _invert(self, head):
        """Basis inverse through the structural block only.

        Basic slacks are unit columns, so with ``R`` the rows whose slack is
        nonbasic the basis reduces to the square block ``K = A[R, S]``.
        """
        m, n = self.m, self.n
        ps = np.flatnonzero(head < n)
        pl = np.flatnonzero(head >= n)
        sl_rows = head[pl] - n
        R = np.setdiff1d(np.arange(m), sl_rows)
        if R.size != ps.size:
            raise LpNumericalError("singular basis (repeated slack)")
        AS = self.A[:, head[ps]]
        K = AS[R]
        try:
            Kinv = np.linalg.inv(K)
        except np.linalg.LinAlgError as exc:
            raise LpNumericalError(f"singular basis (cond={np.linalg.cond(K):.3g})") from exc
        if not np.all(np.isfinite(Kinv)):
            raise LpNumericalError(f"non-finite basis inverse (cond={np.linalg.cond(K):.3g})")
        if ps.size and np.abs(K @ Kinv - np.eye(ps.size)).max() > 1e-7:
            raise LpNumericalError(f"inaccurate basis inverse (cond={np.linalg.cond(K):.3g})")
        Binv = np.zeros((m, m))
        Binv[np.ix_(ps, R)] = Kinv
        Binv[np.ix_(pl, R)] = -AS[sl_rows] @ Kinv
        Binv[pl, sl_rows] = 1.0
        return Binv

    def _repair(self, head, status, L, U):
        """Swap numerically dependent basic columns for slacks, in place."""
        m = self.m
        B = self.A[:, head]
        R = np.linalg.qr(B, mode="r")
        norms = np.linalg.norm(B, axis=0)
        # |R_kk| is the distance of column k from the span of the columns before it
        drop = np.flatnonzero(np.abs(np.diag(R)) <= 1e-9 * np.maximum(norms, 1.0))
        if drop.size == 0:
            raise LpNumericalError("basis repair found no dependent column")
        keep = np.setdiff1d(np.arange(m), drop)
        Q = np.linalg.qr(B[:, keep])[0] if keep.size else np.zeros((m, 0))
        for pos in drop:
            resid = np.eye(m) - Q @ Q.T
            i = int(np.argmax(np.linalg.norm(resid, axis=0)))
            v = resid[:, i] / np.linalg.norm(resid[:, i])
            Q = np.column_stack([Q, v])
            j = head[pos]
            status[j] = AT_LB if math.isfinite(L[j]) else (AT_UB if math.isfinite(U[j]) else FREE)
            head[pos] = self.n + i
            status[self.n + i] = BASIC

    def _refresh(self, head, status, L, U, La, Ua):
        try:
            Binv = self._invert(head)
        except LpNumericalError:
            self._repair(head, status, L, U)
            Binv = self._invert(head)
        d = self.c - (self.c[head] @ Binv) @ self.A
        d[head] = 0.0
        for j in np.flatnonzero(status != BASIC):
            self._place_warm(j, d[j], L, U, La, Ua, status)
        xN = self._nonbasic_values(status, La, Ua)
        xB = Binv @ (self.b - self.A @ xN)
        return Binv, xB, d, xN

    def _ratio_test(self, alpha, d, status, L, U, to_lower, bland):
        pt = self.piv_tol
        movable = (status != BASIC) & (L < U)
        free = status == FREE
        if to_lower:
            elig = movable & (((status == AT_LB) & (alpha < -pt)) | ((status == AT_UB) & (alpha > pt)))
        else:
            elig = movable & (((status == AT_LB) & (alpha > pt)) | ((status == AT_UB) & (alpha < -pt)))
        elig |= movable & free & (np.abs(alpha) > pt)
        idx = np.flatnonzero(elig)
        if idx.size == 0:
            return -1
        a = np.abs(alpha[idx])
        dj = np.abs(d[idx])
        if bland:
            ratio = dj / a
            best = ratio.min()
            return int(idx[np.flatnonzero(ratio <= best)[0]])
        bound = ((dj + self.tol) / a).min()
        ok = np.flatnonzero(dj / a <= bound)
        k = ok[np.argmax(a[ok])]  # argmax returns the lowest index among ties
        return int(idx[k])

    def _artificial_active(self, status, L, U, La, Ua, d):
        lo = (status == AT_LB) & (La != L)
        hi = (status == AT_UB) & (Ua != U)
        act = lo | hi
        return bool(np.any(np.abs(d[act]) > self.tol))

    def _solve_unconstrained(self, L, U):
        c = self.c[: self.n]
        x = np.where(c >= 0, L[: self.n], U[: self.n])
        x = np.where((c == 0) & ~np.isfinite(x), np.clip(0.0, L[: self.n], U[: self.n]), x)
        if not np.all(np.isfinite(x)):
            return LpSolution("unbounded", None, -math.inf, None, None, None, 0)
        return LpSolution("optimal", x, float(c @ x), np.zeros(0), c.copy(), None, 0)


def solve_lp(problem, lb=None, ub=None, basis=None, **kw) -> LpSolution:
    """Solve the continuous relaxation of a :class:`MilpProblem`."""
    c, A, sense, rhs, plb, pub, _ = problem.to_arrays()
    lp = DualSimplex(c, A, sense, rhs, plb, pub)
    sol = lp.solve(lb, ub, basis=basis, **kw)
    if sol.status == "optimal":
        sol.objective += problem.obj_const
    return sol
