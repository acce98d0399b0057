"""Best-bound branch and bound over binary variables.

Open nodes are taken from the heap in fixed-size batches ordered by
(bound, node id). Their LP relaxations may be evaluated on a thread pool,
but results are committed strictly in node-id order, so the search tree,
node count and incumbent sequence do not depend on the number of workers.
"""

from __future__ import annotations

import collections
import heapq
import itertools
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .problem import MilpProblem, MilpSolution
from .simplex import DualSimplex, LpNumericalError

WORKERS_ENV = "VIS_WORKERS"


def default_workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _gap(inc, bound):
    if not math.isfinite(inc):
        return math.inf
    return max(0.0, inc - bound) / max(1.0, abs(inc))


def solve_milp(
    p: MilpProblem,
    gap_tol: float = 1e-9,
    time_limit: float = math.inf,
    node_limit: int = 200_000,
    workers: int | None = None,
    batch: int = 8,
    int_tol: float = 1e-6,
    start=None,
) -> MilpSolution:
    """Solve ``p`` to within ``gap_tol`` relative gap.

    ``start`` optionally maps binary variable names (or indices) to 0/1, or
    is a list of such maps; each is completed by an LP over the continuous
    variables and the best feasible one becomes the first incumbent.

    Status is ``optimal`` when the gap closes, ``infeasible`` or
    ``unbounded`` from the relaxation, ``time_limit`` on timeout and
    ``gap_limit`` when ``node_limit`` stops the search with an open gap.
    """
    t0 = time.perf_counter()
    c, A, sense, rhs, lb0, ub0, integer = p.to_arrays()
    lp = DualSimplex(c, A, sense, rhs, lb0, ub0)
    ints = np.flatnonzero(integer)
    workers = workers or default_workers()
    const = p.obj_const

    counter = itertools.count()
    heap = [(-math.inf, next(counter), lb0.copy(), ub0.copy(), None)]
    inc_obj, inc_x, inc_duals = math.inf, None, None
    history = []
    nodes = 0
    status = None
    starts = [] if start is None else (list(start) if isinstance(start, (list, tuple)) else [start])
    for st in starts if ints.size else []:
        fixed = np.round(x0_ints(p, st, ints))
        root = (-math.inf, -1, lb0, ub0, None)
        res = _polish(lp, root, _scatter(ints, fixed, p.n_vars), ints, None)
        if res is not None and res.objective + const < inc_obj:
            inc_obj, inc_x, inc_duals = res.objective + const, res.x, res.duals
            history.append((0, inc_obj))

    # parents whose basis inverse is kept for warm-starting their children
    kept = collections.deque()
    keep_max = 64

    def solve_node(node, cutoff):
        _, _, lb, ub, basis = node
        try:
            return lp.solve(lb, ub, basis=basis, cutoff=cutoff)
        except LpNumericalError:
            if basis is None:
                raise
            # a warm basis went numerically bad; the slack basis is always regular
            return lp.solve(lb, ub, cutoff=cutoff)

    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        while heap:
            bound = heap[0][0]
            if _gap(inc_obj, bound) <= gap_tol:
                break
            if time.perf_counter() - t0 > time_limit:
                status = "time_limit"
                break
            if nodes >= node_limit:
                status = "gap_limit"
                break
            cutoff = inc_obj - gap_tol * max(1.0, abs(inc_obj)) if math.isfinite(inc_obj) else math.inf
            chunk = []
            while heap and len(chunk) < batch:
                node = heapq.heappop(heap)
                if node[0] >= cutoff:
                    heap.clear()
                    break
                chunk.append(node)
            if not chunk:
                break
            # equal-cost nodes still reach the incumbent tie rule
            lp_cut = (inc_obj + gap_tol * max(1.0, abs(inc_obj)) if math.isfinite(inc_obj) else math.inf) - const
            if pool is None:
                results = [solve_node(nd, lp_cut) for nd in chunk]
            else:
                results = list(pool.map(lambda nd: solve_node(nd, lp_cut), chunk))
            for node, res in sorted(zip(chunk, results), key=lambda z: z[0][1]):
                nodes += 1
                if res.status == "unbounded":
                    if nodes == 1:
                        return MilpSolution("unbounded", None, -math.inf, -math.inf, math.inf, nodes,
                                            time.perf_counter() - t0)
                    continue
                if res.status != "optimal":
                    continue
                obj = res.objective + const
                tie = gap_tol * max(1.0, abs(inc_obj)) if math.isfinite(inc_obj) else 0.0
                if obj > inc_obj + tie:
                    continue
                x = res.x
                frac = np.abs(x[ints] - np.round(x[ints]))
                if ints.size == 0 or frac.max() <= int_tol:
                    polished = _polish(lp, node, x, ints, res.basis)
                    if polished is not None:
                        pobj = polished.objective + const
                        if pobj < inc_obj - tie or (
                            abs(pobj - inc_obj) <= tie and _lex_greater(polished.x[ints], inc_x[ints])
                        ):
                            inc_obj, inc_x, inc_duals = pobj, polished.x, polished.duals
                            history.append((nodes, inc_obj))
                        continue
                    if frac.max() == 0.0:
                        continue
                if obj >= inc_obj - tie:
                    continue
                # most fractional binary, lowest index on ties
                k = int(np.argmax(np.round(frac, 12)))
                j = ints[k]
                _, _, lb, ub, _ = node
                down_ub = ub.copy()
                down_ub[j] = 0.0
                up_lb = lb.copy()
                up_lb[j] = 1.0
                kept.append(res.basis)
                if len(kept) > keep_max:
                    kept.popleft().inv = None
                heapq.heappush(heap, (obj, next(counter), lb, down_ub, res.basis))
                heapq.heappush(heap, (obj, next(counter), up_lb, ub, res.basis))
    finally:
        if pool is not None:
            pool.shutdown()

    open_bound = heap[0][0] if heap else math.inf
    best_bound = min(inc_obj, open_bound)
    wall = time.perf_counter() - t0
    if inc_x is None:
        st = status or "infeasible"
        return MilpSolution(st, None, math.inf, best_bound, math.inf, nodes, wall)
    gap = _gap(inc_obj, best_bound)
    if status is None or gap <= gap_tol:
        status = "optimal"
    x = inc_x.copy()
    x[ints] = np.round(x[ints])
    return MilpSolution(status, x, inc_obj, best_bound, gap, nodes, wall, inc_duals, history)


def x0_ints(p: MilpProblem, start, ints) -> np.ndarray:
    """Binary values from a start given as dict (name or index keys) or full vector."""
    if isinstance(start, dict):
        vals = np.zeros(ints.size)
        pos = {j: k for k, j in enumerate(ints)}
        for key, v in start.items():
            j = p.index[key] if isinstance(key, str) else int(key)
            if j not in pos:
                raise ValueError(f"start value for non-binary variable {p.var_names[j]!r}")
            vals[pos[j]] = v
        return vals
    x = np.asarray(start, float)
    if x.shape != (p.n_vars,):
        raise ValueError("start vector has the wrong length")
    return x[ints]


def _scatter(ints, vals, n):
    x = np.zeros(n)
    x[ints] = vals
    return x


def _lex_greater(a, b) -> bool:
    """Tie rule between equal-cost incumbents: first differing binary set to 1 wins."""
    diff = np.flatnonzero(np.round(a) != np.round(b))
    return diff.size > 0 and a[diff[0]] > b[diff[0]]


def _polish(lp, node, x, ints, basis):
    """Fix binaries at their rounded values and re-solve the continuous part."""
    if ints.size == 0:
        from .simplex import LpSolution
        return LpSolution("optimal", x, float(lp.c[: lp.n] @ x), None, None, basis, 0)
    _, _, lb, ub, _ = node
    lb, ub = lb.copy(), ub.copy()
    r = np.round(x[ints])
    lb[ints] = r
    ub[ints] = r
    res = lp.solve(lb, ub, basis=basis)
    if res.status != "optimal":
        return None
    res.x[ints] = r
    return res


def enumerate_binaries(p: MilpProblem, max_binaries: int = 16) -> MilpSolution:
    """Exhaustive reference solve: one LP per binary assignment."""
    t0 = time.perf_counter()
    c, A, sense, rhs, lb0, ub0, integer = p.to_arrays()
    ints = np.flatnonzero(integer)
    if ints.size > max_binaries:
        raise ValueError(f"{ints.size} binaries exceed enumeration limit {max_binaries}")
    lp = DualSimplex(c, A, sense, rhs, lb0, ub0)
    best, best_x = math.inf, None
    count = 0
    for bits in itertools.product((0.0, 1.0), repeat=ints.size):
        lb, ub = lb0.copy(), ub0.copy()
        b = np.array(bits)
        if np.any(b < lb0[ints]) or np.any(b > ub0[ints]):
            continue
        lb[ints] = b
        ub[ints] = b
        res = lp.solve(lb, ub)
        count += 1
        if res.status == "unbounded":
            return MilpSolution("unbounded", None, -math.inf, -math.inf, math.inf, count,
                                time.perf_counter() - t0)
        if res.status == "optimal" and res.objective + p.obj_const < best:
            best, best_x = res.objective + p.obj_const, res.x
    wall = time.perf_counter() - t0
    if best_x is None:
        return MilpSolution("infeasible", None, math.inf, math.inf, math.inf, count, wall)
    return MilpSolution("optimal", best_x, best, best, 0.0, count, wall)
