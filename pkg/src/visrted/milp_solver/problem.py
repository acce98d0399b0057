"""Container for mixed-integer linear problems (minimisation)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SENSES = ("<=", ">=", "==")


@dataclass
class MilpSolution:
    status: str  # optimal | infeasible | gap_limit | time_limit | node_limit | unbounded
    x: np.ndarray | None
    objective: float
    best_bound: float
    gap: float
    nodes: int
    wall_time: float
    duals: np.ndarray | None = None
    incumbents: list = field(default_factory=list)

    def value(self, p: "MilpProblem", name: str) -> float:
        return float(self.x[p.index[name]])


class MilpProblem:
    """Variables with bounds, a linear objective and sparse constraint rows.

    Rows are stored as (indices, coefficients, sense, rhs); ``to_arrays``
    returns the dense form consumed by the simplex.
    """

    def __init__(self, name: str = "problem", metadata: dict | None = None):
        self.name = name
        self.metadata = dict(metadata or {})
        self.var_names: list[str] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.integer: list[bool] = []
        self.obj: list[float] = []
        self.obj_const = 0.0
        self.index: dict[str, int] = {}
        self.rows: list[tuple[np.ndarray, np.ndarray, str, float]] = []
        self.row_names: list[str] = []
        self.row_index: dict[str, int] = {}

    @property
    def n_vars(self) -> int:
        return len(self.var_names)

    @property
    def n_rows(self) -> int:
        return len(self.rows)

    @property
    def n_binaries(self) -> int:
        return sum(self.integer)

    def add_var(self, name, lb=0.0, ub=math.inf, obj=0.0, integer=False) -> int:
        if name in self.index:
            raise ValueError(f"duplicate variable name {name!r}")
        lb, ub, obj = float(lb), float(ub), float(obj)
        if integer:
            if not (math.isfinite(lb) and math.isfinite(ub)):
                raise ValueError(f"integer variable {name!r} needs finite bounds")
            if lb < 0 or ub > 1:
                raise ValueError(f"integer variable {name!r} must be binary")
        if lb > ub or math.isnan(lb) or math.isnan(ub) or not math.isfinite(obj):
            raise ValueError(f"bad bounds/cost for {name!r}: [{lb}, {ub}], c={obj}")
        k = len(self.var_names)
        self.var_names.append(name)
        self.lb.append(lb)
        self.ub.append(ub)
        self.obj.append(obj)
        self.integer.append(bool(integer))
        self.index[name] = k
        return k

    def add_constraint(self, terms, sense: str, rhs: float, name: str | None = None) -> int:
        """``terms`` is a mapping or iterable of (var index or name, coefficient)."""
        if sense not in SENSES:
            raise ValueError(f"unknown sense {sense!r}")
        items = terms.items() if isinstance(terms, dict) else terms
        acc: dict[int, float] = {}
        for v, a in items:
            j = self.index[v] if isinstance(v, str) else int(v)
            if not 0 <= j < self.n_vars:
                raise IndexError(f"variable index {j} out of range")
            acc[j] = acc.get(j, 0.0) + float(a)
        idx = np.array(sorted(acc), dtype=np.int64)
        val = np.array([acc[j] for j in idx], dtype=float)
        if not np.all(np.isfinite(val)) or not math.isfinite(rhs):
            raise ValueError(f"non-finite coefficient in row {name!r}")
        k = len(self.rows)
        name = name or f"r{k}"
        if name in self.row_index:
            raise ValueError(f"duplicate row name {name!r}")
        self.rows.append((idx, val, sense, float(rhs)))
        self.row_names.append(name)
        self.row_index[name] = k
        return k

    def set_bounds(self, name_or_idx, lb=None, ub=None):
        j = self.index[name_or_idx] if isinstance(name_or_idx, str) else name_or_idx
        if lb is not None:
            self.lb[j] = float(lb)
        if ub is not None:
            self.ub[j] = float(ub)

    def copy(self) -> "MilpProblem":
        q = MilpProblem(self.name, self.metadata)
        q.var_names = list(self.var_names)
        q.lb, q.ub = list(self.lb), list(self.ub)
        q.integer, q.obj = list(self.integer), list(self.obj)
        q.obj_const = self.obj_const
        q.index = dict(self.index)
        q.rows = list(self.rows)
        q.row_names = list(self.row_names)
        q.row_index = dict(self.row_index)
        return q

    def to_arrays(self):
        """Dense ``(c, A, sense, rhs, lb, ub, integer)``."""
        A = np.zeros((self.n_rows, self.n_vars))
        for i, (idx, val, _, _) in enumerate(self.rows):
            A[i, idx] = val
        sense = np.array([r[2] for r in self.rows], dtype=object)
        rhs = np.array([r[3] for r in self.rows], dtype=float)
        return (
            np.array(self.obj, dtype=float),
            A,
            sense,
            rhs,
            np.array(self.lb, dtype=float),
            np.array(self.ub, dtype=float),
            np.array(self.integer, dtype=bool),
        )

    def objective_value(self, x) -> float:
        return float(np.dot(self.obj, x) + self.obj_const)

    def residuals(self, x) -> dict:
        """Maximum bound, row and integrality violations of ``x``."""
        x = np.asarray(x, dtype=float)
        lb, ub = np.array(self.lb), np.array(self.ub)
        bound = float(np.max(np.concatenate([[0.0], lb - x, x - ub])))
        row = 0.0
        worst = None
        for i, (idx, val, sense, rhs) in enumerate(self.rows):
            ax = float(val @ x[idx])
            if sense == "<=":
                v = ax - rhs
            elif sense == ">=":
                v = rhs - ax
            else:
                v = abs(ax - rhs)
            if v > row:
                row, worst = v, self.row_names[i]
        ints = np.array(self.integer)
        integ = float(np.max(np.abs(x[ints] - np.round(x[ints])), initial=0.0))
        return {"bound": bound, "row": row, "worst_row": worst, "integrality": integ}
