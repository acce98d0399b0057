"""Per-interval real-time economic dispatch with virtual inertia scheduling.

Each 5-minute interval is an independent MILP: piecewise-linear generation
cost, DC network limits through shift factors, regulation and inertia
support reserves, a linear RoCoF bound and ReLU-surrogate nadir and peak
power constraints. Methods:

I    IBRs in PQ mode, no frequency constraints
II   fixed IBR (M, D) with frequency constraints
III  as II plus inertia support (peak power) headroom
IV   IBR (M, D) scheduled per interval, all constraints
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import freq_dynamics as fd
from .milp_solver import MilpProblem, default_workers, solve_milp

# ---------------------------------------------------------------------------
# data


@dataclass(frozen=True)
class GenCost:
    a: float  # $/MW^2h
    b: float  # $/MWh
    c: float  # $/h
    reserve_price: float  # $/MWh

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.a, self.b, self.c, self.reserve_price)):
            raise ValueError("cost coefficients must be finite")

    def hourly(self, p):
        return self.a * np.asarray(p) ** 2 + self.b * np.asarray(p) + self.c


@dataclass
class Network:
    buses: list
    lines: list  # (from, to, x p.u., limit MW)
    ref_bus: object
    gsf: np.ndarray | None = None


def compute_gsf(net: Network, ref_bus=None) -> np.ndarray:
    """Line-flow sensitivity to bus injection, withdrawn at the reference bus."""
    ref = net.ref_bus if ref_bus is None else ref_bus
    pos = {b: k for k, b in enumerate(net.buses)}
    nb, nl = len(net.buses), len(net.lines)
    for f, t, x, _ in net.lines:
        if not x > 0:
            raise ValueError(f"line {f}-{t}: reactance must be > 0")
    A = np.zeros((nl, nb))
    for l, (f, t, _, _) in enumerate(net.lines):
        A[l, pos[f]] = 1.0
        A[l, pos[t]] = -1.0
    b = np.array([1.0 / x for _, _, x, _ in net.lines])
    Bbus = A.T @ (b[:, None] * A)
    keep = [k for k in range(nb) if net.buses[k] != ref]
    Bred = Bbus[np.ix_(keep, keep)]
    if np.linalg.matrix_rank(Bred) < len(keep):
        raise ValueError("disconnected or degenerate network")
    X = np.linalg.inv(Bred)
    gsf = np.zeros((nl, nb))
    gsf[:, keep] = (b[:, None] * A[:, keep]) @ X
    gsf[np.abs(gsf) < 1e-10] = 0.0  # round-off from the dense solve
    net.gsf = gsf
    return gsf


def piecewise_cost(cost: GenCost, pmin: float, pmax: float, nseg: int = 8):
    """Secant segments ``(slope, intercept)`` of the hourly cost on a uniform grid."""
    if cost.a < 0:
        raise ValueError("nonconvex cost")
    if not pmin < pmax or nseg < 1:
        raise ValueError("need pmin < pmax and nseg >= 1")
    if cost.a == 0:
        return [(cost.b, cost.c)]
    grid = np.linspace(pmin, pmax, nseg + 1)
    f = cost.hourly(grid)
    segs = []
    for k in range(nseg):
        s = (f[k + 1] - f[k]) / (grid[k + 1] - grid[k])
        segs.append((float(s), float(f[k] - s * grid[k])))
    return segs


def _add_generation(p: MilpProblem, uid, cost: GenCost, pmin, pmax, dt_h, nseg):
    """Output variable with its piecewise cost as segment fills (convexity fills them in order)."""
    P = p.add_var(f"P_{uid}", pmin, pmax)
    segs = piecewise_cost(cost, pmin, pmax, nseg)
    if len(segs) == 1:
        p.obj[P] += dt_h * segs[0][0]
        p.obj_const += dt_h * segs[0][1]
        return P
    width = (pmax - pmin) / len(segs)
    terms = [(P, 1.0)]
    for k, (slope, _) in enumerate(segs):
        terms.append((p.add_var(f"seg_{uid}_{k}", 0.0, width, obj=dt_h * slope), -1.0))
    p.add_constraint(terms, "==", pmin, name=f"pwl_{uid}")
    p.obj_const += dt_h * float(cost.hourly(pmin))
    return P


def pwl_value(segs, p):
    return max(s * p + c for s, c in segs)


@dataclass(frozen=True)
class MethodConfig:
    variant: str
    ibr_inertia: str  # none | fixed | scheduled
    freq_constraints: bool
    peak_reserve_constraints: bool
    # relative headroom on top of the surrogate's predicted IBR peak
    peak_margin: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.peak_margin < 1.0:
            raise ValueError("peak_margin must lie in [0, 1)")

    @classmethod
    def from_variant(cls, v: str, peak_margin: float = 0.05) -> "MethodConfig":
        table = {
            "I": ("none", False, False),
            "II": ("fixed", True, False),
            "III": ("fixed", True, True),
            "IV": ("scheduled", True, True),
        }
        v = v.upper()
        if v not in table:
            raise ValueError(f"unknown method {v!r}; expected one of I, II, III, IV")
        return cls(v, *table[v], peak_margin=peak_margin)


@dataclass
class SurrogateModels:
    nadir: object  # Mlp
    peak: object  # Mlp

    def peak_slack(self) -> float:
        """Worst peak underprediction in system p.u., added to every peak reserve."""
        v = self.peak.meta.get("max_underprediction")
        if v is None:
            from .surrogate import max_underprediction

            v = self.peak.meta["max_underprediction"] = max_underprediction(self.peak)
        return float(v)


class DispatchError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# problem construction


@dataclass
class IntervalModel:
    problem: MilpProblem
    idx: dict
    dpe: float
    dpe_surrogate: float
    cfg: MethodConfig
    fixed_md: np.ndarray | None
    fragments: list = field(default_factory=list)  # (prefix, fragment, input map)


def _clamp_dpe(case, dpe):
    a = abs(dpe)
    lo, hi = case.dpe_box
    if a == 0.0:
        return 0.0
    if a > hi * (1 + 1e-12):
        raise DispatchError(f"surrogate out of domain: |dPe|={a:.4g} > {hi}")
    return min(max(a, lo), hi)


def _fragment(mlp, G, g, vlo, vhi):
    """Fragment whose inputs are the affine image ``G v + g`` of the IBR (M, D) box."""
    from .surrogate import encode_relu_milp, propagate_bounds

    return encode_relu_milp(mlp, propagate_bounds(mlp, (vlo, vhi), (G, g)))


def build_interval_problem(case, interval_loads, dPe: float, cfg: MethodConfig, models: SurrogateModels | None = None,
                           fixed_md=None, nseg: int = 8, name: str = "interval") -> IntervalModel:
    """Assemble one interval's MILP.

    ``interval_loads`` maps bus -> MW (or an array aligned with
    ``case.network.buses``). ``fixed_md`` is an (n_ibr, 2) array of own-base
    (M, D) used by methods II and III.
    """
    net = case.network
    gsf = net.gsf if net.gsf is not None else compute_gsf(net)
    buses = list(net.buses)
    bpos = {b: k for k, b in enumerate(buses)}
    if isinstance(interval_loads, dict):
        load = np.zeros(len(buses))
        for b, v in interval_loads.items():
            load[bpos[b]] = v
    else:
        load = np.asarray(interval_loads, float)
    S = case.system_mva
    dt_h = case.interval_s / 3600.0
    adpe = abs(dPe)
    dpe_s = _clamp_dpe(case, dPe) if cfg.freq_constraints else 0.0
    w = case.ibr_weights()
    sg_agg = fd.aggregate_params(case.sg_params(), [], S, case.f0)
    frags = []

    p = MilpProblem(name, {"variant": cfg.variant, "dPe": dPe})
    idx = {"P_sg": [], "ru_sg": [], "rd_sg": [], "P_ibr": [], "ru_ibr": [], "rd_ibr": [], "peak": [],
           "M": [], "D": [], "flow": []}

    for u in case.sgs:
        i = u.params.id
        P = _add_generation(p, i, u.cost, u.pmin, u.pmax, dt_h, nseg)
        ru = p.add_var(f"ru_{i}", 0.0, u.pmax - u.pmin, obj=dt_h * u.cost.reserve_price)
        rd = p.add_var(f"rd_{i}", 0.0, u.pmax - u.pmin, obj=dt_h * u.cost.reserve_price)
        p.add_constraint([(P, 1.0), (ru, 1.0)], "<=", u.pmax, name=f"up_{i}")
        p.add_constraint([(P, 1.0), (rd, -1.0)], ">=", u.pmin, name=f"dn_{i}")
        for key, v in (("P_sg", P), ("ru_sg", ru), ("rd_sg", rd)):
            idx[key].append(v)

    fixed = None
    if cfg.ibr_inertia == "fixed":
        if fixed_md is None:
            raise ValueError("methods II/III need fixed_md")
        fixed = np.asarray(fixed_md, float).reshape(len(case.ibrs), 2)
    for j, u in enumerate(case.ibrs):
        i = u.params.id
        P = _add_generation(p, i, u.cost, u.pmin, u.capacity, dt_h, nseg)
        ru = p.add_var(f"ru_{i}", 0.0, u.capacity - u.pmin, obj=dt_h * u.cost.reserve_price)
        rd = p.add_var(f"rd_{i}", 0.0, u.capacity - u.pmin, obj=dt_h * u.cost.reserve_price)
        up = [(P, 1.0), (ru, 1.0)]
        dn = [(P, 1.0), (rd, -1.0)]
        if cfg.peak_reserve_constraints:
            pk = p.add_var(f"peak_{i}", 0.0, u.capacity - u.pmin, obj=dt_h * u.cost.reserve_price)
            idx["peak"].append(pk)
            up.append((pk, 1.0))
            dn.append((pk, -1.0))
        p.add_constraint(up, "<=", u.capacity, name=f"up_{i}")
        p.add_constraint(dn, ">=", u.pmin, name=f"dn_{i}")
        for key, v in (("P_ibr", P), ("ru_ibr", ru), ("rd_ibr", rd)):
            idx[key].append(v)
        if cfg.ibr_inertia == "scheduled":
            (mlo, mhi), (dlo, dhi) = u.params.m_bounds, u.params.d_bounds
            idx["M"].append(p.add_var(f"M_{i}", mlo, mhi))
            idx["D"].append(p.add_var(f"D_{i}", dlo, dhi))
        elif cfg.ibr_inertia == "fixed":
            idx["M"].append(p.add_var(f"M_{i}", fixed[j, 0], fixed[j, 0]))
            idx["D"].append(p.add_var(f"D_{i}", fixed[j, 1], fixed[j, 1]))

    gen = idx["P_sg"] + idx["P_ibr"]
    gen_bus = [bpos[u.bus] for u in case.sgs] + [bpos[u.bus] for u in case.ibrs]
    p.add_constraint([(v, 1.0) for v in gen], "==", float(load.sum()), name="balance")
    base_flow = gsf @ (-load)
    for l, (f, t, _, lim) in enumerate(net.lines):
        terms = [(v, gsf[l, b]) for v, b in zip(gen, gen_bus) if gsf[l, b] != 0.0]
        if not terms:
            if abs(base_flow[l]) > lim:
                raise DispatchError(f"line {f}-{t} overloaded by fixed loads")
            continue
        fl = p.add_var(f"flow_{f}_{t}", -lim, lim)
        idx["flow"].append(fl)
        p.add_constraint([(fl, 1.0)] + [(v, -a) for v, a in terms], "==", base_flow[l], name=f"flow_{f}_{t}")

    req = adpe * S
    ru_all = idx["ru_sg"] + idx["ru_ibr"]
    rd_all = idx["rd_sg"] + idx["rd_ibr"]
    p.add_constraint([(v, 1.0) for v in ru_all], ">=", req, name="reserve_up")
    p.add_constraint([(v, 1.0) for v in rd_all], ">=", req, name="reserve_dn")

    if cfg.freq_constraints:
        Mterms = [(v, wj) for v, wj in zip(idx["M"], w)]
        Dterms = [(v, wj) for v, wj in zip(idx["D"], w)]
        p.add_constraint(Mterms, ">=", case.f0 * adpe / case.limits.rocof_lim - sg_agg.M, name="rocof")
        if dpe_s > 0.0:
            if models is None:
                raise ValueError("frequency constraints need surrogate models")
            # fragment inputs are affine in v = (M_1..M_n, D_1..D_n) on own bases
            nI = len(case.ibrs)
            vlo = np.array([p.lb[v] for v in idx["M"] + idx["D"]])
            vhi = np.array([p.ub[v] for v in idx["M"] + idx["D"]])
            GM = np.concatenate([w, np.zeros(nI)])
            GD = np.concatenate([np.zeros(nI), w])
            frag = _fragment(models.nadir, np.vstack([GM, GD, np.zeros(2 * nI)]),
                             np.array([sg_agg.M, sg_agg.D, dpe_s]), vlo, vhi)
            xs, y = frag.attach(p, "nadir_")
            p.add_constraint([(xs[0], 1.0)] + [(v, -c) for v, c in Mterms], "==", sg_agg.M, name="nadir_in_M")
            p.add_constraint([(xs[1], 1.0)] + [(v, -c) for v, c in Dterms], "==", sg_agg.D, name="nadir_in_D")
            p.add_constraint([(y, 1.0)], ">=", -case.limits.nadir_lim / case.f0, name="nadir")
            idx["nadir_y"] = y
            frags.append(("nadir_", frag, lambda Mt, Dt, Mj, Dj: [Mt, Dt, dpe_s]))
            if cfg.peak_reserve_constraints:
                for j, u in enumerate(case.ibrs):
                    Mv, Dv = idx["M"][j], idx["D"][j]
                    ej = np.zeros(2 * nI)
                    ej[j] = w[j]
                    fj = np.zeros(2 * nI)
                    fj[nI + j] = w[j]
                    frag = _fragment(models.peak, np.vstack([GM, GD, ej, fj, np.zeros(2 * nI)]),
                                     np.array([sg_agg.M, sg_agg.D, 0.0, 0.0, dpe_s]), vlo, vhi)
                    pre = f"peak{j}_"
                    xs, y = frag.attach(p, pre)
                    p.add_constraint([(xs[0], 1.0)] + [(v, -c) for v, c in Mterms], "==", sg_agg.M, name=pre + "in_M")
                    p.add_constraint([(xs[1], 1.0)] + [(v, -c) for v, c in Dterms], "==", sg_agg.D, name=pre + "in_D")
                    p.add_constraint([(xs[2], 1.0), (Mv, -w[j])], "==", 0.0, name=pre + "in_Mj")
                    p.add_constraint([(xs[3], 1.0), (Dv, -w[j])], "==", 0.0, name=pre + "in_Dj")
                    p.add_constraint([(idx["peak"][j], 1.0), (y, -S * (1.0 + cfg.peak_margin))], ">=",
                                     S * models.peak_slack(),
                                     name=pre + "reserve")
                    frags.append((pre, frag, lambda Mt, Dt, Mj, Dj, j=j: [Mt, Dt, w[j] * Mj[j], w[j] * Dj[j], dpe_s]))
    return IntervalModel(p, idx, dPe, dpe_s, cfg, fixed, frags)


def start_from_md(case, im: IntervalModel, md) -> dict:
    """Activation binaries of every fragment at own-base IBR (M, D) ``md``."""
    md = np.asarray(md, float).reshape(len(case.ibrs), 2)
    sg = fd.aggregate_params(case.sg_params(), [], case.system_mva, case.f0)
    w = case.ibr_weights()
    Mt, Dt = sg.M + w @ md[:, 0], sg.D + w @ md[:, 1]
    out = {}
    for prefix, frag, inputs in im.fragments:
        out.update(frag.complete_binaries(prefix, inputs(Mt, Dt, md[:, 0], md[:, 1])))
    return out


# ---------------------------------------------------------------------------
# solutions


@dataclass
class IntervalResult:
    interval: int
    dPe: float
    load_mw: float
    P_sg: dict
    P_ibr: dict
    ru: dict
    rd: dict
    peak: dict
    M_ibr: dict
    D_ibr: dict
    generation_cost: float  # $ over the interval, piecewise-linear
    generation_cost_quadratic: float
    reserve_cost: float  # regulation reserve $
    inertia_cost: float  # inertia support reserve $
    objective: float
    status: str
    gap: float
    nodes: int
    solve_time: float
    n_binaries: int
    fallback: bool = False
    balance_dual: float | None = None

    @property
    def inertia_reserve_mw(self) -> float:
        return float(sum(self.peak.values()))


@dataclass
class DispatchSolution:
    method: str
    intervals: list
    fixed_md: list | None = None
    meta: dict = field(default_factory=dict)

    @property
    def objective(self) -> float:
        return float(sum(r.objective for r in self.intervals))

    def totals(self) -> dict:
        R = self.intervals
        return {
            "total_cost": self.objective,
            "generation_cost": float(sum(r.generation_cost for r in R)),
            "reserve_cost": float(sum(r.reserve_cost for r in R)),
            "inertia_support_cost": float(sum(r.inertia_cost for r in R)),
            "inertia_support_reserve_mw": float(sum(r.inertia_reserve_mw for r in R)),
        }

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "fixed_md": self.fixed_md,
            "totals": self.totals(),
            "intervals": [asdict(r) for r in self.intervals],
            "meta": self.meta,
        }

    def save(self, path) -> Path:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, default=float))
        return Path(path)

    @classmethod
    def from_dict(cls, d) -> "DispatchSolution":
        return cls(d["method"], [IntervalResult(**r) for r in d["intervals"]], d.get("fixed_md"), d.get("meta", {}))

    @classmethod
    def load(cls, path) -> "DispatchSolution":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _extract(case, im: IntervalModel, sol, t, load_mw, nseg, fallback=False) -> IntervalResult:
    p, idx, x = im.problem, im.idx, sol.x
    dt_h = case.interval_s / 3600.0
    P_sg = {u.params.id: float(x[v]) for u, v in zip(case.sgs, idx["P_sg"])}
    P_ibr = {u.params.id: float(x[v]) for u, v in zip(case.ibrs, idx["P_ibr"])}
    ru = {u.params.id: float(x[v]) for u, v in zip(case.sgs + case.ibrs, idx["ru_sg"] + idx["ru_ibr"])}
    rd = {u.params.id: float(x[v]) for u, v in zip(case.sgs + case.ibrs, idx["rd_sg"] + idx["rd_ibr"])}
    peak = {u.params.id: float(x[v]) for u, v in zip(case.ibrs, idx["peak"])}
    if idx["M"]:
        M = {u.params.id: float(x[v]) for u, v in zip(case.ibrs, idx["M"])}
        D = {u.params.id: float(x[v]) for u, v in zip(case.ibrs, idx["D"])}
    else:
        M = {u.params.id: 0.0 for u in case.ibrs}
        D = {u.params.id: 0.0 for u in case.ibrs}
    gen = 0.0
    genq = 0.0
    for u in case.sgs:
        gen += pwl_value(piecewise_cost(u.cost, u.pmin, u.pmax, nseg), P_sg[u.params.id])
        genq += float(u.cost.hourly(P_sg[u.params.id]))
    for u in case.ibrs:
        gen += pwl_value(piecewise_cost(u.cost, u.pmin, u.capacity, nseg), P_ibr[u.params.id])
        genq += float(u.cost.hourly(P_ibr[u.params.id]))
    units = {u.params.id: u for u in case.sgs + case.ibrs}
    res = sum(units[k].cost.reserve_price * (ru[k] + rd[k]) for k in ru)
    ine = sum(units[k].cost.reserve_price * v for k, v in peak.items())
    bal = p.row_index.get("balance")
    dual = float(sol.duals[bal]) if sol.duals is not None and bal is not None else None
    return IntervalResult(
        t, im.dpe, load_mw, P_sg, P_ibr, ru, rd, peak, M, D,
        gen * dt_h, genq * dt_h, res * dt_h, ine * dt_h, sol.objective,
        sol.status, sol.gap, sol.nodes, sol.wall_time, p.n_binaries, fallback, dual,
    )


# node budget keeps results machine-independent; the wall-clock cap is a backstop
DEFAULT_SOLVER_OPTS = {"gap_tol": 1e-5, "node_limit": 1000, "time_limit": 9.5}


def solve_interval(case, loads, dPe, cfg, models=None, fixed_md=None, solver_opts=None, t=0, nseg=8,
                   start_md=None):
    """Build and solve one interval. For scheduled (M, D), ``start_md`` (or
    ``fixed_md``) seeds the search with that operating point's incumbent."""
    opts = {**DEFAULT_SOLVER_OPTS, **(solver_opts or {})}
    im = build_interval_problem(case, loads, dPe, cfg, models, fixed_md, nseg, name=f"t{t}_{cfg.variant}")
    if cfg.ibr_inertia == "scheduled" and im.problem.n_binaries and "start" not in opts:
        opts["start"] = [start_from_md(case, im, md) for md in _start_points(case, dPe, models, start_md, fixed_md)]
    sol = solve_milp(im.problem, **opts)
    if sol.x is None:
        hint = _infeasibility_hint(case, loads, dPe, cfg, models, fixed_md, nseg)
        raise DispatchError(f"interval {t} ({cfg.variant}) {sol.status}; {hint}")
    load_mw = float(np.sum(list(loads.values())) if isinstance(loads, dict) else np.sum(loads))
    res = _extract(case, im, sol, t, load_mw, nseg)
    if cfg.ibr_inertia == "scheduled":
        md = [(res.M_ibr[u.params.id], res.D_ibr[u.params.id]) for u in case.ibrs]
        if not fd.stability_check(case.synthetic(md)):
            fb = [(u.params.default_M, u.params.default_D) for u in case.ibrs]
            cfg_fb = MethodConfig("IV", "fixed", True, True, cfg.peak_margin)
            im = build_interval_problem(case, loads, dPe, cfg_fb, models, fb, nseg, name=f"t{t}_IV_fallback")
            sol = solve_milp(im.problem, **opts)
            if sol.x is None:
                raise DispatchError(f"interval {t} (IV fallback) {sol.status}")
            res = _extract(case, im, sol, t, load_mw, nseg, fallback=True)
    return res, im, sol


def _start_points(case, dPe, models, start_md, fixed_md):
    """Candidate (M, D) operating points used to seed the scheduled-inertia search."""
    pts = [np.asarray(v, float).reshape(len(case.ibrs), 2) for v in (start_md, fixed_md) if v is not None]
    try:
        Mf, Df = worst_case_fixed_md(case, abs(dPe), models, [dPe] if dPe else None)
        pts.append(np.tile([Mf, Df], (len(case.ibrs), 1)))
    except DispatchError:
        pass
    return pts


def _infeasibility_hint(case, loads, dPe, cfg, models, fixed_md, nseg):
    """Drop constraint families one at a time to find the one that blocks feasibility."""
    families = ["nadir", "rocof", "reserve", "flow", "peak"]
    im = build_interval_problem(case, loads, dPe, cfg, models, fixed_md, nseg)
    p = im.problem
    for fam in families:
        q = p.copy()
        keep = [k for k, n in enumerate(q.row_names) if not (n.startswith(fam) or (fam == "peak" and "reserve" in n
                                                                                   and n.startswith("peak")))]
        q.rows = [q.rows[k] for k in keep]
        q.row_names = [q.row_names[k] for k in keep]
        q.row_index = {n: k for k, n in enumerate(q.row_names)}
        if solve_milp(q, node_limit=2000).x is not None:
            return f"constraint family '{fam}' failed last (feasible without it)"
    return "no single constraint family explains infeasibility"


def worst_case_fixed_md(case, max_dPe, models: SurrogateModels | None, dpe_levels=None, step: float = 0.05):
    """Smallest common own-base (M, D) meeting RoCoF and nadir limits.

    Grid search over the IBR (M, D) box; the objective is M + D with ties
    broken by smaller M. Nadir is checked with the surrogate at every level
    in ``dpe_levels`` (default: ``max_dPe`` only).
    """
    mlo = max(u.params.m_bounds[0] for u in case.ibrs)
    mhi = min(u.params.m_bounds[1] for u in case.ibrs)
    dlo = max(u.params.d_bounds[0] for u in case.ibrs)
    dhi = min(u.params.d_bounds[1] for u in case.ibrs)
    Ms = np.round(np.arange(mlo, mhi + 1e-9, step), 10)
    Ds = np.round(np.arange(dlo, dhi + 1e-9, step), 10)
    MM, DD = np.meshgrid(Ms, Ds, indexing="ij")
    wsum = case.ibr_weights().sum()
    sg = fd.aggregate_params(case.sg_params(), [], case.system_mva, case.f0)
    Mt = sg.M + wsum * MM
    Dt = sg.D + wsum * DD
    ok = Mt >= case.f0 * abs(max_dPe) / case.limits.rocof_lim - 1e-12
    levels = [abs(max_dPe)] if dpe_levels is None else [abs(v) for v in dpe_levels]
    levels = [v for v in levels if v > 0]
    if levels and models is not None:
        from .surrogate import predict_batch

        for lev in levels:
            ds = _clamp_dpe(case, lev)
            X = np.column_stack([Mt.ravel(), Dt.ravel(), np.full(Mt.size, ds)])
            nad = predict_batch(models.nadir, X).reshape(Mt.shape)
            ok &= nad >= -case.limits.nadir_lim / case.f0
    if not ok.any():
        raise DispatchError("limits unattainable: no (M, D) in the box meets RoCoF and nadir limits")
    score = np.where(ok, MM + DD, np.inf)
    best = score.min()
    cand = np.argwhere(score <= best + 1e-12)
    i, j = min(cand, key=lambda ij: (MM[tuple(ij)], DD[tuple(ij)]))
    return float(MM[i, j]), float(DD[i, j])


def solve_horizon(case, forecast, cfg: MethodConfig, models: SurrogateModels | None = None, solver_opts=None,
                  nseg: int = 8, fixed_md=None, workers: int | None = None) -> DispatchSolution:
    """Solve every interval independently and merge results by interval index."""
    if forecast.n < 1:
        raise ValueError("forecast has no intervals")
    if cfg.ibr_inertia != "none" and fixed_md is None:
        levels = [v for v in forecast.dPe if v != 0.0]
        mx = max((abs(v) for v in levels), default=0.0)
        Mf, Df = worst_case_fixed_md(case, mx, models, levels or None)
        fixed_md = [(Mf, Df)] * len(case.ibrs)
    buses = forecast.buses

    def run(t):
        loads = dict(zip(buses, forecast.per_bus[t]))
        return solve_interval(case, loads, float(forecast.dPe[t]), cfg, models, fixed_md, solver_opts, t, nseg)[0]

    workers = workers or default_workers()
    t0 = time.perf_counter()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            results = list(ex.map(run, range(forecast.n)))
    else:
        results = [run(t) for t in range(forecast.n)]
    results.sort(key=lambda r: r.interval)
    return DispatchSolution(cfg.variant, results,
                            [list(v) for v in fixed_md] if cfg.ibr_inertia == "fixed" else None,
                            {"wall_time": time.perf_counter() - t0, "nseg": nseg})


def check_interval(case, im: IntervalModel, x, tol: float = 1e-6) -> dict:
    """Independent re-check of a primal vector against the model's constraints."""
    res = im.problem.residuals(x)
    ok = max(res["bound"], res["row"], res["integrality"]) <= tol
    return {"ok": ok, **res}
