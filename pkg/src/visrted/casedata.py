"""Built-in modified 39-bus case, case JSON I/O, load profiles and forecasts.

The built-in case keeps the standard 39-bus topology and line ratings,
replaces the units at buses 30/35/37/38 by inverter-based resources and
embeds the published cost table. Dynamic parameters are a reduced
equivalent on a 100 MVA base (see ``DYNAMIC_TABLE``).
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dispatch import GenCost, Network, compute_gsf
from .freq_dynamics import IbrParams, SgParams, aggregate_params

SCHEMA_VERSION = 1
INTERVAL_S = 300

# fbus, tbus, x (p.u.), rateA (MW)
BRANCHES_39 = [
    (1, 2, 0.0411, 900), (1, 39, 0.0250, 1000), (2, 3, 0.0151, 500), (2, 25, 0.0086, 500),
    (2, 30, 0.0181, 900), (3, 4, 0.0213, 500), (3, 18, 0.0133, 500), (4, 5, 0.0128, 600),
    (4, 14, 0.0129, 500), (5, 6, 0.0026, 1200), (5, 8, 0.0112, 900), (6, 7, 0.0092, 900),
    (6, 11, 0.0082, 480), (6, 31, 0.0250, 1800), (7, 8, 0.0046, 900), (8, 9, 0.0363, 900),
    (9, 39, 0.0250, 900), (10, 11, 0.0043, 600), (10, 13, 0.0043, 600), (10, 32, 0.0200, 900),
    (12, 11, 0.0435, 500), (12, 13, 0.0435, 500), (13, 14, 0.0101, 600), (14, 15, 0.0217, 600),
    (15, 16, 0.0094, 600), (16, 17, 0.0089, 600), (16, 19, 0.0195, 600), (16, 21, 0.0135, 600),
    (16, 24, 0.0059, 600), (17, 18, 0.0082, 600), (17, 27, 0.0173, 600), (19, 20, 0.0138, 900),
    (19, 33, 0.0142, 900), (20, 34, 0.0180, 900), (21, 22, 0.0140, 900), (22, 23, 0.0096, 600),
    (22, 35, 0.0143, 900), (23, 24, 0.0350, 600), (23, 36, 0.0272, 900), (25, 26, 0.0323, 600),
    (25, 37, 0.0232, 900), (26, 27, 0.0147, 600), (26, 28, 0.0474, 600), (26, 29, 0.0625, 600),
    (28, 29, 0.0151, 600), (29, 38, 0.0156, 1200),
]

# nominal active load per bus (MW); used only for the bus split of total load
NOMINAL_LOADS_39 = {
    1: 97.6, 3: 322.0, 4: 500.0, 7: 233.8, 8: 522.0, 12: 8.5, 15: 320.0, 16: 329.0,
    18: 158.0, 20: 680.0, 21: 274.0, 23: 247.5, 24: 308.6, 25: 224.0, 26: 139.0,
    27: 281.0, 28: 206.0, 29: 283.5, 31: 9.2, 39: 1104.0,
}

# id, bus, pmax, a, b, c, b_r  (cost rows of the published table)
SG_COSTS = [
    ("SG1", 31, 646.0, 0.014, 20.0, 500.0, 10.0),
    ("SG2", 32, 725.0, 0.020, 20.0, 380.0, 10.0),
    ("SG3", 33, 652.0, 0.019, 20.0, 42.0, 10.0),
    ("SG5", 34, 508.0, 0.026, 20.0, 295.0, 10.0),
    ("SG6", 36, 580.0, 0.021, 20.0, 400.0, 10.0),
]
IBR_COSTS = [
    ("IBR1", 30, 900.0, 0.001, 1.0, 50.0, 20.61),
    ("IBR2", 35, 800.0, 0.001, 1.0, 50.0, 18.96),
    ("IBR3", 37, 700.0, 0.001, 1.0, 50.0, 19.15),
    ("IBR4", 38, 1000.0, 0.001, 1.0, 50.0, 20.06),
]

# Reduced dynamic equivalent (unit bases in MVA, weights mva_base/100).
DYNAMIC_TABLE = {
    "sg_mva_base": 12.0,
    "sg_M": {"SG1": 4.0, "SG2": 4.5, "SG3": 5.0, "SG5": 5.5, "SG6": 6.0},
    "sg_D": 2.0,
    "sg_K": 1.5,
    "sg_R": 0.02,
    "sg_F": 0.3,
    "sg_T": 1.0,
    "ibr_mva_per_mw": 1.0 / 40.0,
    "ibr_T": 0.01,
    "ibr_default_M": 2.0,
    "ibr_default_D": 1.0,
    "sg_pmin_fraction": 0.2,
}


@dataclass
class Limits:
    rocof_lim: float = 0.5  # Hz/s
    nadir_lim: float = 0.1  # Hz


@dataclass
class SgUnit:
    params: SgParams
    cost: GenCost
    bus: int
    pmin: float
    pmax: float


@dataclass
class IbrUnit:
    params: IbrParams
    cost: GenCost
    bus: int
    capacity: float
    pmin: float = 0.0


@dataclass
class Case:
    name: str
    network: Network
    sgs: list
    ibrs: list
    system_mva: float = 100.0
    f0: float = 60.0
    limits: Limits = field(default_factory=Limits)
    nominal_loads: dict = field(default_factory=dict)
    dpe_box: tuple = (0.01, 0.05)
    interval_s: int = INTERVAL_S

    def sg_params(self):
        return [u.params for u in self.sgs]

    def ibr_params(self):
        return [u.params for u in self.ibrs]

    def synthetic(self, ibr_md=None):
        """Aggregate parameters; ``ibr_md`` overrides IBR (M, D) on own bases."""
        ibrs = self.ibr_params()
        if ibr_md is not None:
            ibrs = [b.with_md(M, D) for b, (M, D) in zip(ibrs, ibr_md)]
        return aggregate_params(self.sg_params(), ibrs, self.system_mva, self.f0)

    def ibr_weights(self) -> np.ndarray:
        return np.array([u.params.mva_base / self.system_mva for u in self.ibrs])

    def load_shares(self) -> dict:
        tot = sum(self.nominal_loads.values())
        return {b: v / tot for b, v in self.nominal_loads.items()}

    def md_ranges(self):
        """Reachable aggregate (M, D) and per-IBR system-base ranges."""
        sg = aggregate_params(self.sg_params(), [], self.system_mva, self.f0)
        w = self.ibr_weights()
        mlo = np.array([u.params.m_bounds[0] for u in self.ibrs])
        mhi = np.array([u.params.m_bounds[1] for u in self.ibrs])
        dlo = np.array([u.params.d_bounds[0] for u in self.ibrs])
        dhi = np.array([u.params.d_bounds[1] for u in self.ibrs])
        return {
            "M": (sg.M + float(w @ mlo), sg.M + float(w @ mhi)),
            "D": (sg.D + float(w @ dlo), sg.D + float(w @ dhi)),
            "M_ibr": (float((w * mlo).min()), float((w * mhi).max())),
            "D_ibr": (float((w * dlo).min()), float((w * dhi).max())),
            "dPe": tuple(self.dpe_box),
        }

    def surrogate_box(self, target: str) -> dict:
        r = self.md_ranges()
        keys = ("M", "D", "dPe") if target == "nadir" else ("M", "D", "M_ibr", "D_ibr", "dPe")
        return {k: r[k] for k in keys}

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "system_mva": self.system_mva,
            "f0": self.f0,
            "limits": {"rocof_lim": self.limits.rocof_lim, "nadir_lim": self.limits.nadir_lim},
            "dpe_box": list(self.dpe_box),
            "interval_s": self.interval_s,
            "buses": list(self.network.buses),
            "ref_bus": self.network.ref_bus,
            "lines": [{"from": f, "to": t, "x": x, "limit": lim} for f, t, x, lim in self.network.lines],
            "nominal_loads": {str(b): v for b, v in self.nominal_loads.items()},
            "sgs": [
                {
                    "id": u.params.id, "bus": u.bus, "pmin": u.pmin, "pmax": u.pmax,
                    "inertia_M": u.params.inertia_M, "damping_D": u.params.damping_D,
                    "gain_K": u.params.gain_K, "droop_R": u.params.droop_R,
                    "fraction_F": u.params.fraction_F, "turbine_T": u.params.turbine_T,
                    "mva_base": u.params.mva_base, "cost": _cost_dict(u.cost),
                }
                for u in self.sgs
            ],
            "ibrs": [
                {
                    "id": u.params.id, "bus": u.bus, "capacity": u.capacity, "pmin": u.pmin,
                    "virtual_M": u.params.virtual_M, "virtual_D": u.params.virtual_D,
                    "lag_T_ibr": u.params.lag_T_ibr, "mva_base": u.params.mva_base,
                    "m_bounds": list(u.params.m_bounds), "d_bounds": list(u.params.d_bounds),
                    "default_M": u.params.default_M, "default_D": u.params.default_D,
                    "cost": _cost_dict(u.cost),
                }
                for u in self.ibrs
            ],
        }


def _cost_dict(c: GenCost):
    return {"a": c.a, "b": c.b, "c": c.c, "reserve_price": c.reserve_price}


def builtin_case() -> Case:
    dt = DYNAMIC_TABLE
    buses = list(range(1, 40))
    net = Network(buses, [tuple(b) for b in BRANCHES_39], ref_bus=31)
    sgs = []
    for sid, bus, pmax, a, b, c, br in SG_COSTS:
        p = SgParams(sid, dt["sg_M"][sid], dt["sg_D"], dt["sg_K"], dt["sg_R"], dt["sg_F"], dt["sg_T"],
                     dt["sg_mva_base"])
        sgs.append(SgUnit(p, GenCost(a, b, c, br), bus, dt["sg_pmin_fraction"] * pmax, pmax))
    ibrs = []
    for iid, bus, cap, a, b, c, br in IBR_COSTS:
        p = IbrParams(iid, dt["ibr_default_M"], dt["ibr_default_D"], dt["ibr_T"], cap * dt["ibr_mva_per_mw"],
                      (0.0, 8.0), (0.0, 6.0), dt["ibr_default_M"], dt["ibr_default_D"])
        ibrs.append(IbrUnit(p, GenCost(a, b, c, br), bus, cap, 0.0))
    return Case("ieee39-vis", net, sgs, ibrs, 100.0, 60.0, Limits(0.5, 0.1), dict(NOMINAL_LOADS_39))


# ---------------------------------------------------------------------------
# case files


class CaseError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid case:\n  " + "\n  ".join(self.problems))


def _num(d, key, where, problems, positive=False, nonneg=False, default=None):
    if key not in d:
        if default is not None:
            return default
        problems.append(f"{where}: missing {key}")
        return math.nan
    try:
        v = float(d[key])
    except (TypeError, ValueError):
        problems.append(f"{where}: {key} is not a number")
        return math.nan
    if not math.isfinite(v):
        problems.append(f"{where}: {key} is not finite")
    elif positive and v <= 0:
        problems.append(f"{where}: {key} must be > 0")
    elif nonneg and v < 0:
        problems.append(f"{where}: {key} must be >= 0")
    return v


def case_from_dict(d: dict) -> Case:
    problems = []
    ver = d.get("schema_version")
    if ver != SCHEMA_VERSION:
        problems.append(f"schema_version: expected {SCHEMA_VERSION}, got {ver!r}")
    buses = d.get("buses") or []
    if not buses:
        problems.append("buses: missing or empty")
    bus_set = set(buses)
    lines = []
    for k, L in enumerate(d.get("lines") or []):
        where = f"lines[{k}] ({L.get('from')}-{L.get('to')})"
        for end in ("from", "to"):
            if L.get(end) not in bus_set:
                problems.append(f"{where}: {end} bus {L.get(end)!r} not in buses")
        x = _num(L, "x", where, problems, positive=True)
        lim = _num(L, "limit", where, problems, positive=True)
        lines.append((L.get("from"), L.get("to"), x, lim))
    if not lines:
        problems.append("lines: missing or empty")
    ref = d.get("ref_bus")
    if ref not in bus_set:
        problems.append(f"ref_bus: {ref!r} not in buses")

    def cost(c, where):
        c = c or {}
        a = _num(c, "a", where + ".cost", problems, nonneg=True)
        return GenCost(a, _num(c, "b", where + ".cost", problems), _num(c, "c", where + ".cost", problems),
                       _num(c, "reserve_price", where + ".cost", problems, nonneg=True))

    sgs = []
    for k, s in enumerate(d.get("sgs") or []):
        where = f"sgs[{k}] ({s.get('id')})"
        if s.get("bus") not in bus_set:
            problems.append(f"{where}: bus {s.get('bus')!r} not in buses")
        vals = {key: _num(s, key, where, problems) for key in
                ("inertia_M", "damping_D", "gain_K", "droop_R", "fraction_F", "turbine_T", "mva_base",
                 "pmin", "pmax")}
        gc = cost(s.get("cost"), where)
        if vals["pmin"] > vals["pmax"]:
            problems.append(f"{where}: pmin > pmax")
        try:
            p = SgParams(str(s.get("id")), vals["inertia_M"], vals["damping_D"], vals["gain_K"], vals["droop_R"],
                         vals["fraction_F"], vals["turbine_T"], vals["mva_base"])
            sgs.append(SgUnit(p, gc, s.get("bus"), vals["pmin"], vals["pmax"]))
        except ValueError as exc:
            problems.append(f"{where}: {exc}")
    if not sgs:
        problems.append("sgs: no synchronous generator")
    ibrs = []
    for k, s in enumerate(d.get("ibrs") or []):
        where = f"ibrs[{k}] ({s.get('id')})"
        if s.get("bus") not in bus_set:
            problems.append(f"{where}: bus {s.get('bus')!r} not in buses")
        vals = {key: _num(s, key, where, problems) for key in
                ("virtual_M", "virtual_D", "lag_T_ibr", "mva_base", "capacity")}
        pmin = _num(s, "pmin", where, problems, nonneg=True, default=0.0)
        mb, db = s.get("m_bounds"), s.get("d_bounds")
        for nm, bd in (("m_bounds", mb), ("d_bounds", db)):
            if not (isinstance(bd, (list, tuple)) and len(bd) == 2):
                problems.append(f"{where}: {nm} must be [min, max]")
            elif not float(bd[0]) <= float(bd[1]):
                problems.append(f"{where}: {nm} min > max")
        gc = cost(s.get("cost"), where)
        if vals["lag_T_ibr"] <= 0:
            problems.append(f"{where}: lag_T_ibr must be > 0")
        try:
            p = IbrParams(str(s.get("id")), vals["virtual_M"], vals["virtual_D"], vals["lag_T_ibr"],
                          vals["mva_base"], tuple(mb), tuple(db), float(s.get("default_M", 0.0)),
                          float(s.get("default_D", 0.0)))
            ibrs.append(IbrUnit(p, gc, s.get("bus"), vals["capacity"], pmin))
        except (ValueError, TypeError) as exc:
            problems.append(f"{where}: {exc}")
    lim = d.get("limits") or {}
    limits = Limits(_num(lim, "rocof_lim", "limits", problems, positive=True),
                    _num(lim, "nadir_lim", "limits", problems, positive=True))
    loads = {}
    for b, v in (d.get("nominal_loads") or {}).items():
        bi = int(b)
        if bi not in bus_set:
            problems.append(f"nominal_loads: bus {b} not in buses")
        loads[bi] = float(v)
    dpe_box = tuple(d.get("dpe_box", (0.01, 0.05)))
    if not (len(dpe_box) == 2 and 0 < dpe_box[0] < dpe_box[1]):
        problems.append("dpe_box: must satisfy 0 < min < max")
    if problems:
        raise CaseError(problems)
    net = Network(list(buses), lines, ref)
    case = Case(d.get("name", "case"), net, sgs, ibrs, float(d.get("system_mva", 100.0)), float(d.get("f0", 60.0)),
                limits, loads, dpe_box, int(d.get("interval_s", INTERVAL_S)))
    compute_gsf(net, ref)
    return case


def load_case(path) -> Case:
    if str(path) == "builtin":
        return builtin_case()
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CaseError([f"not valid JSON: {exc}"]) from exc
    return case_from_dict(d)


def save_case(case: Case, path) -> Path:
    Path(path).write_text(json.dumps(case.to_dict(), indent=1))
    return Path(path)


# ---------------------------------------------------------------------------
# profiles and forecasts


@dataclass
class LoadProfile:
    load_mw: np.ndarray  # aggregate series at ``resolution`` seconds
    resolution: float = 1.0
    provenance: dict = field(default_factory=dict)

    @property
    def duration(self) -> float:
        return len(self.load_mw) * self.resolution

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self.load_mw)) * self.resolution

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t_seconds", "load_mw"])
            for t, v in zip(self.t, self.load_mw):
                w.writerow([f"{t:g}", repr(float(v))])
        return Path(path)

    @classmethod
    def from_csv(cls, path) -> "LoadProfile":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if not rows or rows[0][:2] != ["t_seconds", "load_mw"]:
            raise ValueError("profile CSV must start with header t_seconds,load_mw")
        body = np.array([[float(r[0]), float(r[1])] for r in rows[1:]])
        res = float(body[1, 0] - body[0, 0]) if len(body) > 1 else 1.0
        if np.any(body[:, 1] < 0):
            raise ValueError("profile has negative load")
        return cls(body[:, 1], res, {"file": str(path)})


def synth_profile(spec: dict, seed: int, duration: float) -> LoadProfile:
    """``base + ramp + steps + noise`` at 1 s resolution, clipped at zero.

    ``spec`` keys: ``base`` (MW), ``ramp`` (MW/h), ``steps`` (list of
    ``[t_seconds, MW]``), ``sigma`` (MW).
    """
    base = float(spec["base"])
    sigma = float(spec.get("sigma", 0.0))
    if base <= 0 or sigma < 0:
        raise ValueError("need base > 0 and sigma >= 0")
    n = int(round(duration))
    t = np.arange(n, dtype=float)
    load = base + float(spec.get("ramp", 0.0)) * t / 3600.0
    for ts, mw in spec.get("steps", []):
        load = load + np.where(t >= float(ts), float(mw), 0.0)
    if sigma > 0:
        load = load + np.random.default_rng(seed).normal(0.0, sigma, n)
    return LoadProfile(np.maximum(load, 0.0), 1.0, {"synthetic": {"seed": int(seed), "spec": spec}})


EVENT_OFFSET_S = 2


def default_profile_spec(seed: int, n_intervals: int = 12, interval_s: int = INTERVAL_S) -> dict:
    """Interval-boundary step pattern for the built-in case.

    Ordinary boundary changes stay within +-2.5 MW; three boundaries carry
    large events of 3.9-4.6 MW and the largest (always positive) exceeds
    4 MW, i.e. a disturbance above 0.04 p.u. on 100 MVA. Each change lands
    ``EVENT_OFFSET_S`` after its boundary, so the new setpoints and the load
    change act as separate disturbances rather than cancelling.
    """
    rng = np.random.default_rng([seed, 7])
    k = n_intervals - 1
    steps = np.clip(rng.normal(0.0, 1.2, k), -2.5, 2.5)
    # keep the first boundary ordinary unless it is the only one
    pool = np.arange(1, k) if k > 1 else np.arange(k)
    big = rng.choice(pool, size=min(3, len(pool)), replace=False)
    if len(big):
        mags = rng.uniform(3.9, 4.4, len(big))
        mags[0] = rng.uniform(4.25, 4.6)
        signs = np.where(rng.random(len(big)) < 0.7, 1.0, -1.0)
        signs[0] = 1.0
        steps[big] = mags * signs
    return {
        "base": 5600.0 + float(rng.uniform(-100, 100)),
        "ramp": 0.0,
        "steps": [[(i + 1) * interval_s + EVENT_OFFSET_S, float(s)] for i, s in enumerate(steps)],
        "sigma": 0.0,
    }


def default_profile(seed: int = 42, n_intervals: int = 12) -> LoadProfile:
    return synth_profile(default_profile_spec(seed, n_intervals), seed, n_intervals * INTERVAL_S)


@dataclass
class ForecastSet:
    totals: np.ndarray  # MW per interval
    per_bus: np.ndarray  # (intervals, buses) MW
    buses: list
    dPe: np.ndarray  # signed p.u. per interval, first is 0

    @property
    def n(self) -> int:
        return len(self.totals)


def forecast_intervals(p: LoadProfile, interval: float = INTERVAL_S, shares: dict | None = None,
                       system_mva: float = 100.0, error_sigma: float = 0.0, seed: int = 0) -> ForecastSet:
    """Per-interval mean of the actual series; optional additive Gaussian error."""
    steps = int(round(interval / p.resolution))
    n = len(p.load_mw) // steps
    if n < 1:
        raise ValueError("profile shorter than one interval")
    totals = p.load_mw[: n * steps].reshape(n, steps).mean(axis=1)
    if error_sigma > 0:
        totals = totals + np.random.default_rng(seed).normal(0.0, error_sigma, n)
    shares = shares or {1: 1.0}
    buses = sorted(shares)
    sh = np.array([shares[b] for b in buses])
    sh = sh / sh.sum()
    per_bus = totals[:, None] * sh[None, :]
    # make the split sum exactly to the total
    per_bus[:, -1] = totals - per_bus[:, :-1].sum(axis=1)
    dpe = np.concatenate([[0.0], np.diff(totals) / system_mva])
    return ForecastSet(totals, per_bus, buses, dpe)


def resolve_profile(spec: str | None, seed: int = 42, n_intervals: int = 12) -> LoadProfile:
    """``builtin`` | ``seed:N`` | path to a profile CSV."""
    if spec in (None, "", "builtin"):
        return default_profile(seed, n_intervals)
    if spec.startswith("seed:"):
        return default_profile(int(spec.split(":", 1)[1]), n_intervals)
    return LoadProfile.from_csv(spec)
