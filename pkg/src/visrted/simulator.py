"""Reduced-order time-domain check of a dispatch schedule.

Uniform-frequency swing with one governor/turbine channel per SG, one VSG
channel and one setpoint filter per IBR, a sampled PI AGC loop and the 1 s
load profile held between samples. Setpoints and IBR (M, D) switch at
interval boundaries. Integration is classical RK4; each recorded step may
bundle several RK4 sub-steps so the stiffest device lag is resolved.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .freq_dynamics import rk4_step_matrices


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    agc_period: float = 4.0
    agc_gains: tuple = (0.05, 0.5)  # (Kp p.u./p.u., Ki p.u./p.u./s) on frequency deviation
    agc_filter_T: float = 0.2
    agc_enabled: bool = True
    rocof_window: float = 0.1
    f0: float = 60.0
    rocof_lim: float = 0.5
    nadir_band: float = 0.1
    capacity_tol: float = 1e-6  # MW

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        k = self.agc_period / self.dt
        if abs(k - round(k)) > 1e-9 or round(k) < 1:
            raise ValueError("agc_period must be a positive multiple of dt")
        if self.rocof_window < 2 * self.dt:
            raise ValueError("rocof_window must be >= 2 dt")
        if not self.agc_filter_T > 0:
            raise ValueError("agc_filter_T must be > 0")

    @classmethod
    def for_case(cls, case, **kw) -> "SimConfig":
        return cls(f0=case.f0, rocof_lim=case.limits.rocof_lim, nadir_band=case.limits.nadir_lim, **kw)


@dataclass
class SimTrace:
    t: np.ndarray
    f: np.ndarray  # Hz
    rocof: np.ndarray  # Hz/s, windowed
    p_sg: np.ndarray  # (n_t, n_sg) MW mechanical
    p_ibr: np.ndarray  # (n_t, n_ibr) MW electrical
    agc: np.ndarray  # MW total
    sg_ids: list
    ibr_ids: list
    interval_s: float
    meta: dict = field(default_factory=dict)

    def to_csv(self, path, every: int = 1) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "f", "rocof"] + [f"sg:{i}" for i in self.sg_ids] + [f"ibr:{i}" for i in self.ibr_ids]
                       + ["agc"])
            for k in range(0, len(self.t), max(1, int(every))):
                w.writerow([f"{self.t[k]:.6f}", repr(float(self.f[k])), repr(float(self.rocof[k]))]
                           + [repr(float(v)) for v in self.p_sg[k]] + [repr(float(v)) for v in self.p_ibr[k]]
                           + [repr(float(self.agc[k]))])
        return path


class SimulationError(RuntimeError):
    pass


def rocof_series(trace_or_f, window: float, dt: float | None = None) -> np.ndarray:
    """Central difference of frequency over ``window`` seconds (one-sided near the edges)."""
    if isinstance(trace_or_f, SimTrace):
        f = trace_or_f.f
        dt = float(trace_or_f.t[1] - trace_or_f.t[0]) if dt is None else dt
    else:
        f = np.asarray(trace_or_f, float)
    if dt is None:
        raise ValueError("dt is required for a bare series")
    if window < 2 * dt:
        raise ValueError("window must be >= 2 dt")
    h = max(1, int(round(window / (2 * dt))))
    n = len(f)
    lo = np.clip(np.arange(n) - h, 0, n - 1)
    hi = np.clip(np.arange(n) + h, 0, n - 1)
    span = (hi - lo) * dt
    out = np.zeros(n)
    ok = span > 0
    out[ok] = (f[hi[ok]] - f[lo[ok]]) / span[ok]
    return out


def _system_matrices(case, md, active):
    """A, B for states [df, y_sg.., x_ibr.., s_ibr.., agc filter] and inputs
    [load, sg setpoint.., ibr setpoint..] in system p.u. ``active`` flags IBRs
    in VSG mode; ``md`` holds their own-base (M, D)."""
    S = case.system_mva
    sgs, ibrs = case.sgs, case.ibrs
    ns, ni = len(sgs), len(ibrs)
    ws = np.array([u.params.mva_base / S for u in sgs])
    Msw = float(np.sum(ws * [u.params.inertia_M for u in sgs]))
    Dsw = float(np.sum(ws * [u.params.damping_D for u in sgs]))
    Rg = ws * np.array([u.params.gain_K / u.params.droop_R for u in sgs])
    F = np.array([u.params.fraction_F for u in sgs])
    T = np.array([u.params.turbine_T for u in sgs])
    wi = case.ibr_weights()
    Mj = np.where(active, wi * md[:, 0], 0.0)
    Dj = np.where(active, wi * md[:, 1], 0.0)
    Tj = np.array([u.params.lag_T_ibr for u in ibrs])
    n = 1 + ns + 2 * ni + 1
    nu = 1 + ns + ni
    A = np.zeros((n, n))
    B = np.zeros((n, nu))
    iy = 1 + np.arange(ns)
    ix = 1 + ns + np.arange(ni)
    isp = 1 + ns + ni + np.arange(ni)
    iphi = n - 1
    # output maps: P_sg = F v + y with v = Pset - Rg df ; P_ibr = s - (Mj/Tj) df + x
    # swing: Msw df' = sum P_sg + sum P_ibr - load - Dsw df
    A[0, 0] = (-Dsw - float(np.sum(F * Rg)) - float(np.sum(Mj / Tj))) / Msw
    A[0, iy] = 1.0 / Msw
    A[0, ix] = 1.0 / Msw
    A[0, isp] = 1.0 / Msw
    B[0, 0] = -1.0 / Msw
    B[0, 1:1 + ns] = F / Msw
    # turbine lag: T y' = -y + (1 - F) v
    A[iy, iy] = -1.0 / T
    A[iy, 0] = -(1.0 - F) * Rg / T
    B[iy, 1 + np.arange(ns)] = (1.0 - F) / T
    # VSG channel: Tj x' = -x - (Dj - Mj/Tj) df
    A[ix, ix] = -1.0 / Tj
    A[ix, 0] = -(Dj - Mj / Tj) / Tj
    # setpoint filter: Tj s' = -s + Pset
    A[isp, isp] = -1.0 / Tj
    B[isp, 1 + ns + np.arange(ni)] = 1.0 / Tj
    return A, B, {"F": F, "Rg": Rg, "Mj": Mj, "Tj": Tj, "iy": iy, "ix": ix, "isp": isp, "iphi": iphi}


def _step_matrices(A, B, dt, min_T):
    """RK4 over ``dt`` as ``n`` composed sub-steps, each shorter than min_T/10."""
    n_sub = max(1, math.ceil(dt / (min_T / 10.0)))
    if dt / n_sub >= min_T / 10.0:
        n_sub += 1
    P1, G1 = _rk4_multi(A, B, dt / n_sub)
    Phi = np.eye(A.shape[0])
    Gam = np.zeros(B.shape)
    for _ in range(n_sub):
        Gam = P1 @ Gam + G1
        Phi = P1 @ Phi
    return Phi, Gam, n_sub


def _rk4_multi(A, B, h):
    cols = [rk4_step_matrices(A, B[:, k], h) for k in range(B.shape[1])]
    return cols[0][0], np.column_stack([c[1] for c in cols])


def simulate(case, solution, profile, cfg: SimConfig | None = None) -> SimTrace:
    """Integrate the schedule in ``solution`` against the actual ``profile``."""
    cfg = cfg or SimConfig.for_case(case)
    S = case.system_mva
    Ti = case.interval_s
    n_int = len(solution.intervals)
    horizon = n_int * Ti
    if profile.duration < horizon - 1e-9:
        raise ValueError(f"profile covers {profile.duration} s, schedule needs {horizon} s")
    idx = sorted(r.interval for r in solution.intervals)
    if idx != list(range(n_int)):
        raise ValueError("solution intervals must be contiguous from 0")
    rows = sorted(solution.intervals, key=lambda r: r.interval)
    sgs, ibrs = case.sgs, case.ibrs
    ns, ni = len(sgs), len(ibrs)
    dt = cfg.dt
    steps_int = int(round(Ti / dt))
    if abs(steps_int * dt - Ti) > 1e-9:
        raise ValueError("interval length must be a multiple of dt")
    agc_every = int(round(cfg.agc_period / dt))
    min_T = min([u.params.turbine_T for u in sgs] + [u.params.lag_T_ibr for u in ibrs] + [cfg.agc_filter_T])
    if min_T <= 0:
        raise ValueError("simulation needs every device time constant > 0 (lag_T_ibr = 0 is not simulable)")
    Kp, Ki = cfg.agc_gains
    vsg = solution.method.upper() != "I"
    load_pu = np.asarray(profile.load_mw, float) / S
    res = profile.resolution

    n_t = n_int * steps_int + 1
    X = np.zeros((n_t, 1 + ns + 2 * ni + 1))
    U = np.zeros((n_t, 1 + ns + ni))
    agc_tot = np.zeros(n_t)

    def setpoints(r):
        psg = np.array([r.P_sg[u.params.id] for u in sgs]) / S
        pib = np.array([r.P_ibr[u.params.id] for u in ibrs]) / S
        ru = np.array([r.ru[u.params.id] for u in sgs])
        share = ru / ru.sum() if ru.sum() > 0 else np.full(ns, 1.0 / ns)
        return psg, pib, share

    psg0, pib0, _ = setpoints(rows[0])
    F0 = np.array([u.params.fraction_F for u in sgs])
    x = np.zeros(X.shape[1])
    x[1:1 + ns] = (1.0 - F0) * psg0
    x[1 + ns + ni:1 + ns + 2 * ni] = pib0
    X[0] = x
    integ = 0.0
    agc_u = 0.0
    k_glob = 0
    n_sub_used = 1
    for k, r in enumerate(rows):
        md = np.array([[r.M_ibr[u.params.id], r.D_ibr[u.params.id]] for u in ibrs]) if ni else np.zeros((0, 2))
        active = np.full(ni, vsg)
        A, B, info = _system_matrices(case, md, active)
        # AGC filter: Ta phi' = -phi + df
        A[info["iphi"], info["iphi"]] = -1.0 / cfg.agc_filter_T
        A[info["iphi"], 0] = 1.0 / cfg.agc_filter_T
        Phi, Gam, n_sub_used = _step_matrices(A, B, dt, min_T)
        if k > 0:
            # bumpless switch: keep the VSG output continuous when gains change
            x[info["ix"]] += (info["Mj"] - Mj_prev) / info["Tj"] * x[0]
            X[k_glob] = x
        Mj_prev = info["Mj"]
        psg, pib, share = setpoints(r)
        for s in range(steps_int):
            t = k_glob * dt
            if cfg.agc_enabled and k_glob > 0 and k_glob % agc_every == 0:
                e = x[-1]
                integ += Ki * cfg.agc_period * (-e)
                agc_u = Kp * (-e) + integ
            li = min(int(math.floor(t / res + 1e-9)), len(load_pu) - 1)
            u = np.empty(1 + ns + ni)
            u[0] = load_pu[li]
            u[1:1 + ns] = psg + share * agc_u
            u[1 + ns:] = pib
            U[k_glob] = u
            agc_tot[k_glob] = agc_u
            x = Phi @ x + Gam @ u
            k_glob += 1
            X[k_glob] = x
            if not np.all(np.isfinite(x)):
                raise SimulationError(f"simulation diverged at t={k_glob * dt:.3f} s")
    U[-1] = U[-2]
    agc_tot[-1] = agc_tot[-2]

    # outputs, rebuilt interval by interval for the per-interval IBR gains
    t_axis = np.arange(n_t) * dt
    df = X[:, 0]
    p_sg = np.zeros((n_t, ns))
    p_ibr = np.zeros((n_t, ni))
    for k, r in enumerate(rows):
        sl = slice(k * steps_int, (k + 1) * steps_int + (1 if k == n_int - 1 else 0))
        md = np.array([[r.M_ibr[u.params.id], r.D_ibr[u.params.id]] for u in ibrs]) if ni else np.zeros((0, 2))
        _, _, info = _system_matrices(case, md, np.full(ni, vsg))
        v = U[sl, 1:1 + ns] - df[sl, None] * info["Rg"][None, :]
        p_sg[sl] = (info["F"][None, :] * v + X[sl][:, info["iy"]]) * S
        p_ibr[sl] = (X[sl][:, info["isp"]] - df[sl, None] * (info["Mj"] / info["Tj"])[None, :] + X[sl][:, info["ix"]]) * S
    f = cfg.f0 * (1.0 + df)
    trace = SimTrace(t_axis, f, np.zeros(n_t), p_sg, p_ibr, agc_tot * S,
                     [u.params.id for u in sgs], [u.params.id for u in ibrs], float(Ti),
                     {"method": solution.method, "dt": dt, "rk4_substeps": n_sub_used,
                      "agc": cfg.agc_enabled})
    trace.rocof = rocof_series(f, cfg.rocof_window, dt)
    return trace


@dataclass
class ViolationReport:
    counts: dict
    worst: dict
    per_interval: list

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> Path:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))
        return Path(path)


def violation_report(trace: SimTrace, solution, case, cfg: SimConfig | None = None) -> ViolationReport:
    """At most one violation per interval per category; worst excursions in Hz/s, Hz and MW."""
    cfg = cfg or SimConfig.for_case(case)
    n_int = len(solution.intervals)
    steps = int(round(trace.interval_s / (trace.t[1] - trace.t[0])))
    cap = np.array([u.capacity for u in case.ibrs])
    floor = np.array([u.pmin for u in case.ibrs])
    counts = {"rocof": 0, "nadir": 0, "ibr_capacity": 0}
    worst = {"rocof": 0.0, "nadir": 0.0, "ibr_capacity": 0.0}
    per = []
    for k in range(n_int):
        sl = slice(k * steps, (k + 1) * steps + 1)
        rc = float(np.max(np.abs(trace.rocof[sl])))
        dev = float(np.max(np.abs(trace.f[sl] - cfg.f0)))
        if trace.p_ibr.shape[1]:
            over = float(np.max(np.maximum(trace.p_ibr[sl] - cap, floor - trace.p_ibr[sl])))
        else:
            over = -math.inf
        row = {
            "interval": k,
            "max_abs_rocof": rc,
            "max_abs_df": dev,
            "max_capacity_excess_mw": over,
            "rocof": rc > cfg.rocof_lim,
            "nadir": dev > cfg.nadir_band,
            "ibr_capacity": over > cfg.capacity_tol,
        }
        for c in counts:
            counts[c] += int(row[c])
        worst["rocof"] = max(worst["rocof"], rc)
        worst["nadir"] = max(worst["nadir"], dev)
        worst["ibr_capacity"] = max(worst["ibr_capacity"], over)
        per.append(row)
    return ViolationReport(counts, worst, per)
