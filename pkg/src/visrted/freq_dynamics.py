"""Uniform-frequency model of an IBR-penetrated system.

Closed-form frequency and IBR power step responses, their extrema, an
independent RK4 state-space oracle, and a second-order stability test.

Sign convention: ``dPe > 0`` is a net load increase. It drives the frequency
deviation negative and the IBR power response positive.
All quantities are per unit on ``system_mva`` unless noted.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

__all__ = [
    "SgParams",
    "IbrParams",
    "SyntheticParams",
    "FreqMetrics",
    "PowerMetrics",
    "OracleTrace",
    "OverdampedError",
    "aggregate_params",
    "freq_at",
    "freq_metrics",
    "power_at",
    "power_metrics",
    "oracle_trace",
    "stability_check",
]


class OverdampedError(ValueError):
    """Raised when a closed form is requested for zeta >= 1."""


@dataclass(frozen=True)
class SgParams:
    id: str
    inertia_M: float
    damping_D: float
    gain_K: float
    droop_R: float
    fraction_F: float
    turbine_T: float
    mva_base: float

    def __post_init__(self):
        bad = []
        if not self.inertia_M >= 0:
            bad.append("inertia_M must be >= 0")
        if not self.droop_R > 0:
            bad.append("droop_R must be > 0")
        if not 0 <= self.fraction_F <= 1:
            bad.append("fraction_F must lie in [0, 1]")
        if not self.turbine_T > 0:
            bad.append("turbine_T must be > 0")
        if not self.mva_base > 0:
            bad.append("mva_base must be > 0")
        if bad:
            raise ValueError(f"SG {self.id}: " + "; ".join(bad))


@dataclass(frozen=True)
class IbrParams:
    id: str
    virtual_M: float
    virtual_D: float
    lag_T_ibr: float
    mva_base: float
    m_bounds: tuple = (0.0, 8.0)
    d_bounds: tuple = (0.0, 6.0)
    default_M: float = 0.0
    default_D: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "m_bounds", tuple(float(v) for v in self.m_bounds))
        object.__setattr__(self, "d_bounds", tuple(float(v) for v in self.d_bounds))
        bad = []
        for name, (lo, hi), val in (
            ("M", self.m_bounds, self.virtual_M),
            ("D", self.d_bounds, self.virtual_D),
        ):
            if not 0 <= lo <= hi:
                bad.append(f"{name} bounds must satisfy 0 <= min <= max, got [{lo}, {hi}]")
            elif not lo - 1e-12 <= val <= hi + 1e-12:
                bad.append(f"virtual_{name}={val} outside [{lo}, {hi}]")
        if not self.lag_T_ibr >= 0:
            bad.append("lag_T_ibr must be >= 0")
        if not self.mva_base > 0:
            bad.append("mva_base must be > 0")
        if bad:
            raise ValueError(f"IBR {self.id}: " + "; ".join(bad))

    def with_md(self, M: float, D: float) -> "IbrParams":
        return replace(self, virtual_M=float(M), virtual_D=float(D))


@dataclass(frozen=True)
class SyntheticParams:
    """Aggregate second-order system parameters.

    ``F_agg`` is the governor-gain-weighted HP fraction; the damping term of
    the characteristic polynomial uses ``R_agg * F_agg``.
    """

    M: float
    D: float
    R_agg: float
    F_agg: float
    T: float
    w_n: float
    zeta: float
    w_d: float
    f0: float = 60.0
    system_mva: float = 100.0

    @classmethod
    def from_aggregate(cls, M, D, R_agg, F_agg, T, f0=60.0, system_mva=100.0):
        M, D, R_agg, F_agg, T = map(float, (M, D, R_agg, F_agg, T))
        mt = M * T
        if mt > 0 and D + R_agg > 0:
            w_n = math.sqrt((D + R_agg) / mt)
            zeta = (M + T * (D + R_agg * F_agg)) / (2.0 * math.sqrt(mt * (D + R_agg)))
        else:
            w_n = zeta = math.nan
        w_d = math.sqrt(1.0 - zeta**2) * w_n if zeta < 1 else math.nan
        return cls(M, D, R_agg, F_agg, T, w_n, zeta, w_d, float(f0), float(system_mva))

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


@dataclass(frozen=True)
class FreqMetrics:
    t_nadir: float
    delta_f_nadir: float
    rocof0: float
    delta_f_ss: float
    eta: float
    phi: float

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


@dataclass(frozen=True)
class PowerMetrics:
    t_peak: float
    delta_p_max: float
    delta_p_ss: float
    alpha_scaled: float
    beta_scaled: float
    eta_p: float
    phi_p: float

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _jsonable(d: dict) -> dict:
    return {k: (v if not isinstance(v, float) or math.isfinite(v) else None) for k, v in d.items()}


def aggregate_params(
    sgs: Sequence[SgParams],
    ibrs: Sequence[IbrParams],
    system_mva: float = 100.0,
    f0: float = 60.0,
) -> SyntheticParams:
    """Capacity-weighted aggregation of unit parameters onto ``system_mva``."""
    if not sgs:
        raise ValueError("no synchronous source")
    T = sgs[0].turbine_T
    if any(abs(sg.turbine_T - T) > 1e-9 for sg in sgs):
        raise ValueError("heterogeneous turbine constants")
    M = D = R_agg = KF = 0.0
    for sg in sgs:
        w = sg.mva_base / system_mva
        M += w * sg.inertia_M
        D += w * sg.damping_D
        g = w * sg.gain_K / sg.droop_R
        R_agg += g
        KF += g * sg.fraction_F
    for ibr in ibrs:
        w = ibr.mva_base / system_mva
        M += w * ibr.virtual_M
        D += w * ibr.virtual_D
    F_agg = KF / R_agg if R_agg > 0 else 0.0
    return SyntheticParams.from_aggregate(M, D, R_agg, F_agg, T, f0, system_mva)


# ---------------------------------------------------------------------------
# closed forms (vectorised kernels; scalar wrappers below)


def _check_underdamped(p: SyntheticParams):
    if not (p.zeta < 1):
        raise OverdampedError(f"overdamped: closed form unsupported (zeta={p.zeta})")


def second_order(M, D, R_agg, F_agg, T):
    """Return ``(w_n, zeta, w_d)`` arrays; ``w_d`` is NaN where zeta >= 1."""
    M, D, R_agg, F_agg, T = np.broadcast_arrays(*map(np.asarray, (M, D, R_agg, F_agg, T)))
    w_n = np.sqrt((D + R_agg) / (M * T))
    zeta = (M + T * (D + R_agg * F_agg)) / (2.0 * np.sqrt(M * T * (D + R_agg)))
    with np.errstate(invalid="ignore"):
        w_d = np.sqrt(1.0 - zeta**2) * w_n
    return w_n, zeta, w_d


def _freq_shape(w_n, zeta, w_d, T):
    # eta and phi of the frequency response; phi in (0, pi)
    eta = np.sqrt((1.0 - 2.0 * T * w_n * zeta + T**2 * w_n**2) / (1.0 - zeta**2))
    phi = np.arctan2(w_d, zeta * w_n - T * w_n**2)
    return eta, phi


def freq_kernel(M, D, R_agg, F_agg, T, dPe, t):
    w_n, zeta, w_d = second_order(M, D, R_agg, F_agg, T)
    eta, phi = _freq_shape(w_n, zeta, w_d, T)
    scale = dPe / (M * T * w_n**2)
    g = 1.0 - eta * np.exp(-zeta * w_n * t) * np.sin(w_d * t + phi)
    return -scale * g


def nadir_kernel(M, D, R_agg, F_agg, T, dPe):
    """Return ``(t_nadir, delta_f_nadir)`` for arrays of parameters."""
    w_n, zeta, w_d = second_order(M, D, R_agg, F_agg, T)
    # first positive root of the derivative; T*w_d > 0 keeps the angle in (0, pi)
    t_m = np.mod(np.arctan2(T * w_d, zeta * T * w_n - 1.0), np.pi) / w_d
    return t_m, freq_kernel(M, D, R_agg, F_agg, T, dPe, t_m)


def _power_coeffs(M, D, R_agg, F_agg, T, Mj, Dj):
    w_n, zeta, w_d = second_order(M, D, R_agg, F_agg, T)
    a = zeta * w_n
    # alpha*D_ibr and beta*D_ibr: polynomial in (Mj, Dj), regular at Dj = 0
    alpha_s = Dj - Mj * T * w_n**2
    beta_s = -Dj * T * w_n**2 + 2.0 * zeta * w_n * Dj - Mj * w_n**2
    c_sin = (beta_s - a * alpha_s) / w_d
    return w_n, zeta, w_d, alpha_s, beta_s, c_sin


def power_kernel(M, D, R_agg, F_agg, T, Mj, Dj, dPe, t):
    w_n, zeta, w_d, alpha_s, _, c_sin = _power_coeffs(M, D, R_agg, F_agg, T, Mj, Dj)
    scale = dPe / (M * T * w_n**2)
    decay = np.exp(-zeta * w_n * t)
    return scale * (Dj - decay * (alpha_s * np.cos(w_d * t) + c_sin * np.sin(w_d * t)))


def peak_kernel(M, D, R_agg, F_agg, T, Mj, Dj, dPe):
    """Return ``(t_peak, delta_p_max)``; the extremum has the sign of ``dPe``."""
    args = np.broadcast_arrays(*map(np.asarray, (M, D, R_agg, F_agg, T, Mj, Dj, dPe)))
    M, D, R_agg, F_agg, T, Mj, Dj, dPe = (np.asarray(a, dtype=float) for a in args)
    w_n, zeta, w_d, alpha_s, beta_s, _ = _power_coeffs(M, D, R_agg, F_agg, T, Mj, Dj)
    num = (beta_s - 2.0 * zeta * alpha_s * w_n) * w_d
    den = zeta * beta_s * w_n - zeta**2 * w_n**2 * alpha_s + alpha_s * w_d**2
    t1 = np.mod(np.arctan2(num, den), np.pi) / w_d
    t2 = t1 + np.pi / w_d
    mag = np.abs(dPe)
    cands = np.stack([np.zeros_like(t1), t1, t2])
    vals = np.stack(
        [power_kernel(M, D, R_agg, F_agg, T, Mj, Dj, mag, c) for c in cands]
    )
    k = np.argmax(vals, axis=0)
    t_peak = np.take_along_axis(cands, k[None], 0)[0]
    p_max = np.take_along_axis(vals, k[None], 0)[0]
    silent = (Mj == 0) & (Dj == 0)
    t_peak = np.where(silent, 0.0, t_peak)
    p_max = np.where(silent, 0.0, p_max)
    return t_peak, np.sign(dPe) * p_max


def _ibr_sys(p: SyntheticParams, ibr: IbrParams):
    w = ibr.mva_base / p.system_mva
    return w * ibr.virtual_M, w * ibr.virtual_D


def freq_at(p: SyntheticParams, dPe: float, t: float) -> float:
    """Frequency deviation (p.u.) at time ``t`` after a step ``dPe``."""
    _check_underdamped(p)
    if t < 0:
        raise ValueError("t must be >= 0")
    if dPe == 0:
        return 0.0
    return float(freq_kernel(p.M, p.D, p.R_agg, p.F_agg, p.T, dPe, t))


def freq_metrics(p: SyntheticParams, dPe: float) -> FreqMetrics:
    _check_underdamped(p)
    if not math.isfinite(dPe):
        raise ValueError("dPe must be finite")
    eta, phi = _freq_shape(p.w_n, p.zeta, p.w_d, p.T)
    t_m, nadir = nadir_kernel(p.M, p.D, p.R_agg, p.F_agg, p.T, dPe)
    return FreqMetrics(
        t_nadir=float(t_m),
        delta_f_nadir=float(nadir) if dPe else 0.0,
        rocof0=-dPe / p.M,
        delta_f_ss=-dPe / (p.M * p.T * p.w_n**2),
        eta=float(eta),
        phi=float(phi),
    )


def power_at(p: SyntheticParams, ibr: IbrParams, dPe: float, t: float) -> float:
    """IBR power deviation (p.u. on ``system_mva``) at time ``t``.

    IBR lag is neglected here, so at ``t = 0`` this returns the post-step
    value ``dPe * M_ibr / M``.
    """
    _check_underdamped(p)
    if t < 0:
        raise ValueError("t must be >= 0")
    Mj, Dj = _ibr_sys(p, ibr)
    if dPe == 0 or (Mj == 0 and Dj == 0):
        return 0.0
    return float(power_kernel(p.M, p.D, p.R_agg, p.F_agg, p.T, Mj, Dj, dPe, t))


def power_metrics(p: SyntheticParams, ibr: IbrParams, dPe: float) -> PowerMetrics:
    _check_underdamped(p)
    Mj, Dj = _ibr_sys(p, ibr)
    _, _, w_d, alpha_s, beta_s, c_sin = _power_coeffs(p.M, p.D, p.R_agg, p.F_agg, p.T, Mj, Dj)
    alpha_s, beta_s, c_sin = float(alpha_s), float(beta_s), float(c_sin)
    t_peak, p_max = peak_kernel(p.M, p.D, p.R_agg, p.F_agg, p.T, Mj, Dj, dPe)
    eta_p = math.hypot(alpha_s, c_sin) / abs(alpha_s) if alpha_s else math.inf
    return PowerMetrics(
        t_peak=float(t_peak),
        delta_p_max=float(p_max) if dPe else 0.0,
        delta_p_ss=dPe * Dj / (p.M * p.T * p.w_n**2),
        alpha_scaled=alpha_s,
        beta_scaled=beta_s,
        eta_p=eta_p,
        phi_p=math.atan2(alpha_s, c_sin),
    )


def stability_check(p: SyntheticParams) -> bool:
    """Both roots of s^2 + 2 zeta w_n s + w_n^2 in the open left half-plane."""
    if not (p.M > 0 and p.T > 0 and p.D + p.R_agg > 0):
        return False
    zeta = (p.M + p.T * (p.D + p.R_agg * p.F_agg)) / (2.0 * math.sqrt(p.M * p.T * (p.D + p.R_agg)))
    return zeta > 0


# ---------------------------------------------------------------------------
# RK4 oracle


@dataclass
class OracleTrace:
    t: np.ndarray
    delta_f: np.ndarray
    p_ibr: np.ndarray  # (n_t, n_ibr)
    ibr_ids: list = field(default_factory=list)


def state_space(p: SyntheticParams, ibrs: Sequence[IbrParams], ideal_ibr: bool = False):
    """State-space realisation ``x' = A x + B dPe``, ``P_ibr = C x + E dPe``.

    States: frequency deviation, aggregate governor/turbine state, then one
    lag state per IBR (omitted when ``ideal_ibr``; the IBR inertia then sits
    in the swing equation and IBR power is an output of the state derivative).
    """
    n_ibr = len(ibrs)
    Ms = np.array([_ibr_sys(p, b)[0] for b in ibrs])
    Ds = np.array([_ibr_sys(p, b)[1] for b in ibrs])
    R, F, T = p.R_agg, p.F_agg, p.T
    if ideal_ibr:
        Msw, Dsw = p.M, p.D
    else:
        Msw, Dsw = p.M - Ms.sum(), p.D - Ds.sum()
        if Msw <= 0:
            raise ValueError("lagged IBR realisation needs positive synchronous inertia")
        if any(b.lag_T_ibr <= 0 for b in ibrs):
            raise ValueError("lag_T_ibr must be > 0 unless ideal_ibr")
    n = 2 + (0 if ideal_ibr else n_ibr)
    A = np.zeros((n, n))
    B = np.zeros(n)
    # swing: Msw f' = -dPe - Dsw f - R (F f + y) + sum P_j
    A[0, 0] = (-Dsw - R * F) / Msw
    A[0, 1] = -R / Msw
    B[0] = -1.0 / Msw
    # governor/turbine: T y' = -y + (1 - F) f
    A[1, 0] = (1.0 - F) / T
    A[1, 1] = -1.0 / T
    C = np.zeros((n_ibr, n))
    E = np.zeros(n_ibr)
    if ideal_ibr:
        for j in range(n_ibr):
            C[j] = -Ms[j] * A[0] - Ds[j] * np.eye(n)[0]
            E[j] = -Ms[j] * B[0]
    else:
        for j, b in enumerate(ibrs):
            Tj = b.lag_T_ibr
            k = 2 + j
            # P_j = -(M_j/T_j) f + x_j ;  T_j x_j' = -x_j - (D_j - M_j/T_j) f
            C[j, 0] = -Ms[j] / Tj
            C[j, k] = 1.0
            A[0] += C[j] / Msw
            A[k, 0] = -(Ds[j] - Ms[j] / Tj) / Tj
            A[k, k] = -1.0 / Tj
    return A, B, C, E


def rk4_step_matrices(A: np.ndarray, B: np.ndarray, h: float):
    """One classical RK4 step for ``x' = A x + B u`` with ``u`` held constant."""
    n = A.shape[0]
    aug = np.zeros((n + 1, n + 1))
    aug[:n, :n] = A
    aug[:n, n] = B
    hA = h * aug
    term = np.eye(n + 1)
    phi = np.eye(n + 1)
    for k in range(1, 5):
        term = term @ hA / k
        phi = phi + term
    return phi[:n, :n], phi[:n, n]


def oracle_trace(
    p: SyntheticParams,
    ibrs: Sequence[IbrParams],
    dPe: float,
    dt: float = 1e-4,
    horizon: float | None = None,
    ideal_ibr: bool = False,
    record_every: int = 1,
) -> OracleTrace:
    """Fixed-step RK4 step response of the block diagram.

    The step is applied at ``t = 0``; samples report post-step values.
    ``ibrs`` must be the IBRs already aggregated into ``p``.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    if horizon is None:
        horizon = 50.0 / (p.zeta * p.w_n)
    nsteps = int(math.ceil(horizon / dt - 1e-9))
    A, B, C, E = state_space(p, ibrs, ideal_ibr)
    Phi, Gam = rk4_step_matrices(A, B, dt)
    if record_every > 1:
        Phi_r, Gam_r = np.eye(len(B)), np.zeros(len(B))
        for _ in range(record_every):
            Phi_r, Gam_r = Phi @ Phi_r, Phi @ Gam_r + Gam
        Phi, Gam = Phi_r, Gam_r
        nsteps = int(math.ceil(nsteps / record_every))
    Gam = Gam * dPe
    xs = np.empty((nsteps + 1, len(B)))
    x = np.zeros(len(B))
    xs[0] = x
    for k in range(1, nsteps + 1):
        x = Phi @ x + Gam
        xs[k] = x
    if not np.all(np.isfinite(xs)):
        bad = int(np.argmax(~np.isfinite(xs).all(axis=1)))
        raise FloatingPointError(f"oracle diverged at t={bad * dt * record_every:.6g}s")
    t = np.arange(nsteps + 1) * dt * record_every
    p_ibr = xs @ C.T + E * dPe
    return OracleTrace(t=t, delta_f=xs[:, 0].copy(), p_ibr=p_ibr, ibr_ids=[b.id for b in ibrs])
