"""Reference computations used only by the tests.

They are written from first principles and share no code with the package
beyond plain data, so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import itertools
import math

import numpy as np


# ---------------------------------------------------------------------------
# uniform-frequency block diagram, ideal IBRs, batched over parameter draws


def block_diagram_rk4(M, D, R, F, T, dPe, Mj, Dj, dt=1e-3, horizon=30.0):
    """Step response of many systems at once.

    Swing ``M f' = -dPe - D f - R (F f + y)`` and turbine ``T y' = -y + (1-F) f``;
    an ideal IBR injects ``-Mj f' - Dj f`` where ``f'`` comes straight from the
    swing equation (no numerical differentiation). Inputs are 1-D arrays of
    equal length; returns ``t``, ``f`` of shape (n_t, n) and ``p`` likewise.
    """
    M, D, R, F, T, dPe, Mj, Dj = (np.asarray(v, float) for v in (M, D, R, F, T, dPe, Mj, Dj))

    def deriv(f, y):
        fd = (-dPe - D * f - R * (F * f + y)) / M
        yd = (-y + (1.0 - F) * f) / T
        return fd, yd

    n_t = int(round(horizon / dt)) + 1
    f = np.zeros_like(M)
    y = np.zeros_like(M)
    fs = np.empty((n_t, M.size))
    ps = np.empty((n_t, M.size))
    for k in range(n_t):
        fd, _ = deriv(f, y)
        fs[k] = f
        ps[k] = -Mj * fd - Dj * f
        if k == n_t - 1:
            break
        k1 = deriv(f, y)
        k2 = deriv(f + 0.5 * dt * k1[0], y + 0.5 * dt * k1[1])
        k3 = deriv(f + 0.5 * dt * k2[0], y + 0.5 * dt * k2[1])
        k4 = deriv(f + dt * k3[0], y + dt * k3[1])
        f = f + dt / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        y = y + dt / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
    return np.arange(n_t) * dt, fs, ps


def refine_extremum(t, v, k):
    """Parabolic refinement of a sampled extremum at interior index ``k``."""
    if k <= 0 or k >= len(v) - 1:
        return float(t[k])
    a, b, c = v[k - 1], v[k], v[k + 1]
    den = a - 2 * b + c
    if den == 0:
        return float(t[k])
    return float(t[k] + 0.5 * (a - c) / den * (t[1] - t[0]))


# ---------------------------------------------------------------------------
# DC power flow


def dc_flows(buses, lines, ref, injections):
    """Line flows for a balanced injection vector (MW, ordered like ``buses``)."""
    pos = {b: k for k, b in enumerate(buses)}
    nb = len(buses)
    B = np.zeros((nb, nb))
    for f, t, x, _ in lines:
        i, j = pos[f], pos[t]
        B[i, i] += 1 / x
        B[j, j] += 1 / x
        B[i, j] -= 1 / x
        B[j, i] -= 1 / x
    keep = [k for k in range(nb) if buses[k] != ref]
    theta = np.zeros(nb)
    theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], np.asarray(injections, float)[keep])
    return np.array([(theta[pos[f]] - theta[pos[t]]) / x for f, t, x, _ in lines])


# ---------------------------------------------------------------------------
# LP by vertex enumeration (tiny problems only)


def lp_vertex_enum(c, A_ub, b_ub, lo, hi):
    """min c x s.t. A_ub x <= b_ub, lo <= x <= hi (finite bounds).

    Every vertex is the solution of n active constraints; all subsets are tried.
    Returns ``(objective, x)`` or ``(inf, None)`` when infeasible.
    """
    c = np.asarray(c, float)
    n = c.size
    rows = [np.asarray(a, float) for a in A_ub] + [e for e in np.eye(n)] + [-e for e in np.eye(n)]
    rhs = list(b_ub) + list(hi) + [-v for v in lo]
    G = np.array(rows)
    h = np.array(rhs, float)
    best, arg = math.inf, None
    for S in itertools.combinations(range(len(rows)), n):
        Gs = G[list(S)]
        if abs(np.linalg.det(Gs)) < 1e-12:
            continue
        x = np.linalg.solve(Gs, h[list(S)])
        if np.all(G @ x <= h + 1e-9 * (1 + np.abs(h))):
            v = float(c @ x)
            if v < best - 1e-12:
                best, arg = v, x
    return best, arg
