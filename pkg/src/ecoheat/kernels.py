"""Hot numeric kernels.

Every kernel exists twice: a loop form compiled with numba (``*_nb``) and a
vectorized numpy form (``*_np``).  The public name is bound to one of the two
at import time according to :mod:`ecoheat._accel`.  Both forms must agree to
floating-point round-off; the test-suite checks this directly.
"""

import math

import numpy as np
from scipy.signal import lfilter

from ._accel import USE_NUMBA, njit

# Two MPC candidates whose costs differ by less than (COST_RTOL * |P|)^2 are
# treated as tied; ties are broken by lower blower flow, then lower setpoint.
COST_RTOL = 1e-9
MDOT_ATOL = 1e-12


# ---------------------------------------------------------------------------
# per-step MPC grid solve
# ---------------------------------------------------------------------------

def _grid_solve_py(desired, t_ain, t_amb, c_p, mdot_min, mdot_max):
    n = desired.shape[0]
    g = t_ain.shape[0]
    idx = np.empty(n, dtype=np.int64)
    mdot = np.empty(n)
    cost = np.empty(n)
    m_all = np.empty(g)
    c_all = np.empty(g)
    for i in range(n):
        d = desired[i]
        for j in range(g):
            k = c_p * (t_ain[j] - t_amb)
            if k != 0.0:
                m = d / k
                if m < mdot_min:
                    m = mdot_min
                elif m > mdot_max:
                    m = mdot_max
            else:
                m = mdot_min
            r = k * m - d
            m_all[j] = m
            c_all[j] = r * r
        cmin = c_all[0]
        for j in range(1, g):
            if c_all[j] < cmin:
                cmin = c_all[j]
        scale = abs(d) if abs(d) > 1.0 else 1.0
        ctol = cmin + (COST_RTOL * scale) ** 2
        mmin = np.inf
        for j in range(g):
            if c_all[j] <= ctol and m_all[j] < mmin:
                mmin = m_all[j]
        best = 0
        for j in range(g):
            if c_all[j] <= ctol and m_all[j] <= mmin + MDOT_ATOL:
                best = j
                break
        idx[i] = best
        mdot[i] = m_all[best]
        cost[i] = c_all[best]
    return idx, mdot, cost


grid_solve_nb = njit(_grid_solve_py)


def grid_solve_np(desired, t_ain, t_amb, c_p, mdot_min, mdot_max):
    """Solve each horizon step independently over the setpoint grid.

    For every desired heating power ``desired[i]`` and every candidate vent
    temperature ``t_ain[j]`` the least-squares blower flow is closed form and
    clipped to ``[mdot_min, mdot_max]``.  Returns ``(index, mdot, cost)``.
    """
    d = desired[:, None]
    k = c_p * (t_ain[None, :] - t_amb)
    with np.errstate(divide="ignore", invalid="ignore"):
        m = np.where(k != 0.0, d / np.where(k != 0.0, k, 1.0), mdot_min)
    m = np.minimum(np.maximum(m, mdot_min), mdot_max)
    m = np.broadcast_to(m, (desired.shape[0], t_ain.shape[0]))
    r = k * m - d
    c = r * r
    cmin = c.min(axis=1)
    scale = np.maximum(np.abs(desired), 1.0)
    ok = c <= (cmin + (COST_RTOL * scale) ** 2)[:, None]
    mmin = np.where(ok, m, np.inf).min(axis=1)
    pick = ok & (m <= (mmin + MDOT_ATOL)[:, None])
    idx = np.argmax(pick, axis=1).astype(np.int64)
    rows = np.arange(desired.shape[0])
    return idx, m[rows, idx].copy(), c[rows, idx].copy()


# ---------------------------------------------------------------------------
# horizon-coupled MPC (rate penalty) by backward dynamic programming
# ---------------------------------------------------------------------------

def _dp_first_step_py(p_states, desired, p_prev, lam):
    s = p_states.shape[0]
    n = desired.shape[0]
    j_next = np.empty(s)
    for a in range(s):
        r = p_states[a] - desired[n - 1]
        j_next[a] = r * r
    j_cur = np.empty(s)
    for i in range(n - 2, -1, -1):
        for a in range(s):
            best = np.inf
            pa = p_states[a]
            for b in range(s):
                dp = p_states[b] - pa
                v = lam * dp * dp + j_next[b]
                if v < best:
                    best = v
            r = pa - desired[i]
            j_cur[a] = r * r + best
        for a in range(s):
            j_next[a] = j_cur[a]
    best = np.inf
    arg = 0
    for a in range(s):
        dp = p_states[a] - p_prev
        v = lam * dp * dp + j_next[a]
        if v < best:
            best = v
            arg = a
    return arg


dp_first_step_nb = njit(_dp_first_step_py)


def dp_first_step_np(p_states, desired, p_prev, lam):
    """First-step state of the rate-penalized horizon problem.

    ``p_states`` holds the heating power of every discrete input pair, ordered
    so that the preferred tie-break comes first.  The stage cost is
    ``(p - desired[i])**2`` and switching from state ``b`` to ``a`` costs
    ``lam * (p_a - p_b)**2``; ``p_prev`` is the power of the command in force.
    """
    dpp = p_states[None, :] - p_states[:, None]
    trans = lam * dpp * dpp
    j = (p_states - desired[-1]) ** 2
    for i in range(desired.shape[0] - 2, -1, -1):
        j = (p_states - desired[i]) ** 2 + (trans + j[None, :]).min(axis=1)
    dp0 = p_states - p_prev
    return int(np.argmin(lam * dp0 * dp0 + j))


# ---------------------------------------------------------------------------
# driver model: first-order lag plus AR(1) noise
# ---------------------------------------------------------------------------

def _driver_filter_py(target, eps, a_lag, rho, sigma, gate):
    n = target.shape[0]
    out = np.empty(n)
    if n == 0:
        return out
    lag = target[0]
    noise = sigma * eps[0]
    innov = sigma * math.sqrt(1.0 - rho * rho)
    for k in range(n):
        if k > 0:
            lag = a_lag * lag + (1.0 - a_lag) * target[k]
            noise = rho * noise + innov * eps[k]
        v = lag
        if target[k] >= gate:
            v = lag + noise
        out[k] = v if v > 0.0 else 0.0
    return out


driver_filter_nb = njit(_driver_filter_py)


def driver_filter_np(target, eps, a_lag, rho, sigma, gate):
    """Lagged tracking of ``target`` with gated, clamped AR(1) noise.

    ``a_lag`` is the per-sample pole of the lag (``exp(-dt/tau)``); noise is
    stationary with standard deviation ``sigma`` and lag-one correlation
    ``rho``, and is switched off wherever the target is below ``gate``.
    """
    n = target.shape[0]
    if n == 0:
        return np.empty(0)
    lag = lfilter([1.0 - a_lag], [1.0, -a_lag], target, zi=[a_lag * target[0]])[0]
    lag[0] = target[0]
    innov = sigma * math.sqrt(1.0 - rho * rho)
    noise = np.empty(n)
    noise[0] = sigma * eps[0]
    if n > 1:
        noise[1:] = lfilter([innov], [1.0, -rho], eps[1:], zi=[rho * noise[0]])[0]
    v = np.where(target >= gate, lag + noise, lag)
    return np.maximum(v, 0.0)


# ---------------------------------------------------------------------------
# planner rollout: change speed to a pace, hold it, find the crossing time
# ---------------------------------------------------------------------------

def _crossing_fraction(rem, v0, v1, dt):
    acc = (v1 - v0) / dt
    disc = v0 * v0 + 2.0 * acc * rem
    if disc < 0.0:
        disc = 0.0
    den = v0 + math.sqrt(disc)
    if den <= 0.0:
        return dt
    return 2.0 * rem / den


def _pace_arrival_py(v0, u, a_up, d_dn, dist, dt):
    if dist <= 0.0:
        return 0.0
    if u <= 0.0:
        return np.inf
    v = v0
    x = 0.0
    k = 0
    while True:
        if v < u:
            w = v + a_up * dt
            if w > u:
                w = u
        elif v > u:
            w = v - d_dn * dt
            if w < u:
                w = u
        else:
            w = u
        step = 0.5 * (v + w) * dt
        if x + step >= dist:
            rem = dist - x
            acc = (w - v) / dt
            disc = v * v + 2.0 * acc * rem
            if disc < 0.0:
                disc = 0.0
            den = v + math.sqrt(disc)
            tau = dt if den <= 0.0 else 2.0 * rem / den
            return k * dt + tau
        x += step
        v = w
        k += 1


pace_arrival_nb = njit(_pace_arrival_py)


def pace_speeds(v0, u, a_up, d_dn, n):
    """Speeds ``v_0..v_n`` of a constant-rate change from ``v0`` to ``u``."""
    k = np.arange(n + 1, dtype=float)
    if u >= v0:
        return np.minimum(v0 + a_up * k, u) if u > v0 else np.full(n + 1, u)
    return np.maximum(v0 - d_dn * k, u)


def pace_arrival_np(v0, u, a_up, d_dn, dist, dt):
    """Time to cover ``dist`` when moving from speed ``v0`` to pace ``u``.

    Speed changes at ``a_up``/``d_dn`` per second, is linear between samples
    spaced ``dt`` apart, and the crossing inside the last step is exact for
    that linear speed.  ``u`` must be positive.
    """
    if dist <= 0.0:
        return 0.0
    if u <= 0.0:
        return np.inf
    rate = a_up if u >= v0 else d_dn
    ramp = int(math.ceil(abs(u - v0) / (rate * dt))) + 1
    n = ramp + int(math.ceil(dist / (u * dt))) + 2
    v = pace_speeds(v0, u, a_up, d_dn, n)
    x = np.cumsum(0.5 * (v[:-1] + v[1:]) * dt)
    k = int(np.searchsorted(x, dist, side="left"))
    x_k = 0.0 if k == 0 else x[k - 1]
    return k * dt + _crossing_fraction(dist - x_k, v[k], v[k + 1], dt)


if USE_NUMBA:
    grid_solve = grid_solve_nb
    dp_first_step = dp_first_step_nb
    driver_filter = driver_filter_nb
    pace_arrival = pace_arrival_nb
else:
    grid_solve = grid_solve_np
    dp_first_step = dp_first_step_np
    driver_filter = driver_filter_np
    pace_arrival = pace_arrival_np
