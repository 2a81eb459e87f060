"""Eco-heating controller stack.

Vent-air temperature model, discharge air heating power (DAHP), the
speed-scheduled heating multiplier, the blower PWM map, the constant-input
baseline, and the receding-horizon tracking controller that follows
``beta(v) * P_target`` with the coolant temperature frozen at its measured
value over the horizon.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels

MPH = 0.44704
C_P_AIR = 1005.0

T_SP_MIN, T_SP_MAX = 18.0, 24.0
W_BL_MIN, W_BL_MAX = 10.0, 70.0

BASELINE_T_SP = 23.0
BASELINE_W_BL = 40.0


class OutOfRange(ValueError):
    """Blower PWM command outside the actuator range."""


class RankDeficient(ValueError):
    """Vent-temperature regression is singular."""


class NoBracket(RuntimeError):
    """Heating-energy match is not reachable inside the scale bracket."""

    def __init__(self, message, gap):
        super().__init__(message)
        self.gap = gap


class DegenerateVent(RuntimeWarning):
    """Vent air is no warmer than ambient anywhere in the input box."""


@dataclass(frozen=True)
class HvacCommand:
    T_sp: float
    W_bl: float

    def __post_init__(self):
        if not T_SP_MIN <= self.T_sp <= T_SP_MAX:
            raise ValueError(f"T_sp={self.T_sp} outside [{T_SP_MIN}, {T_SP_MAX}]")
        if not W_BL_MIN <= self.W_bl <= W_BL_MAX:
            raise ValueError(f"W_bl={self.W_bl} outside [{W_BL_MIN}, {W_BL_MAX}]")


@dataclass(frozen=True)
class AlphaCoeffs:
    a1: float
    a2: float
    a3: float
    a4: float
    T_sp_floor: float = 15.0

    def as_array(self) -> np.ndarray:
        return np.array([self.a1, self.a2, self.a3, self.a4])

    def monotone_on_box(self, n: int = 25) -> bool:
        """Vent temperature is non-decreasing in setpoint and coolant temperature
        over T_sp in [18, 24], T_cl in [40, 90] (checked on an ``n``x``n`` grid)."""
        sp, cl = np.meshgrid(np.linspace(T_SP_MIN, T_SP_MAX, n), np.linspace(40.0, 90.0, n))
        d_cl = self.a2 * (sp - self.T_sp_floor)
        d_sp = self.a1 + self.a2 * cl + 2.0 * self.a3 * sp
        return bool(np.all(d_cl >= 0.0) and np.all(d_sp >= 0.0))


IDENTITY_ALPHA = AlphaCoeffs(1.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class BetaSchedule:
    breakpoints: tuple[tuple[float, float], ...]
    scale: float = 1.0

    def __post_init__(self):
        bp = tuple((float(v), float(b)) for v, b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if not bp:
            raise ValueError("beta schedule needs at least one breakpoint")
        vs = [v for v, _ in bp]
        if any(b <= a for a, b in zip(vs, vs[1:])) or vs[0] < 0:
            raise ValueError("beta breakpoints must be non-negative and strictly increasing in speed")
        if not self.scale > 0 or any(b <= 0 for _, b in bp):
            raise ValueError("beta values and scale must be positive")

    @property
    def speeds(self) -> np.ndarray:
        return np.array([v for v, _ in self.breakpoints])

    @property
    def values(self) -> np.ndarray:
        return np.array([b for _, b in self.breakpoints])

    def with_scale(self, scale: float) -> "BetaSchedule":
        return replace(self, scale=float(scale))

    def shape_violations(self) -> list[str]:
        out = []
        b0 = beta(0.0, self)
        if np.any(self.scale * self.values < b0 - 1e-12):
            out.append("beta is not lowest at standstill")
        fast = np.concatenate([[20 * MPH], self.speeds[self.speeds >= 20 * MPH]])
        if np.any(beta(fast, self) <= 1.0):
            out.append("scaled beta is not above one at 20 mph and faster")
        return out


DEFAULT_BETA = BetaSchedule(
    ((0.0, 0.4), (10 * MPH, 0.8), (20 * MPH, 1.1), (30 * MPH, 1.2), (40 * MPH, 1.25)))


@dataclass(frozen=True)
class BlowerMap:
    breakpoints: tuple[tuple[float, float], ...]

    def __post_init__(self):
        bp = tuple((float(w), float(m)) for w, m in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if len(bp) < 2:
            raise ValueError("blower map needs at least two breakpoints")
        ws = [w for w, _ in bp]
        ms = [m for _, m in bp]
        if any(b <= a for a, b in zip(ws, ws[1:])) or any(b <= a for a, b in zip(ms, ms[1:])):
            raise ValueError("blower map must be strictly increasing")
        if ws[0] > W_BL_MIN or ws[-1] < W_BL_MAX:
            raise ValueError(f"blower map must cover [{W_BL_MIN}, {W_BL_MAX}] %")
        if not np.interp(W_BL_MIN, ws, ms) > 0:
            raise ValueError("blower flow must be positive at the minimum PWM")

    @property
    def pwm(self) -> np.ndarray:
        return np.array([w for w, _ in self.breakpoints])

    @property
    def flow(self) -> np.ndarray:
        return np.array([m for _, m in self.breakpoints])

    @property
    def flow_min(self) -> float:
        return float(np.interp(W_BL_MIN, self.pwm, self.flow))

    @property
    def flow_max(self) -> float:
        return float(np.interp(W_BL_MAX, self.pwm, self.flow))

    def pwm_for_flow(self, mdot):
        """Inverse map, clipped to the actuator range."""
        w = np.interp(mdot, self.flow, self.pwm)
        return np.clip(w, W_BL_MIN, W_BL_MAX)


DEFAULT_BLOWER = BlowerMap(((10.0, 0.02), (40.0, 0.08), (70.0, 0.15)))


@dataclass(frozen=True)
class MpcConfig:
    N_p: int = 30
    dt: float = 1.0
    T_sp_grid_step: float = 0.25
    rate_penalty: float = 0.0
    # PWM grid used only when rate_penalty > 0
    W_bl_grid_step: float = 2.5

    def __post_init__(self):
        if self.N_p < 1:
            raise ValueError("N_p must be >= 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.rate_penalty < 0:
            raise ValueError("rate_penalty must be >= 0")
        for span, step, name in ((T_SP_MAX - T_SP_MIN, self.T_sp_grid_step, "T_sp_grid_step"),
                                 (W_BL_MAX - W_BL_MIN, self.W_bl_grid_step, "W_bl_grid_step")):
            if not step > 0 or abs(span / step - round(span / step)) > 1e-9:
                raise ValueError(f"{name} must divide the input range {span:g}")

    def t_sp_grid(self) -> np.ndarray:
        return np.linspace(T_SP_MIN, T_SP_MAX, int(round((T_SP_MAX - T_SP_MIN) / self.T_sp_grid_step)) + 1)

    def w_bl_grid(self) -> np.ndarray:
        return np.linspace(W_BL_MIN, W_BL_MAX, int(round((W_BL_MAX - W_BL_MIN) / self.W_bl_grid_step)) + 1)


@dataclass(frozen=True)
class HvacParams:
    alpha: AlphaCoeffs = IDENTITY_ALPHA
    beta: BetaSchedule = DEFAULT_BETA
    blower: BlowerMap = DEFAULT_BLOWER
    mpc: MpcConfig = field(default_factory=MpcConfig)
    c_p: float = C_P_AIR


def vent_air_temp(T_sp, T_cl, alpha: AlphaCoeffs):
    return (alpha.a1 * T_sp + alpha.a2 * (T_sp - alpha.T_sp_floor) * T_cl
            + alpha.a3 * T_sp * T_sp + alpha.a4)


def dahp(T_ain, T_amb, mdot_bl, c_p: float = C_P_AIR):
    """Discharge air heating power in fresh-air mode [W]."""
    if np.any(np.asarray(mdot_bl) < 0):
        raise ValueError("mdot_bl must be >= 0")
    return c_p * (T_ain - T_amb) * mdot_bl


def beta(v, sched: BetaSchedule):
    if np.any(np.asarray(v) < 0):
        raise ValueError("speed must be >= 0")
    out = sched.scale * np.interp(v, sched.speeds, sched.values)
    return float(out) if np.ndim(out) == 0 else out


def blower_flow(W_bl, bmap: BlowerMap = DEFAULT_BLOWER):
    w = np.asarray(W_bl, dtype=float)
    if np.any(w < W_BL_MIN) or np.any(w > W_BL_MAX):
        raise OutOfRange(f"blower PWM {W_bl} outside [{W_BL_MIN}, {W_BL_MAX}] %")
    out = np.interp(w, bmap.pwm, bmap.flow)
    return float(out) if out.ndim == 0 else out


def constant_heating() -> HvacCommand:
    return HvacCommand(BASELINE_T_SP, BASELINE_W_BL)


def target_dahp(T_cl, T_amb, alpha: AlphaCoeffs, bmap: BlowerMap = DEFAULT_BLOWER,
                c_p: float = C_P_AIR) -> float:
    """Heating power the constant-input baseline would deliver right now."""
    cmd = constant_heating()
    return dahp(vent_air_temp(cmd.T_sp, T_cl, alpha), T_amb, blower_flow(cmd.W_bl, bmap), c_p)


def command_dahp(cmd: HvacCommand, T_cl, T_amb, alpha: AlphaCoeffs,
                 bmap: BlowerMap = DEFAULT_BLOWER, c_p: float = C_P_AIR) -> float:
    return dahp(vent_air_temp(cmd.T_sp, T_cl, alpha), T_amb, blower_flow(cmd.W_bl, bmap), c_p)


@dataclass
class MpcSolution:
    command: HvacCommand
    target: float
    desired: np.ndarray
    delivered: float
    degenerate: bool = False


def _preview_array(speed_preview, n: int) -> np.ndarray:
    v = np.asarray(getattr(speed_preview, "speeds", speed_preview), dtype=float).ravel()
    if v.size == 0:
        raise ValueError("speed preview must have at least one sample")
    if v.size >= n:
        return v[:n]
    return np.concatenate([v, np.full(n - v.size, v[-1])])


def solve_mpc(T_cl_meas: float, T_amb: float, speed_preview, cfg: MpcConfig,
              sched: BetaSchedule, alpha: AlphaCoeffs, bmap: BlowerMap = DEFAULT_BLOWER,
              prev_cmd: Optional[HvacCommand] = None, c_p: float = C_P_AIR) -> MpcSolution:
    """Solve the horizon problem and return the first-step command with diagnostics.

    The stage cost is ``(P_DAHP(i) - beta(v_i) * P_target)**2`` for ``i = 0..N_p``
    with the coolant temperature held at ``T_cl_meas``.  A preview shorter than
    ``N_p + 1`` samples is padded with its last value.
    """
    if not math.isfinite(T_cl_meas):
        raise ValueError("T_cl_meas must be finite")
    v = _preview_array(speed_preview, cfg.N_p + 1)
    p_target = target_dahp(T_cl_meas, T_amb, alpha, bmap, c_p)
    desired = beta(v, sched) * p_target
    grid = cfg.t_sp_grid()
    t_ain = vent_air_temp(grid, T_cl_meas, alpha)

    if np.all(t_ain <= T_amb):
        warnings.warn(DegenerateVent(
            f"vent air {t_ain.max():.2f} C cannot exceed ambient {T_amb:.2f} C"), stacklevel=2)
        cmd = HvacCommand(T_SP_MIN, W_BL_MIN)
        return MpcSolution(cmd, p_target, desired,
                           command_dahp(cmd, T_cl_meas, T_amb, alpha, bmap, c_p), True)

    if cfg.rate_penalty == 0.0:
        idx, mdot, _ = kernels.grid_solve(desired, t_ain, float(T_amb), float(c_p),
                                          bmap.flow_min, bmap.flow_max)
        cmd = HvacCommand(float(grid[idx[0]]), float(bmap.pwm_for_flow(mdot[0])))
    else:
        w_grid = cfg.w_bl_grid()
        flows = blower_flow(w_grid, bmap)
        # flow-major ordering so the first minimizer has the lowest flow, then setpoint
        p_states = (c_p * (t_ain[None, :] - T_amb) * flows[:, None]).ravel()
        prev = prev_cmd or constant_heating()
        p_prev = command_dahp(prev, T_cl_meas, T_amb, alpha, bmap, c_p)
        k = kernels.dp_first_step(p_states, desired, float(p_prev), float(cfg.rate_penalty))
        m, j = divmod(int(k), grid.size)
        cmd = HvacCommand(float(grid[j]), float(w_grid[m]))
    return MpcSolution(cmd, p_target, desired,
                       command_dahp(cmd, T_cl_meas, T_amb, alpha, bmap, c_p))


def mpc_step(T_cl_meas: float, T_amb: float, speed_preview, cfg: MpcConfig,
             sched: BetaSchedule, alpha: AlphaCoeffs, bmap: BlowerMap = DEFAULT_BLOWER,
             prev_cmd: Optional[HvacCommand] = None, c_p: float = C_P_AIR) -> HvacCommand:
    return solve_mpc(T_cl_meas, T_amb, speed_preview, cfg, sched, alpha, bmap, prev_cmd, c_p).command


# ---------------------------------------------------------------------------
# identification and calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AlphaFit:
    coeffs: AlphaCoeffs
    rms: float
    n: int


def _alpha_design(T_sp, T_cl, floor):
    return np.column_stack([T_sp, (T_sp - floor) * T_cl, T_sp * T_sp, np.ones_like(T_sp)])


def fit_alpha(samples: Sequence[Sequence[float]], T_sp_floor: float = 15.0) -> AlphaFit:
    """Least-squares vent-temperature coefficients from ``(T_sp, T_cl, T_ain)`` rows."""
    data = np.asarray(samples, dtype=float).reshape(-1, 3)
    X = _alpha_design(data[:, 0], data[:, 1], T_sp_floor)
    if data.shape[0] < 4 or np.linalg.matrix_rank(X) < 4:
        raise RankDeficient(f"{data.shape[0]} samples do not determine four coefficients")
    coef, *_ = np.linalg.lstsq(X, data[:, 2], rcond=None)
    resid = X @ coef - data[:, 2]
    return AlphaFit(AlphaCoeffs(*map(float, coef), T_sp_floor=T_sp_floor),
                    float(np.sqrt(np.mean(resid ** 2))), data.shape[0])


ALPHA_SAMPLES_HEADER = ("T_sp_C", "T_cl_C", "T_ain_C")


def synthetic_alpha_samples(alpha: AlphaCoeffs, n: int = 200, sigma: float = 0.5, seed: int = 0) -> np.ndarray:
    """Vent temperature readings drawn uniformly over the operating box plus Gaussian noise."""
    rng = np.random.default_rng(seed)
    sp = rng.uniform(T_SP_MIN, T_SP_MAX, n)
    cl = rng.uniform(40.0, 90.0, n)
    return np.column_stack([sp, cl, vent_air_temp(sp, cl, alpha) + sigma * rng.standard_normal(n)])


def write_alpha_samples(stream, samples):
    stream.write(",".join(ALPHA_SAMPLES_HEADER) + "\n")
    for row in np.asarray(samples, dtype=float):
        stream.write(",".join(repr(float(x)) for x in row) + "\n")


def read_alpha_samples(stream) -> np.ndarray:
    lines = [ln.strip() for ln in stream if ln.strip()]
    if not lines or tuple(c.strip() for c in lines[0].split(",")) != ALPHA_SAMPLES_HEADER:
        raise ValueError("alpha samples must start with header " + ",".join(ALPHA_SAMPLES_HEADER))
    rows = []
    for k, ln in enumerate(lines[1:], start=2):
        parts = ln.split(",")
        if len(parts) != 3:
            raise ValueError(f"line {k}: expected 3 columns, got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise ValueError(f"line {k}: non-numeric value") from None
    return np.array(rows).reshape(-1, 3)


def dahe_gap(sched: BetaSchedule, scenarios, setup=None) -> float:
    """Relative E_DAHE gap, eco heating against constant heating, over ``scenarios``."""
    eco, base = _mean_dahe(sched, scenarios, setup)
    return eco / base - 1.0


def _mean_dahe(sched, scenarios, setup):
    from . import harness

    setup = setup or harness.default_setup()
    eco_setup = setup.with_beta(sched)
    eco, base = [], []
    for s in scenarios:
        eco.append(harness.run_scenario(replace(s, heating=harness.Heating.ECO), eco_setup).report.E_DAHE)
        base.append(harness.run_scenario(replace(s, heating=harness.Heating.CONSTANT), setup).report.E_DAHE)
    return float(np.mean(eco)), float(np.mean(base))


def calibrate_beta(base_schedule: BetaSchedule, scenarios, setup=None, lo: float = 0.5,
                   hi: float = 2.0, rel_tol: float = 0.01, max_iter: int = 50) -> BetaSchedule:
    """Rescale ``base_schedule`` so eco heating delivers the baseline E_DAHE on average.

    The breakpoint shape is kept; only ``scale`` is searched by bisection on
    ``[lo, hi]``.  The current scale is returned unchanged when it already
    matches within ``rel_tol``.
    """
    scenarios = list(scenarios)
    if not scenarios:
        raise ValueError("calibration needs at least one scenario")
    from . import harness

    setup = setup or harness.default_setup()
    base = float(np.mean([harness.run_scenario(replace(s, heating=harness.Heating.CONSTANT), setup)
                          .report.E_DAHE for s in scenarios]))

    def gap(scale):
        eco_setup = setup.with_beta(base_schedule.with_scale(scale))
        eco = np.mean([harness.run_scenario(replace(s, heating=harness.Heating.ECO), eco_setup)
                       .report.E_DAHE for s in scenarios])
        return float(eco) / base - 1.0

    g0 = gap(base_schedule.scale)
    if abs(g0) <= rel_tol:
        return base_schedule
    g_lo, g_hi = gap(lo), gap(hi)
    if abs(g_lo) <= rel_tol:
        return base_schedule.with_scale(lo)
    if abs(g_hi) <= rel_tol:
        return base_schedule.with_scale(hi)
    if g_lo * g_hi > 0:
        best = min(g_lo, g_hi, key=abs)
        raise NoBracket(f"E_DAHE gap keeps its sign on [{lo}, {hi}]; closest gap {best:+.2%}", best)
    a, b = lo, hi
    g_a = g_lo
    for _ in range(max_iter):
        mid = 0.5 * (a + b)
        g_mid = gap(mid)
        if abs(g_mid) <= rel_tol / 4:
            return base_schedule.with_scale(mid)
        if (g_mid < 0) == (g_a < 0):
            a, g_a = mid, g_mid
        else:
            b = mid
    if abs(g_mid) <= rel_tol:
        return base_schedule.with_scale(mid)
    raise NoBracket(f"bisection stalled with gap {g_mid:+.2%}", g_mid)
