"""Closed-loop experiments and paired comparisons.

One run goes traffic plan -> driver -> plant -> heating controller -> energy
accounting at a fixed 1 s step.  Comparisons pair a baseline run with an eco
run that shares corridor, ambient temperature, initial state and seed.
"""

from __future__ import annotations

import csv
import enum
import functools
import hashlib
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import hvac_control as hc
from . import kernels, plant, traffic
from .energy import IDLE_SPEED, EnergyReport, write_replay_log

RUN_HEADER = ("t_s", "v_cmd_mps", "v_mps", "T_cl_C", "T_cab_C", "soc", "engine_on",
              "P_DAHP_W", "T_sp_C", "W_bl_pct")
COMPARISON_HEADER = ("group", "T_amb_C", "seed", "E_eq_base_J", "E_eq_eco_J", "saving_pct",
                     "E_DAHE_base_J", "E_DAHE_eco_J", "idle_base_s", "idle_eco_s")
GROUPS = ("very_cold", "cold", "mild")


class Driving(str, enum.Enum):
    NORMAL = "normal"
    ECO = "eco"


class Heating(str, enum.Enum):
    CONSTANT = "constant"
    ECO = "eco"


class IncomparableScenarios(ValueError):
    pass


@dataclass(frozen=True)
class DriverParams:
    lag_time_constant: float = 1.0
    noise_std: float = 1.0
    # lag-one autocorrelation of the speed noise
    noise_corr: float = 0.9
    # no noise while the target is below this speed (standing or creeping)
    noise_gate: float = 1.0

    def __post_init__(self):
        if not self.lag_time_constant > 0:
            raise ValueError("lag_time_constant must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if not -1 < self.noise_corr < 1:
            raise ValueError("noise_corr must be in (-1, 1)")


@dataclass(frozen=True)
class Setup:
    """Everything a run needs apart from the scenario itself."""
    corridor: traffic.Corridor
    limits: traffic.PlannerLimits = traffic.PlannerLimits()
    vehicle: plant.VehicleParams = plant.VehicleParams()
    thermal: plant.ThermalParams = plant.ThermalParams()
    powertrain: plant.PowertrainParams = plant.PowertrainParams()
    hvac: hc.HvacParams = field(default_factory=hc.HvacParams)
    driver: DriverParams = DriverParams()
    long_stop_index: int = 2
    long_stop_extra_s: float = 100.0

    def with_beta(self, sched: hc.BetaSchedule) -> "Setup":
        return replace(self, hvac=replace(self.hvac, beta=sched))


@dataclass(frozen=True)
class Scenario:
    name: str = "scenario"
    driving: Driving = Driving.ECO
    heating: Heating = Heating.ECO
    T_amb: float = -11.0
    T_cab0: float = 14.0
    T_cl0: float = 85.0
    soc0: float = 0.6
    seed: int = 0
    # "base" or "long_stop"
    variant: str = "base"

    def __post_init__(self):
        object.__setattr__(self, "driving", Driving(self.driving))
        object.__setattr__(self, "heating", Heating(self.heating))
        if self.variant not in ("base", "long_stop"):
            raise ValueError(f"unknown corridor variant {self.variant!r}")
        if not 0 <= self.soc0 <= 1:
            raise ValueError("soc0 must be in [0, 1]")

    def label(self) -> str:
        return (f"{self.name}: {self.driving.value} driving, {self.heating.value} heating, "
                f"T_amb={self.T_amb:g} C, seed={self.seed}, {self.variant}")


def default_setup() -> Setup:
    from .config import load_default

    return load_default().setup


# ---------------------------------------------------------------------------
# driver
# ---------------------------------------------------------------------------

def apply_driver(target: traffic.SpeedProfile, p: DriverParams, seed: Optional[int] = 0) -> traffic.SpeedProfile:
    """Human tracking of ``target``: first-order lag plus AR(1) speed noise.

    The noise is stationary with standard deviation ``noise_std``, is muted
    while the target is below ``noise_gate``, and the result is clamped at 0.
    """
    eps = np.random.default_rng(seed).standard_normal(len(target))
    a = math.exp(-target.dt / p.lag_time_constant)
    v = kernels.driver_filter(target.speeds, eps, a, p.noise_corr, p.noise_std, p.noise_gate)
    return traffic.SpeedProfile(target.dt, v, target.origin_time)


def tracking_stats(target: traffic.SpeedProfile, actual: traffic.SpeedProfile) -> tuple[float, float]:
    """Mean absolute error and standard deviation of the tracking error [m/s]."""
    e = actual.speeds - target.speeds
    return float(np.mean(np.abs(e))), float(np.std(e))


# ---------------------------------------------------------------------------
# profiles
# ---------------------------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _planned(corridor, limits, driving, variant, stop_index, extra_s):
    if driving is Driving.ECO:
        prof = traffic.plan_eco_trajectory(corridor, limits=limits)
    else:
        prof = traffic.plan_normal_trajectory(corridor, limits=limits)
    if variant == "long_stop":
        prof = traffic.extend_stop(prof, stop_index, extra_s)
    prof.speeds.setflags(write=False)
    return prof


def planned_profile(s: Scenario, setup: Setup) -> traffic.SpeedProfile:
    return _planned(setup.corridor, setup.limits, s.driving, s.variant,
                    setup.long_stop_index, setup.long_stop_extra_s)


def long_stop_window(s: Scenario, setup: Setup) -> tuple[float, float]:
    """Start and end time of the extended stop of a long-stop scenario."""
    if s.variant != "long_stop":
        raise ValueError("scenario has no extended stop")
    prof = planned_profile(s, setup)
    i, j = traffic.stop_intervals(prof)[setup.long_stop_index]
    t = prof.times()
    return float(t[i]), float(t[j])


# ---------------------------------------------------------------------------
# closed loop
# ---------------------------------------------------------------------------

@dataclass
class RunResult:
    scenario: Scenario
    corridor_name: str
    t: np.ndarray
    v_cmd: np.ndarray
    v: np.ndarray
    T_cl: np.ndarray
    T_cab: np.ndarray
    soc: np.ndarray
    engine_on: np.ndarray
    P_DAHP: np.ndarray
    T_sp: np.ndarray
    W_bl: np.ndarray
    T_ain: np.ndarray
    mdot_bl: np.ndarray
    mdot_air: np.ndarray
    q_engine: np.ndarray
    q_radiator: np.ndarray
    q_heater: np.ndarray
    report: EnergyReport
    metadata: dict = field(default_factory=dict)

    def __len__(self):
        return self.t.size

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO() if stream is None else stream
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(RUN_HEADER)
        cols = (self.t, self.v_cmd, self.v, self.T_cl, self.T_cab, self.soc, self.engine_on,
                self.P_DAHP, self.T_sp, self.W_bl)
        for row in zip(*cols):
            w.writerow([repr(float(x)) if i != 6 else int(x) for i, x in enumerate(row)])
        return buf.getvalue() if stream is None else ""

    def replay_columns(self) -> dict:
        return {"t_s": self.t, "v_mps": self.v, "mdot_air_kgps": self.mdot_air,
                "lambda": np.ones_like(self.t), "soc": self.soc, "engine_on": self.engine_on,
                "T_ain_C": self.T_ain, "T_amb_C": np.full_like(self.t, self.scenario.T_amb),
                "mdot_bl_kgps": self.mdot_bl}

    def write_replay_log(self, stream):
        write_replay_log(stream, self.replay_columns())

    def report_dict(self) -> dict:
        s = self.scenario
        return {
            "scenario": {"name": s.name, "driving": s.driving.value, "heating": s.heating.value,
                         "T_amb_C": s.T_amb, "T_cab0_C": s.T_cab0, "T_cl0_C": s.T_cl0,
                         "soc0": s.soc0, "seed": s.seed, "variant": s.variant,
                         "corridor": self.corridor_name},
            "report": self.report.to_dict(),
            "metadata": self.metadata,
        }

    def report_json(self) -> str:
        return json.dumps(self.report_dict(), indent=2, sort_keys=True) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_csv().encode()).hexdigest()

    def idle_seconds_between(self, t0: float, t1: float) -> float:
        """Engine idle time inside ``[t0, t1]`` (interval rows ending in it)."""
        dts = np.diff(self.t)
        tk = self.t[1:]
        sel = (tk > t0) & (tk <= t1) & (self.v[1:] < IDLE_SPEED) & (self.engine_on[1:] != 0)
        return math.fsum(dts[sel])

    def coolant_closure_error(self, thermal: plant.ThermalParams) -> float:
        """Relative mismatch between stored coolant energy and integrated fluxes."""
        dts = np.diff(self.t)
        net = self.q_engine[1:] - self.q_radiator[1:] - self.q_heater[1:]
        flux = math.fsum(net * dts)
        stored = thermal.coolant_heat_capacity * (self.T_cl[-1] - self.T_cl[0])
        scale = max(math.fsum(np.abs(net) * dts), abs(stored), 1.0)
        return abs(stored - flux) / scale


def _heating_command(s, setup, state, preview, prev):
    h = setup.hvac
    if s.heating is Heating.CONSTANT:
        return hc.constant_heating()
    return hc.mpc_step(state.T_cl, s.T_amb, preview, h.mpc, h.beta, h.alpha, h.blower, prev, h.c_p)


def run_scenario(s: Scenario, setup: Optional[Setup] = None) -> RunResult:
    """Simulate one scenario; the result is a pure function of ``(s, setup)``."""
    setup = setup or default_setup()
    try:
        return _run(s, setup)
    except (traffic.InfeasibleCorridor, plant.SocOutOfRange) as exc:
        raise type(exc)(f"[{s.label()}] {exc}") from exc


def _run(s: Scenario, setup: Setup) -> RunResult:
    target = planned_profile(s, setup)
    actual = apply_driver(target, setup.driver, s.seed)
    veh, tp, pt, h = setup.vehicle, setup.thermal, setup.powertrain, setup.hvac
    dt = target.dt
    n = len(target)
    N_p = h.mpc.N_p

    cols = {k: np.zeros(n) for k in ("T_cl", "T_cab", "soc", "engine_on", "P_DAHP", "T_sp", "W_bl",
                                      "T_ain", "mdot_bl", "mdot_air", "q_engine", "q_radiator",
                                      "q_heater")}
    state = plant.PlantState(t=target.origin_time, v=float(actual.speeds[0]), T_cl=s.T_cl0,
                             T_cab=s.T_cab0, soc=s.soc0)
    cmd = hc.constant_heating()
    cols["T_cl"][0], cols["T_cab"][0], cols["soc"][0] = s.T_cl0, s.T_cab0, s.soc0
    cols["T_sp"][0], cols["W_bl"][0] = cmd.T_sp, cmd.W_bl
    cols["T_ain"][0] = s.T_amb
    idle = []
    for k in range(n - 1):
        v0, v1 = float(actual.speeds[k]), float(actual.speeds[k + 1])
        p_dem = plant.traction_power(0.5 * (v0 + v1), (v1 - v0) / dt, veh)
        cmd = _heating_command(s, setup, state, target.speeds[k:k + N_p + 1], cmd)
        t_ain = hc.vent_air_temp(cmd.T_sp, state.T_cl, h.alpha)
        mdot_bl = hc.blower_flow(cmd.W_bl, h.blower)
        p_dahp = hc.dahp(t_ain, s.T_amb, mdot_bl, h.c_p)
        q_heater = max(p_dahp, 0.0)
        q_rad = plant.radiator_heat(state.T_cl, s.T_amb, tp)

        state = plant.step_powertrain(state, p_dem, pt, dt)
        q_engine = plant.engine_heat(state.fuel_rate(pt) * pt.LHV, tp)
        state = plant.step_thermal(state, q_engine, q_heater, s.T_amb, tp, dt)
        state = replace(state, t=state.t + dt, v=v1)

        r = k + 1
        cols["T_cl"][r], cols["T_cab"][r], cols["soc"][r] = state.T_cl, state.T_cab, state.soc
        cols["engine_on"][r] = float(state.engine_on)
        cols["P_DAHP"][r], cols["T_sp"][r], cols["W_bl"][r] = p_dahp, cmd.T_sp, cmd.W_bl
        cols["T_ain"][r], cols["mdot_bl"][r] = t_ain, mdot_bl
        cols["mdot_air"][r] = state.last_mdot_air
        cols["q_engine"][r], cols["q_radiator"][r], cols["q_heater"][r] = q_engine, q_rad, q_heater
        idle.append(dt if (v1 < IDLE_SPEED and state.engine_on) else 0.0)

    report = EnergyReport.build(
        fuel_energy=state.fuel_mass * pt.LHV, soc0=s.soc0, soc_end=state.soc,
        E_batt=pt.E_batt, eta_sys=pt.eta_sys,
        E_DAHE=math.fsum(np.maximum(cols["P_DAHP"][1:], 0.0) * dt),
        idle_s=math.fsum(idle), distance=float(actual.positions()[-1]),
        duration=target.duration)
    meta = {"E_batt_J": pt.E_batt, "eta_sys": pt.eta_sys, "LHV_Jpkg": pt.LHV,
            "AFR_stoich": pt.AFR_stoich, "c_p": h.c_p, "beta_scale": h.beta.scale}
    cols["engine_on"] = cols["engine_on"].astype(np.int8)
    return RunResult(s, setup.corridor.name, target.times(), target.speeds.copy(), actual.speeds.copy(),
                     report=report, metadata=meta, **cols)


# ---------------------------------------------------------------------------
# comparisons
# ---------------------------------------------------------------------------

def ambient_group(T_amb: float) -> str:
    if T_amb <= -5.0:
        return "very_cold"
    if T_amb <= 0.0:
        return "cold"
    return "mild"


@dataclass(frozen=True)
class ComparisonRow:
    group: str
    T_amb: float
    seed: int
    E_eq_base: float
    E_eq_eco: float
    saving_pct: float
    E_DAHE_base: float
    E_DAHE_eco: float
    idle_base: float
    idle_eco: float

    @property
    def dahe_change_pct(self) -> float:
        return 100.0 * (self.E_DAHE_eco - self.E_DAHE_base) / self.E_DAHE_base if self.E_DAHE_base else 0.0

    @property
    def idle_delta(self) -> float:
        return self.idle_eco - self.idle_base

    def csv_row(self) -> list:
        return [self.group, repr(float(self.T_amb)), str(int(self.seed))] + [
            repr(float(x)) for x in (self.E_eq_base, self.E_eq_eco, self.saving_pct, self.E_DAHE_base,
                                     self.E_DAHE_eco, self.idle_base, self.idle_eco)]


def compare(a: RunResult, b: RunResult) -> ComparisonRow:
    """Saving of run ``b`` against baseline run ``a``, in percent of ``a``."""
    if a.corridor_name != b.corridor_name or a.scenario.T_amb != b.scenario.T_amb:
        raise IncomparableScenarios(
            f"cannot pair {a.scenario.label()} with {b.scenario.label()}: corridor or T_amb differ")
    ra, rb = a.report, b.report
    return ComparisonRow(ambient_group(a.scenario.T_amb), a.scenario.T_amb, a.scenario.seed,
                         ra.E_eq, rb.E_eq, 100.0 * (ra.E_eq - rb.E_eq) / ra.E_eq,
                         ra.E_DAHE, rb.E_DAHE, ra.engine_idle_seconds, rb.engine_idle_seconds)


@dataclass
class ComparisonTable:
    rows: list

    def group_means(self) -> dict:
        out = {}
        for g in GROUPS:
            vals = [r.saving_pct for r in self.rows if r.group == g]
            if vals:
                out[g] = float(np.mean(vals))
        return out

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO() if stream is None else stream
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COMPARISON_HEADER)
        for r in self.rows:
            w.writerow(r.csv_row())
        return buf.getvalue() if stream is None else ""


def pair(base: Scenario, mode: str = "heating") -> tuple[Scenario, Scenario]:
    """Baseline and eco twins of ``base``.

    ``heating`` keeps the driving of ``base`` and switches the heating;
    ``combined`` compares normal driving with constant heating against eco
    driving with eco heating; ``driving`` switches only the driving.  The two
    driving modes run on the base corridor variant, since an extended stop
    belongs to one particular speed trace.
    """
    if mode == "heating":
        return replace(base, heating=Heating.CONSTANT), replace(base, heating=Heating.ECO)
    if mode == "combined":
        b = replace(base, variant="base")
        return (replace(b, driving=Driving.NORMAL, heating=Heating.CONSTANT),
                replace(b, driving=Driving.ECO, heating=Heating.ECO))
    if mode == "driving":
        b = replace(base, variant="base")
        return replace(b, driving=Driving.NORMAL), replace(b, driving=Driving.ECO)
    raise ValueError(f"unknown comparison mode {mode!r}")


def _run_pair(args):
    a, b, setup = args
    return compare(run_scenario(a, setup), run_scenario(b, setup))


def sweep_ambient(base: Scenario, temps, repeats: int = 1, setup: Optional[Setup] = None,
                  mode: str = "heating", jobs: int = 1) -> ComparisonTable:
    temps = list(temps)
    if not temps:
        raise ValueError("temps must be non-empty")
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    setup = setup or default_setup()
    work = []
    for T in temps:
        for r in range(repeats):
            s = replace(base, T_amb=float(T), seed=base.seed + r)
            a, b = pair(s, mode)
            work.append((a, b, setup))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            rows = list(ex.map(_run_pair, work))
    else:
        rows = [_run_pair(w) for w in work]
    return ComparisonTable(rows)
