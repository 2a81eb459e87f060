"""Lumped power-split HEV plant.

Longitudinal power demand, a rule-based engine on/off surrogate, battery SOC,
fuel integration, and a two-node thermal model (engine coolant and cabin air)
integrated with explicit Euler.
"""

from __future__ import annotations

from dataclasses import dataclass, replace


class SocOutOfRange(Exception):
    """Battery state of charge left [0, 1]; the scenario is mis-sized."""


@dataclass(frozen=True)
class VehicleParams:
    mass: float = 1530.0
    A: float = 130.0
    B: float = 1.2
    C: float = 0.42
    driveline_eff: float = 0.9
    regen_fraction: float = 0.5
    regen_power_limit: float = 20e3

    def __post_init__(self):
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if self.A < 0 or self.B < 0 or self.C < 0:
            raise ValueError("road-load coefficients must be non-negative")
        if not 0 < self.driveline_eff <= 1:
            raise ValueError("driveline_eff must be in (0, 1]")
        if not 0 <= self.regen_fraction <= 1:
            raise ValueError("regen_fraction must be in [0, 1]")
        if self.regen_power_limit < 0:
            raise ValueError("regen_power_limit must be >= 0")


@dataclass(frozen=True)
class ThermalParams:
    coolant_heat_capacity: float = 60e3
    cabin_heat_capacity: float = 80e3
    cabin_UA: float = 40.0
    radiator_UA: float = 300.0
    thermostat_open: float = 80.0
    engine_heat_fraction: float = 0.30

    def __post_init__(self):
        for name in ("coolant_heat_capacity", "cabin_heat_capacity", "cabin_UA", "radiator_UA"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.engine_heat_fraction <= 1:
            raise ValueError("engine_heat_fraction must be in [0, 1]")


@dataclass(frozen=True)
class PowertrainParams:
    E_batt: float = 4.32e6
    soc_min: float = 0.40
    soc_max: float = 0.80
    engine_on_power: float = 4e3
    T_cl_idle_on: float = 50.0
    T_cl_idle_off: float = 65.0
    eta_eng: float = 0.36
    eta_sys: float = 0.30
    LHV: float = 44.0e6
    AFR_stoich: float = 14.7
    idle_fuel_rate: float = 0.4e-3
    idle_charge_power: float = 2e3

    def __post_init__(self):
        if not self.E_batt > 0:
            raise ValueError("E_batt must be positive")
        if not 0 <= self.soc_min < self.soc_max <= 1:
            raise ValueError("need 0 <= soc_min < soc_max <= 1")
        if not self.T_cl_idle_on < self.T_cl_idle_off:
            raise ValueError("need T_cl_idle_on < T_cl_idle_off")
        for name in ("eta_eng", "eta_sys"):
            if not 0 < getattr(self, name) <= 1:
                raise ValueError(f"{name} must be in (0, 1]")
        if not (self.LHV > 0 and self.AFR_stoich > 0):
            raise ValueError("LHV and AFR_stoich must be positive")
        if self.idle_fuel_rate < 0 or self.idle_charge_power < 0 or self.engine_on_power < 0:
            raise ValueError("idle_fuel_rate, idle_charge_power, engine_on_power must be >= 0")


@dataclass(frozen=True)
class PlantState:
    t: float
    v: float
    T_cl: float
    T_cab: float
    soc: float
    engine_on: bool = False
    fuel_mass: float = 0.0
    last_mdot_air: float = 0.0
    # latched coolant request: engine kept running for heat until T_cl_idle_off
    heat_hold: bool = False

    def fuel_rate(self, pt: PowertrainParams) -> float:
        """Fuel mass flow of the last step, from the stoichiometric air flow."""
        return self.last_mdot_air / pt.AFR_stoich


def traction_power(v: float, a: float, p: VehicleParams) -> float:
    """Battery/engine-side traction power; negative values are recovered power."""
    if v <= 0.0:
        return 0.0
    force = p.A + p.B * v + p.C * v * v + p.mass * a
    wheel = force * v
    if wheel >= 0.0:
        return wheel / p.driveline_eff
    return max(wheel * p.regen_fraction, -p.regen_power_limit)


def engine_heat(fuel_power: float, tp: ThermalParams) -> float:
    if fuel_power < 0:
        raise ValueError("fuel_power must be >= 0")
    return tp.engine_heat_fraction * fuel_power


def step_powertrain(state: PlantState, p_dem: float, pt: PowertrainParams, dt: float) -> PlantState:
    """Engine decision, fuel and SOC over one step of length ``dt``.

    The engine runs when traction demand exceeds ``engine_on_power``, when the
    battery is below ``soc_min``, or while the coolant request is latched
    (set below ``T_cl_idle_on``, released at ``T_cl_idle_off``).  When it runs
    only for heat or charge it idles at ``idle_fuel_rate`` and charges the
    battery with ``idle_charge_power``.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    heat_hold = state.T_cl < pt.T_cl_idle_on or (state.heat_hold and state.T_cl < pt.T_cl_idle_off)
    traction_on = p_dem > pt.engine_on_power
    engine_on = traction_on or state.soc < pt.soc_min or heat_hold

    if not engine_on:
        p_batt = p_dem
        fuel_rate = 0.0
    elif traction_on:
        p_batt = 0.0
        fuel_rate = p_dem / (pt.eta_eng * pt.LHV)
    else:
        p_eng = max(p_dem, 0.0) + pt.idle_charge_power
        p_batt = p_dem - p_eng
        fuel_rate = max(pt.idle_fuel_rate, p_eng / (pt.eta_eng * pt.LHV))

    soc = state.soc - p_batt * dt / pt.E_batt
    if not 0.0 <= soc <= 1.0:
        raise SocOutOfRange(f"SOC would reach {soc:.4f} at t={state.t + dt:g} s")
    return replace(
        state,
        engine_on=engine_on,
        heat_hold=heat_hold,
        soc=soc,
        fuel_mass=state.fuel_mass + fuel_rate * dt,
        last_mdot_air=fuel_rate * pt.AFR_stoich,
    )


def radiator_heat(T_cl: float, T_amb: float, tp: ThermalParams) -> float:
    if T_cl >= tp.thermostat_open:
        return tp.radiator_UA * (T_cl - T_amb)
    return 0.0


def step_thermal(state: PlantState, q_engine: float, q_heater: float, T_amb: float,
                 tp: ThermalParams, dt: float) -> PlantState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    if q_heater < 0:
        raise ValueError("q_heater must be >= 0")
    q_rad = radiator_heat(state.T_cl, T_amb, tp)
    T_cl = state.T_cl + dt * (q_engine - q_rad - q_heater) / tp.coolant_heat_capacity
    T_cab = state.T_cab + dt * (q_heater - tp.cabin_UA * (state.T_cab - T_amb)) / tp.cabin_heat_capacity
    return replace(state, T_cl=T_cl, T_cab=T_cab)
