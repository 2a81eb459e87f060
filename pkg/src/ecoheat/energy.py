"""Energy metrics and log replay.

Time series in this package follow one convention: row 0 is the initial state
with zero flows, and row ``k >= 1`` carries the state at the end of step
``k-1 -> k`` together with the flows that acted during that step.  All
integrals therefore weight row ``k`` by ``t[k] - t[k-1]``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass

import numpy as np

from .hvac_control import C_P_AIR
from .plant import PowertrainParams

REPLAY_HEADER = ("t_s", "v_mps", "mdot_air_kgps", "lambda", "soc", "engine_on",
                 "T_ain_C", "T_amb_C", "mdot_bl_kgps")
IDLE_SPEED = 0.5


class InvalidLambda(ValueError):
    pass


class SchemaError(ValueError):
    pass


class MonotonicityError(ValueError):
    pass


@dataclass(frozen=True)
class EnergyReport:
    fuel_energy: float
    delta_soc: float
    soc_correction: float
    E_eq: float
    E_DAHE: float
    engine_idle_seconds: float
    distance: float
    duration: float

    @classmethod
    def build(cls, fuel_energy, soc0, soc_end, E_batt, eta_sys, E_DAHE, idle_s, distance, duration):
        fuel = float(fuel_energy)
        delta_soc = float(soc0 - soc_end)
        corr = E_batt * delta_soc / eta_sys
        e_eq = fuel + corr
        # store the correction as the rounded difference so that both
        # e_eq == fuel + corr and e_eq - fuel - corr == 0 hold exactly
        for _ in range(4):
            corr = e_eq - fuel
            if fuel + corr == e_eq:
                break
            e_eq = fuel + corr
        return cls(fuel, delta_soc, float(corr), float(e_eq),
                   float(E_DAHE), float(idle_s), float(distance), float(duration))

    def to_dict(self) -> dict:
        return asdict(self)


def dahe(p_dahp_series, dt) -> float:
    """Heating energy: negative power samples count as zero.

    ``dt`` is a scalar step or a per-sample array of step lengths.
    """
    if np.any(np.asarray(dt) <= 0):
        raise ValueError("dt must be positive")
    p = np.maximum(np.asarray(p_dahp_series, dtype=float), 0.0)
    return math.fsum(np.broadcast_to(p * dt, p.shape))


def equivalent_energy(fuel_energy: float, delta_soc: float, E_batt: float, eta_sys: float) -> float:
    if not 0 < eta_sys <= 1:
        raise ValueError("eta_sys must be in (0, 1]")
    if not E_batt > 0:
        raise ValueError("E_batt must be positive")
    return fuel_energy + E_batt * delta_soc / eta_sys


def fuel_energy_from_maf(mdot_air_series, lambda_series, AFR_stoich: float, LHV: float, dt) -> float:
    lam = np.asarray(lambda_series, dtype=float)
    if np.any(lam <= 0) or np.any(np.isnan(lam)):
        raise InvalidLambda("lambda must be positive in every sample")
    if np.any(np.asarray(dt) <= 0):
        raise ValueError("dt must be positive")
    mdot = np.asarray(mdot_air_series, dtype=float)
    return math.fsum(np.broadcast_to(mdot / (lam * AFR_stoich) * LHV * dt, mdot.shape))


def idle_seconds(v, engine_on, dt) -> float:
    on = (np.asarray(v) < IDLE_SPEED) & np.asarray(engine_on, dtype=bool)
    return math.fsum(np.broadcast_to(np.where(on, dt, 0.0), on.shape))


def write_replay_log(stream, columns: dict):
    """Write replay columns (keys as in ``REPLAY_HEADER``) with round-trip floats."""
    w = csv.writer(stream, lineterminator="\n")
    w.writerow(REPLAY_HEADER)
    cols = [columns[name] for name in REPLAY_HEADER]
    for row in zip(*cols):
        w.writerow([int(x) if name == "engine_on" else repr(float(x))
                    for name, x in zip(REPLAY_HEADER, row)])


def read_replay_log(path) -> dict:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in REPLAY_HEADER if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        pos = [header.index(c) for c in REPLAY_HEADER]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                rows.append([float(row[i]) for i in pos])
            except (IndexError, ValueError) as exc:
                raise SchemaError(f"{path}:{lineno}: bad row ({exc})") from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    data = np.array(rows)
    return {name: data[:, i] for i, name in enumerate(REPLAY_HEADER)}


def replay_log(path, pt: PowertrainParams = PowertrainParams(), c_p: float = C_P_AIR) -> EnergyReport:
    """Energy report recomputed from a logged run.

    Fuel comes from the MAF and lambda columns, heating energy from the vent
    temperature, ambient temperature and blower flow, and the battery
    correction from the first and last SOC samples.
    """
    c = read_replay_log(path)
    t = c["t_s"]
    dts = np.diff(t)
    if np.any(dts <= 0):
        k = int(np.argmax(dts <= 0)) + 1
        raise MonotonicityError(f"{path}: timestamp at data row {k + 1} does not increase")
    if t.size < 2:
        return EnergyReport.build(0.0, c["soc"][0], c["soc"][-1], pt.E_batt, pt.eta_sys, 0.0, 0.0, 0.0, 0.0)
    s = slice(1, None)
    fuel = fuel_energy_from_maf(c["mdot_air_kgps"][s], c["lambda"][s], pt.AFR_stoich, pt.LHV, dts)
    p = c_p * (c["T_ain_C"][s] - c["T_amb_C"][s]) * c["mdot_bl_kgps"][s]
    e_dahe = dahe(p, dts)
    idle = idle_seconds(c["v_mps"][s], c["engine_on"][s] != 0, dts)
    v = c["v_mps"]
    dist = math.fsum(0.5 * (v[:-1] + v[1:]) * dts)
    return EnergyReport.build(fuel, c["soc"][0], c["soc"][-1], pt.E_batt, pt.eta_sys,
                              e_dahe, idle, dist, float(t[-1] - t[0]))
