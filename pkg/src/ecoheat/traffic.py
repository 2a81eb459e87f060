"""Signalized corridor model, green windows and speed planners.

Signals are fixed-time.  Each intersection carries a deterministic queue:
``initial_queue`` vehicles are waiting when red starts, the queue grows at
``arrival_rate`` during red and drains at ``discharge_rate`` during green.
A green window is the part of a green phase left after the queue ahead has
discharged.

Profiles are sampled every ``dt`` seconds and speed is taken to be linear
between samples, so position is the trapezoidal integral of the samples and
crossing times are solved exactly inside a step.
"""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Sequence

import numpy as np

from . import kernels


class InfeasibleCorridor(Exception):
    """No usable green window can be reached within the planning horizon."""


class SignalState(enum.Enum):
    GREEN = "green"
    RED = "red"


@dataclass(frozen=True)
class Intersection:
    id: int
    position: float
    cycle: float
    green_offset: float
    green_duration: float
    initial_queue: float = 0.0
    discharge_rate: float = 0.5
    discharge_headway_length: float = 7.0
    arrival_rate: float = 0.0

    def __post_init__(self):
        if not self.cycle > 0:
            raise ValueError(f"intersection {self.id}: cycle must be positive")
        if not 0 <= self.green_offset < self.cycle:
            raise ValueError(f"intersection {self.id}: need 0 <= green_offset < cycle")
        if not 0 < self.green_duration < self.cycle:
            raise ValueError(f"intersection {self.id}: need 0 < green_duration < cycle")
        if self.initial_queue < 0 or self.arrival_rate < 0:
            raise ValueError(f"intersection {self.id}: queue and arrival rate must be >= 0")
        if not self.discharge_rate > 0:
            raise ValueError(f"intersection {self.id}: discharge_rate must be positive")
        if self.discharge_headway_length < 0:
            raise ValueError(f"intersection {self.id}: discharge_headway_length must be >= 0")

    @property
    def red_duration(self) -> float:
        return self.cycle - self.green_duration

    def queue_at_green_start(self) -> float:
        return self.initial_queue + self.arrival_rate * self.red_duration


@dataclass(frozen=True)
class Corridor:
    length: float
    speed_limit: float
    intersections: tuple[Intersection, ...]
    name: str = "corridor"

    def __post_init__(self):
        object.__setattr__(self, "intersections", tuple(self.intersections))
        if not self.length > 0 or not self.speed_limit > 0:
            raise ValueError("corridor length and speed limit must be positive")
        last = 0.0
        for inter in self.intersections:
            if not last < inter.position <= self.length:
                raise ValueError(
                    f"intersection {inter.id} at {inter.position} m: positions must be "
                    f"strictly increasing inside (0, {self.length}]")
            last = inter.position


@dataclass(frozen=True)
class GreenWindow:
    intersection_id: int
    open_time: float
    close_time: float

    @property
    def width(self) -> float:
        return self.close_time - self.open_time

    @property
    def empty(self) -> bool:
        return self.close_time <= self.open_time


@dataclass(frozen=True)
class PlannerLimits:
    a_max: float = 1.5
    d_max: float = 2.5
    v_cruise: float = 17.9
    v_min_glide: float = 4.5
    dt: float = 1.0
    # pace strategies aim this far inside a window
    window_margin: float = 1.5
    max_cycles: int = 8
    # stop this far upstream of the stop bar (or queue tail)
    stop_gap: float = 0.5
    # final seconds of green shown as yellow to the no-preview driver
    yellow: float = 4.0

    def __post_init__(self):
        if not (self.a_max > 0 and self.d_max > 0 and self.dt > 0):
            raise ValueError("a_max, d_max and dt must be positive")
        if not 0 < self.v_min_glide <= self.v_cruise:
            raise ValueError("need 0 < v_min_glide <= v_cruise")
        if self.max_cycles < 1:
            raise ValueError("max_cycles must be >= 1")

    @property
    def min_window(self) -> float:
        """Windows must be strictly wider than this to be planned through."""
        return max(2.0 * self.window_margin, 2.0 * self.dt)


@dataclass
class SpeedProfile:
    dt: float
    speeds: np.ndarray
    origin_time: float = 0.0

    def __post_init__(self):
        self.speeds = np.asarray(self.speeds, dtype=float)
        if self.speeds.ndim != 1 or self.speeds.size == 0:
            raise ValueError("speeds must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(self.speeds)) or np.any(self.speeds < 0):
            raise ValueError("speeds must be finite and non-negative")

    def __len__(self):
        return self.speeds.size

    @property
    def duration(self) -> float:
        return (self.speeds.size - 1) * self.dt

    def times(self) -> np.ndarray:
        return self.origin_time + self.dt * np.arange(self.speeds.size)

    def positions(self) -> np.ndarray:
        x = np.zeros(self.speeds.size)
        np.cumsum(0.5 * (self.speeds[:-1] + self.speeds[1:]) * self.dt, out=x[1:])
        return x

    def accelerations(self) -> np.ndarray:
        return np.diff(self.speeds) / self.dt

    def crossing_time(self, position: float) -> float:
        """First time the integrated position exceeds ``position``."""
        x = self.positions()
        k = int(np.searchsorted(x, position, side="right"))
        if k >= x.size:
            return math.inf
        k -= 1
        tau = kernels._crossing_fraction(position - x[k], self.speeds[k], self.speeds[k + 1], self.dt)
        return self.origin_time + k * self.dt + tau

    def to_csv(self, stream=None) -> str:
        buf = io.StringIO() if stream is None else stream
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_s", "v_mps"])
        for t, v in zip(self.times(), self.speeds):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue() if stream is None else ""

    @classmethod
    def from_csv(cls, stream) -> "SpeedProfile":
        rows = list(csv.reader(stream))
        if not rows or rows[0] != ["t_s", "v_mps"]:
            raise ValueError("profile CSV must start with header t_s,v_mps")
        t = np.array([float(r[0]) for r in rows[1:]])
        v = np.array([float(r[1]) for r in rows[1:]])
        dt = float(t[1] - t[0]) if t.size > 1 else 1.0
        return cls(dt=dt, speeds=v, origin_time=float(t[0]) if t.size else 0.0)


# ---------------------------------------------------------------------------
# signal and queue model
# ---------------------------------------------------------------------------

def _phase(inter: Intersection, t: float) -> float:
    return ((t % inter.cycle) - inter.green_offset) % inter.cycle


def signal_state(inter: Intersection, t: float) -> SignalState:
    if _phase(inter, t) < inter.green_duration:
        return SignalState.GREEN
    return SignalState.RED


def queue_length(inter: Intersection, t: float) -> float:
    """Vehicles queued at the stop bar at time ``t``."""
    p = _phase(inter, t)
    g = inter.green_duration
    if p >= g:
        return inter.initial_queue + inter.arrival_rate * (p - g)
    return max(0.0, inter.queue_at_green_start() - inter.discharge_rate * p)


def green_window(inter: Intersection, cycle_index: int) -> GreenWindow:
    if cycle_index < 0:
        raise ValueError("cycle_index must be >= 0")
    return _window(inter, cycle_index)


def _window(inter: Intersection, k: int) -> GreenWindow:
    start = inter.green_offset + k * inter.cycle
    end = start + inter.green_duration
    opening = start + inter.queue_at_green_start() / inter.discharge_rate
    if opening >= end:
        return GreenWindow(inter.id, end, end)
    return GreenWindow(inter.id, opening, end)


def _candidate_windows(inter: Intersection, t: float, lim: PlannerLimits) -> Iterator[GreenWindow]:
    """Usable windows still open after ``t``, chronologically, over the horizon."""
    k0 = math.floor((t - inter.green_offset) / inter.cycle)
    for k in range(k0, k0 + lim.max_cycles + 1):
        w = _window(inter, k)
        if w.width > lim.min_window and w.close_time - lim.window_margin > t:
            yield w


def has_usable_window(inter: Intersection, lim: PlannerLimits) -> bool:
    # the queue model is periodic, so one cycle decides
    return _window(inter, 0).width > lim.min_window


# ---------------------------------------------------------------------------
# discrete kinematics helpers
# ---------------------------------------------------------------------------

def braking_distance(v: float, d_max: float, dt: float) -> float:
    """Distance covered braking from ``v`` to rest at ``d_max`` in ``dt`` steps."""
    if v <= 0.0:
        return 0.0
    dv = d_max * dt
    n = math.floor(v / dv)
    r = v - n * dv
    return dt * (n * v - 0.5 * dv * n * n) + 0.5 * r * dt


def _next_speed(x: float, v: float, v_max: float, stop_at: Optional[float], lim: PlannerLimits) -> float:
    """Next sample speed: head for ``v_max`` but stay able to stop at ``stop_at``."""
    dt = lim.dt
    if v <= v_max:
        up = min(v + lim.a_max * dt, v_max)
    else:
        up = max(v - lim.d_max * dt, v_max)
    if stop_at is None:
        return up
    lo = max(v - lim.d_max * dt, 0.0)

    def overshoot(w):
        return x + 0.5 * (v + w) * dt + braking_distance(w, lim.d_max, dt) - stop_at

    if overshoot(up) <= 0.0:
        return up
    if overshoot(lo) >= -1e-9:
        return lo
    a, b = lo, up
    for _ in range(100):
        mid = 0.5 * (a + b)
        if overshoot(mid) <= 0.0:
            a = mid
        else:
            b = mid
    return a


def _approach_stop(x: float, v: float, stop_at: float, lim: PlannerLimits, v_max: float):
    """Samples bringing the vehicle to rest at ``stop_at``; returns (samples, x)."""
    out = []
    for _ in range(100000):
        if v == 0.0 and stop_at - x <= 1e-6:
            break
        w = _next_speed(x, v, v_max, stop_at, lim)
        x += 0.5 * (v + w) * lim.dt
        v = w
        out.append(w)
    return out, x


def _pace_arrival(v, u, dist, lim):
    return kernels.pace_arrival(float(v), float(u), lim.a_max, lim.d_max, float(dist), lim.dt)


def _bisect_pace(feasible, bad: float, good: float) -> float:
    """Pace closest to ``bad`` for which ``feasible`` holds; ``feasible(good)`` must."""
    for _ in range(60):
        mid = 0.5 * (bad + good)
        if feasible(mid):
            good = mid
        else:
            bad = mid
    return good


def _pace_samples(v, u, dist, lim):
    """Samples of the pace manoeuvre up to the first sample past ``dist``."""
    out = []
    x = 0.0
    while x < dist:
        if v < u:
            w = min(v + lim.a_max * lim.dt, u)
        elif v > u:
            w = max(v - lim.d_max * lim.dt, u)
        else:
            w = u
        x += 0.5 * (v + w) * lim.dt
        v = w
        out.append(w)
    return out, x


def _check_plan_inputs(corridor: Corridor, v0: float, t0: float, lim: PlannerLimits):
    if lim.v_cruise > corridor.speed_limit + 1e-9:
        raise ValueError("v_cruise exceeds the corridor speed limit")
    if not 0 <= v0 <= lim.v_cruise:
        raise ValueError("need 0 <= v0 <= v_cruise")
    if t0 < 0:
        raise ValueError("t0 must be >= 0")
    for inter in corridor.intersections:
        if not has_usable_window(inter, lim):
            raise InfeasibleCorridor(
                f"intersection {inter.id}: green window narrower than "
                f"{lim.min_window:g} s after queue discharge")


# ---------------------------------------------------------------------------
# eco planner
# ---------------------------------------------------------------------------

def _eco_segment(inter: Intersection, x: float, t: float, v: float, lim: PlannerLimits):
    dist = inter.position - x
    m = lim.window_margin
    fastest = t + _pace_arrival(v, lim.v_cruise, dist, lim)
    nominal = v if v >= lim.v_min_glide else lim.v_cruise

    def arrive(u):
        return t + _pace_arrival(v, u, dist, lim)

    for w in _candidate_windows(inter, t, lim):
        lo, hi = w.open_time + m, w.close_time - m
        if fastest > hi:
            continue
        if arrive(lim.v_min_glide) >= lo:
            t_nom = arrive(nominal)
            if lo <= t_nom <= hi:
                u = nominal
            elif t_nom > hi:
                u = _bisect_pace(lambda s: arrive(s) <= hi, nominal, lim.v_cruise)
            else:
                u = _bisect_pace(lambda s: arrive(s) >= lo, nominal, lim.v_min_glide)
            samples, dx = _pace_samples(v, u, dist, lim)
            return samples, x + dx

        # no pace arrives late enough: stop at the bar and leave when it opens
        stop_at = inter.position - lim.stop_gap
        if braking_distance(v, lim.d_max, lim.dt) > stop_at - x:
            continue
        samples, xs = _approach_stop(x, v, stop_at, lim, lim.v_cruise)
        t_stop = t + len(samples) * lim.dt
        wait = max(0, math.ceil((w.open_time - t_stop) / lim.dt))
        samples.extend([0.0] * wait)
        vv = 0.0
        while xs <= inter.position:
            ww = min(vv + lim.a_max * lim.dt, lim.v_cruise)
            xs += 0.5 * (vv + ww) * lim.dt
            vv = ww
            samples.append(ww)
        t_end = t + len(samples) * lim.dt
        if t_end > w.close_time:
            continue
        return samples, xs

    raise InfeasibleCorridor(
        f"intersection {inter.id}: no green window reachable within {lim.max_cycles} cycles")


def plan_eco_trajectory(corridor: Corridor, v0: float = 0.0, t0: float = 0.0,
                        limits: Optional[PlannerLimits] = None) -> SpeedProfile:
    """Signal-aware speed plan through ``corridor``, ending at rest at its end.

    Each intersection is approached with one of four manoeuvres aimed at the
    earliest reachable green window: hold the current pace, speed up, slow
    down to a glide no lower than ``v_min_glide``, or stop at the bar and
    leave when the window opens.
    """
    lim = limits or PlannerLimits()
    _check_plan_inputs(corridor, v0, t0, lim)
    speeds = [float(v0)]
    x, v = 0.0, float(v0)
    for inter in corridor.intersections:
        t = t0 + (len(speeds) - 1) * lim.dt
        samples, x = _eco_segment(inter, x, t, v, lim)
        speeds.extend(samples)
        v = speeds[-1]
    tail, x = _approach_stop(x, v, corridor.length, lim, lim.v_cruise)
    speeds.extend(tail)
    return SpeedProfile(lim.dt, np.array(speeds), t0)


# ---------------------------------------------------------------------------
# no-preview driver
# ---------------------------------------------------------------------------

def plan_normal_trajectory(corridor: Corridor, v0: float = 0.0, t0: float = 0.0,
                           limits: Optional[PlannerLimits] = None) -> SpeedProfile:
    """Speed trace of a driver who only reacts to what is visible.

    The driver heads for ``v_cruise`` and brakes at ``d_max`` only once a red
    light, a yellow it can still stop for, or the tail of a standing queue is
    within stopping distance.  A stopped driver leaves once the light is green
    and the queue ahead has discharged.
    """
    lim = limits or PlannerLimits()
    _check_plan_inputs(corridor, v0, t0, lim)
    dt = lim.dt
    speeds = [float(v0)]
    x, v, t = 0.0, float(v0), float(t0)
    held = False
    committed = None
    horizon = corridor.length / lim.v_min_glide + sum(
        (lim.max_cycles + 1) * i.cycle for i in corridor.intersections)
    for _ in range(int(horizon / dt) + 1):
        ahead = next((i for i in corridor.intersections if i.position > x), None)
        if ahead is None:
            if v == 0.0 and corridor.length - x <= 1e-6:
                break
            w = _next_speed(x, v, lim.v_cruise, corridor.length, lim)
        else:
            bar = ahead.position - lim.stop_gap
            state = signal_state(ahead, t)
            q = queue_length(ahead, t)
            blocked = state is SignalState.RED or q > 0.0
            if not blocked and _phase(ahead, t) >= ahead.green_duration - lim.yellow:
                blocked = x + braking_distance(v, lim.d_max, dt) <= bar
                if not blocked:
                    committed = ahead.id
            if committed == ahead.id:
                blocked = False
            if not blocked:
                held = False
                w = _next_speed(x, v, lim.v_cruise, None, lim)
            elif held:
                w = 0.0
            else:
                tail = bar - q * ahead.discharge_headway_length
                w = _next_speed(x, v, lim.v_cruise, max(tail, x), lim)
                held = w == 0.0
        x += 0.5 * (v + w) * dt
        v = w
        t += dt
        speeds.append(w)
    else:
        raise InfeasibleCorridor("normal driver did not reach the corridor end")
    return SpeedProfile(dt, np.array(speeds), t0)


# ---------------------------------------------------------------------------
# profile utilities
# ---------------------------------------------------------------------------

def stop_intervals(profile: SpeedProfile, threshold: float = 0.0) -> list[tuple[int, int]]:
    """Sample ranges ``[i, j)`` where the vehicle stands still mid-run.

    Standstill at the very start or end of the profile is not a stop.
    """
    still = profile.speeds <= threshold
    out = []
    k, n = 0, still.size
    while k < n:
        if still[k]:
            j = k
            while j < n and still[j]:
                j += 1
            if k > 0 and j < n:
                out.append((k, j))
            k = j
        else:
            k += 1
    return out


def count_stops(profile: SpeedProfile, threshold: float = 0.0) -> int:
    return len(stop_intervals(profile, threshold))


def extend_stop(profile: SpeedProfile, stop_index: int, extra_s: float) -> SpeedProfile:
    """Lengthen the ``stop_index``-th mid-run stop by ``extra_s`` seconds."""
    stops = stop_intervals(profile)
    if not stops:
        raise ValueError("profile has no stop to extend")
    if not -len(stops) <= stop_index < len(stops):
        raise ValueError(f"profile has {len(stops)} stops, no stop #{stop_index}")
    i, _ = stops[stop_index]
    extra = int(round(extra_s / profile.dt))
    speeds = np.concatenate([profile.speeds[:i], np.zeros(extra), profile.speeds[i:]])
    return SpeedProfile(profile.dt, speeds, profile.origin_time)


def crossing_times(profile: SpeedProfile, positions: Sequence[float]) -> list[float]:
    return [profile.crossing_time(p) for p in positions]
