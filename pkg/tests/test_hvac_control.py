import io
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ecoheat import hvac_control as hc
from ecoheat.hvac_control import IDENTITY_ALPHA, MPH

BETA_ONE = hc.BetaSchedule(((0.0, 1.0),))
FITTED = hc.AlphaCoeffs(1.0800361165101002, 0.05049394304736875, -0.026958443069918472, 2.102909005037043)


def solve(T_cl, T_amb, v, cfg=hc.MpcConfig(), sched=hc.DEFAULT_BETA, alpha=IDENTITY_ALPHA, **kw):
    return hc.solve_mpc(T_cl, T_amb, v, cfg, sched, alpha, hc.DEFAULT_BLOWER, **kw)


# models ---------------------------------------------------------------------

def test_hvac_command_box():
    hc.HvacCommand(18, 10)
    hc.HvacCommand(24, 70)
    for bad in ((17.9, 40), (24.1, 40), (23, 9.9), (23, 70.1)):
        with pytest.raises(ValueError):
            hc.HvacCommand(*bad)


def test_vent_air_temp_examples():
    a = hc.AlphaCoeffs(0.7, 0.03, 0.01, 3.0)
    assert hc.vent_air_temp(15.0, 88.0, a) == pytest.approx(15 * 0.7 + 225 * 0.01 + 3.0)
    assert hc.vent_air_temp(21.5, 77.0, IDENTITY_ALPHA) == 21.5


def test_shipped_alpha_fit_oracle(cfg):
    # oracle: Cholesky normal-equation solve of the shipped samples, frozen
    with open(cfg.alpha_samples) as fh:
        fit = hc.fit_alpha(hc.read_alpha_samples(fh))
    assert hc.vent_air_temp(23.0, 80.0, fit.coeffs) == pytest.approx(44.998846851097724, rel=1e-9)
    assert fit.rms == pytest.approx(0.5275194126785003, rel=1e-9)
    assert fit.n == 200 and fit.coeffs.monotone_on_box()
    assert cfg.setup.hvac.alpha == fit.coeffs


def test_dahp_examples():
    assert hc.dahp(-11.0, -11.0, 0.08) == 0.0
    assert hc.dahp(40.0, 0.0, 0.05, 1005.0) == pytest.approx(2010.0)
    assert hc.dahp(40.0, 0.0, 0.10) == pytest.approx(2 * hc.dahp(40.0, 0.0, 0.05))
    assert hc.dahp(-5.0, 0.0, 0.05) < 0.0
    with pytest.raises(ValueError):
        hc.dahp(40.0, 0.0, -0.01)


def test_beta_examples():
    b = hc.DEFAULT_BETA
    assert hc.beta(0.0, b) == pytest.approx(0.4)
    assert hc.beta(0.0, b) == min(hc.beta(np.linspace(0, 30, 301), b))
    assert hc.beta(20 * MPH, b) > 1.0
    assert hc.beta(100.0, b) == pytest.approx(1.25)
    assert hc.beta(5 * MPH, b) == pytest.approx(0.6)
    assert hc.beta(5 * MPH, b.with_scale(2.0)) == pytest.approx(1.2)
    with pytest.raises(ValueError):
        hc.beta(-1.0, b)
    assert b.shape_violations() == []
    assert hc.BetaSchedule(((0.0, 1.0), (5.0, 0.5))).shape_violations()


def test_blower_flow_examples():
    assert hc.blower_flow(40) == pytest.approx(0.08)
    assert hc.blower_flow(25) == pytest.approx(0.05)
    with pytest.raises(hc.OutOfRange):
        hc.blower_flow(5)
    with pytest.raises(hc.OutOfRange):
        hc.blower_flow(70.5)
    with pytest.raises(ValueError):
        hc.BlowerMap(((10, 0.05), (40, 0.04), (70, 0.1)))


def test_constant_heating():
    c = hc.constant_heating()
    assert (c.T_sp, c.W_bl) == (23.0, 40.0)
    assert hc.blower_flow(c.W_bl) == pytest.approx(0.08)


def test_target_dahp_examples():
    assert hc.target_dahp(80.0, 0.0, IDENTITY_ALPHA) == pytest.approx(1849.2)
    assert hc.target_dahp(80.0, 23.0, IDENTITY_ALPHA) == 0.0
    t = [hc.target_dahp(T, -11.0, FITTED) for T in np.linspace(40, 90, 11)]
    assert np.all(np.diff(t) >= 0)


# controller -----------------------------------------------------------------

def test_mpc_tracks_baseline_with_unit_beta():
    sol = solve(80.0, -5.0, [10.0] * 31, sched=BETA_ONE)
    assert sol.delivered == pytest.approx(sol.target, rel=1e-9)
    # lowest flow among exact-tracking inputs is at the top setpoint
    assert sol.command.T_sp == 24.0 and sol.command.W_bl < 40.0


def test_mpc_cuts_heat_at_standstill():
    sol = solve(70.0, -11.0, [0.0] * 31, alpha=FITTED)
    assert sol.delivered < sol.target
    c = sol.command
    assert c.W_bl < 40.0 or c.T_sp < 23.0


def test_mpc_preheats_at_speed():
    sol = solve(85.0, -11.0, [25 * MPH] * 31, alpha=FITTED)
    assert sol.delivered > sol.target


def test_short_preview_is_padded():
    a = solve(80.0, -11.0, [0.0, 3.0], alpha=FITTED)
    b = solve(80.0, -11.0, [0.0, 3.0] + [3.0] * 29, alpha=FITTED)
    assert a.command == b.command
    assert np.array_equal(a.desired, b.desired)
    with pytest.raises(ValueError):
        solve(80.0, -11.0, [])


def test_degenerate_vent_warns():
    with pytest.warns(hc.DegenerateVent):
        sol = solve(40.0, 30.0, [5.0])
    assert sol.degenerate and sol.command == hc.HvacCommand(18.0, 10.0)


def test_rate_penalty_dp_matches_brute_force():
    # oracle: enumerate every input sequence over a 3-step horizon
    cfg = hc.MpcConfig(N_p=2, T_sp_grid_step=3.0, W_bl_grid_step=30.0, rate_penalty=1e-3)
    rng = np.random.default_rng(7)
    grid, wgrid = cfg.t_sp_grid(), cfg.w_bl_grid()
    for _ in range(30):
        T_cl, T_amb = rng.uniform(50, 90), rng.uniform(-20, 5)
        v = rng.uniform(0, 18, 3)
        prev = hc.HvacCommand(float(rng.choice(grid)), float(rng.choice(wgrid)))
        sol = solve(T_cl, T_amb, v, cfg, alpha=FITTED, prev_cmd=prev)
        t_ain = hc.vent_air_temp(grid, T_cl, FITTED)
        p = (hc.C_P_AIR * (t_ain[None, :] - T_amb) * hc.blower_flow(wgrid)[:, None]).ravel()
        p_prev = hc.command_dahp(prev, T_cl, T_amb, FITTED)
        idx = np.stack(np.meshgrid(*[np.arange(p.size)] * 3, indexing="ij"), -1).reshape(-1, 3)
        ps = p[idx]
        cost = ((ps - sol.desired) ** 2).sum(1) + 1e-3 * (
            (ps[:, 0] - p_prev) ** 2 + ((ps[:, 1:] - ps[:, :-1]) ** 2).sum(1))
        m, j = divmod(int(idx[np.argmin(cost), 0]), grid.size)
        assert sol.command == hc.HvacCommand(float(grid[j]), float(wgrid[m]))


@settings(max_examples=300, deadline=None)
@given(st.floats(-40.0, 110.0), st.floats(-30.0, 20.0),
       st.lists(st.floats(0.0, 25.0), min_size=1, max_size=40))
def test_mpc_box_respected(T_cl, T_amb, v):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", hc.DegenerateVent)
        c = hc.mpc_step(T_cl, T_amb, v, hc.MpcConfig(), hc.DEFAULT_BETA, FITTED)
    assert 18.0 <= c.T_sp <= 24.0 and 10.0 <= c.W_bl <= 70.0


@settings(max_examples=200, deadline=None)
@given(st.floats(45.0, 95.0), st.floats(-25.0, 10.0), st.floats(0.2, 2.5), st.floats(0.0, 1.0))
def test_mpc_monotone_in_beta(T_cl, T_amb, s1, ds):
    lo = solve(T_cl, T_amb, [10.0], sched=BETA_ONE.with_scale(s1), alpha=FITTED)
    hi = solve(T_cl, T_amb, [10.0], sched=BETA_ONE.with_scale(s1 + ds), alpha=FITTED)
    assert hi.delivered >= lo.delivered - 1e-9 * max(1.0, abs(lo.delivered))


@settings(max_examples=200, deadline=None)
@given(st.floats(0.02, 0.15))
def test_blower_round_trip(m):
    assert hc.blower_flow(float(hc.DEFAULT_BLOWER.pwm_for_flow(m))) == pytest.approx(m, abs=1e-9)


@settings(max_examples=100, deadline=None)
@given(st.floats(45.0, 95.0), st.floats(-25.0, 10.0), st.floats(0.3, 1.6))
def test_exact_tracking_within_grid_bound(T_cl, T_amb, b):
    sol = solve(T_cl, T_amb, [0.0], sched=BETA_ONE.with_scale(b), alpha=FITTED)
    want = sol.desired[0]
    grid = hc.MpcConfig().t_sp_grid()
    p = hc.C_P_AIR * (hc.vent_air_temp(grid, T_cl, FITTED) - T_amb)
    if not (p.min() * 0.02 <= want <= p.max() * 0.15):
        return
    step = 0.25
    bound = max(hc.C_P_AIR * abs(hc.vent_air_temp(sp + step, T_cl, FITTED) - hc.vent_air_temp(sp, T_cl, FITTED))
                * 0.15 for sp in grid)
    assert abs(sol.delivered - want) <= bound + 1e-9


# identification ---------------------------------------------------------------

def test_fit_alpha_exact_recovery():
    true = hc.AlphaCoeffs(0.41, 0.05, -0.01, 8.86)
    fit = hc.fit_alpha(hc.synthetic_alpha_samples(true, n=50, sigma=0.0, seed=3))
    assert np.allclose(fit.coeffs.as_array(), true.as_array(), atol=1e-8)
    assert fit.rms < 1e-9


def test_fit_alpha_noisy_rms():
    true = hc.AlphaCoeffs(0.41, 0.05, -0.01, 8.86)
    fit = hc.fit_alpha(hc.synthetic_alpha_samples(true, n=200, sigma=0.5, seed=11))
    assert fit.rms <= 1.0


def test_fit_alpha_rank_deficient():
    with pytest.raises(hc.RankDeficient):
        hc.fit_alpha([[20, 60, 40], [21, 70, 42], [22, 80, 44]])
    # four samples on one setpoint leave the design matrix singular
    with pytest.raises(hc.RankDeficient):
        hc.fit_alpha([[20, t, 40] for t in (50, 60, 70, 80)])


def test_alpha_samples_io_round_trip():
    s = hc.synthetic_alpha_samples(FITTED, n=5, seed=1)
    buf = io.StringIO()
    hc.write_alpha_samples(buf, s)
    assert np.array_equal(hc.read_alpha_samples(io.StringIO(buf.getvalue())), s)
    with pytest.raises(ValueError):
        hc.read_alpha_samples(io.StringIO("a,b,c\n1,2,3\n"))


def test_monotone_check():
    assert FITTED.monotone_on_box()
    assert not hc.AlphaCoeffs(1.0, -0.01, 0.0, 0.0).monotone_on_box()


def test_calibrate_beta_fixed_point(setup):
    from ecoheat.harness import Scenario

    # constant-heating twin already matches when beta is one everywhere
    s = Scenario(driving="eco", heating="eco", T_amb=-11.0)
    sched = hc.calibrate_beta(BETA_ONE, [s], setup)
    assert sched.scale == 1.0


def test_calibrate_beta_empty():
    with pytest.raises(ValueError):
        hc.calibrate_beta(hc.DEFAULT_BETA, [])
