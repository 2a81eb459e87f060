"""Command-line interface.

Exit codes: 0 success, 1 configuration or I/O error, 2 domain infeasibility.
Diagnostics go to stderr; data goes to stdout only with ``--out -``.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import os
import sys
import warnings

from . import energy, harness, hvac_control as hc, plant, traffic
from .config import ConfigError, default_config_path, load

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2

DOMAIN_ERRORS = (traffic.InfeasibleCorridor, hc.NoBracket, plant.SocOutOfRange)
INPUT_ERRORS = (ConfigError, OSError, energy.SchemaError, energy.MonotonicityError,
                energy.InvalidLambda, hc.RankDeficient, ValueError)


def _log(msg):
    print(msg, file=sys.stderr)


@contextlib.contextmanager
def _open_out(path):
    if path == "-":
        yield sys.stdout
        sys.stdout.flush()
        return
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="") as fh:
        yield fh


def _out_file(args, cfg, default_name):
    if args.out:
        return args.out
    return os.path.join(cfg.output_dir, default_name)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_plan(args, cfg):
    s = harness.Scenario(driving=args.driving, variant=args.variant)
    prof = harness.planned_profile(s, cfg.setup)
    out = _out_file(args, cfg, f"profile_{args.driving}.csv")
    with _open_out(out) as fh:
        prof.to_csv(fh)
    _log(f"{args.driving} profile: {len(prof)} samples, {prof.duration:g} s, "
         f"{traffic.count_stops(prof)} stop(s) -> {out}")
    return EXIT_OK


def cmd_simulate(args, cfg):
    name = args.scenario or next(iter(cfg.scenarios))
    s = cfg.scenario(name)
    res = harness.run_scenario(s, cfg.setup)
    out_dir = args.out or os.path.join(cfg.output_dir, name)
    doc = res.report_dict()
    doc["coolant_closure_rel_error"] = res.coolant_closure_error(cfg.setup.thermal)
    if out_dir == "-":
        sys.stdout.write(_dump_json(doc))
        return EXIT_OK
    os.makedirs(out_dir, exist_ok=True)
    with _open_out(os.path.join(out_dir, "timeseries.csv")) as fh:
        res.to_csv(fh)
    with _open_out(os.path.join(out_dir, "replay_log.csv")) as fh:
        res.write_replay_log(fh)
    with _open_out(os.path.join(out_dir, "report.json")) as fh:
        fh.write(_dump_json(doc))
    r = res.report
    _log(f"{s.label()}: E_eq={r.E_eq / 1e6:.4f} MJ, E_DAHE={r.E_DAHE / 1e6:.4f} MJ, "
         f"idle={r.engine_idle_seconds:g} s -> {out_dir}")
    return EXIT_OK


def cmd_compare(args, cfg):
    sw = cfg.sweep
    name = args.scenario or sw.scenario
    mode = args.mode or sw.mode
    base = cfg.scenario(name)
    if args.sweep:
        table = harness.sweep_ambient(base, sw.temps, sw.repeats, cfg.setup, mode, jobs=args.jobs)
    else:
        table = harness.sweep_ambient(base, [base.T_amb], 1, cfg.setup, mode, jobs=1)
    out = _out_file(args, cfg, "comparison.csv")
    with _open_out(out) as fh:
        table.to_csv(fh)
    for g, m in table.group_means().items():
        _log(f"{g}: mean saving {m:.2f} %")
    return EXIT_OK


def cmd_calibrate_beta(args, cfg):
    cal = cfg.calibration
    scenarios = [cfg.scenario(n) for n in cal.scenarios]
    base = cfg.setup.hvac.beta
    sched = hc.calibrate_beta(base, scenarios, cfg.setup, cal.lo, cal.hi, cal.rel_tol)
    gap = hc.dahe_gap(sched, scenarios, cfg.setup)
    doc = {"scale": sched.scale, "initial_scale": base.scale, "gap": gap,
           "breakpoints_mps": [list(bp) for bp in sched.breakpoints],
           "scenarios": list(cal.scenarios), "shape_violations": sched.shape_violations()}
    out = _out_file(args, cfg, "beta_calibration.json")
    with _open_out(out) as fh:
        fh.write(_dump_json(doc))
    _log(f"calibrated beta scale {sched.scale:.6f}; E_DAHE gap after calibration {100 * gap:+.3f} %")
    return EXIT_OK


def cmd_replay(args, cfg):
    rep = energy.replay_log(args.log, cfg.setup.powertrain, cfg.setup.hvac.c_p)
    pt = cfg.setup.powertrain
    doc = {"log": os.path.basename(args.log), "report": rep.to_dict(),
           "metadata": {"E_batt_J": pt.E_batt, "eta_sys": pt.eta_sys, "LHV_Jpkg": pt.LHV,
                        "AFR_stoich": pt.AFR_stoich, "c_p": cfg.setup.hvac.c_p}}
    out = _out_file(args, cfg, "replay_report.json")
    with _open_out(out) as fh:
        fh.write(_dump_json(doc))
    _log(f"replay: E_eq={rep.E_eq / 1e6:.6f} MJ, E_DAHE={rep.E_DAHE / 1e6:.6f} MJ, "
         f"idle={rep.engine_idle_seconds:g} s")
    return EXIT_OK


def cmd_fit_alpha(args, cfg):
    path = args.samples or cfg.alpha_samples
    if path is None:
        raise ConfigError("no samples file: pass --samples or set alpha_samples in the config")
    with open(path) as fh:
        try:
            samples = hc.read_alpha_samples(fh)
        except ValueError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    fit = hc.fit_alpha(samples)
    c = fit.coeffs
    doc = {"a1": c.a1, "a2": c.a2, "a3": c.a3, "a4": c.a4, "T_sp_floor": c.T_sp_floor,
           "rms": fit.rms, "n": fit.n, "monotone": c.monotone_on_box()}
    out = _out_file(args, cfg, "alpha_fit.json")
    with _open_out(out) as fh:
        fh.write(_dump_json(doc))
    _log(f"fitted alpha on {fit.n} samples: RMS residual {fit.rms:.4f} C")
    return EXIT_OK


COMMANDS = {
    "plan": cmd_plan,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "calibrate-beta": cmd_calibrate_beta,
    "replay": cmd_replay,
    "fit-alpha": cmd_fit_alpha,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="YAML config (default: shipped defaults)")
    common.add_argument("--out", default=argparse.SUPPRESS, help="output file or directory, '-' for stdout")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="override scenario seeds")
    common.add_argument("--jobs", type=int, default=argparse.SUPPRESS, help="parallel scenario workers")

    p = argparse.ArgumentParser(prog="ecoheat", parents=[common],
                                description="Eco-driving and eco-heating simulator for a power-split hybrid.")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("plan", parents=[common], help="write a planned speed profile")
    sp.add_argument("--driving", choices=("eco", "normal"), default="eco")
    sp.add_argument("--variant", choices=("base", "long_stop"), default="base")

    sp = sub.add_parser("simulate", parents=[common], help="run one named scenario")
    sp.add_argument("--scenario")

    sp = sub.add_parser("compare", parents=[common], help="paired baseline/eco comparison")
    sp.add_argument("--sweep", action="store_true", help="run the ambient sweep from the config")
    sp.add_argument("--scenario")
    sp.add_argument("--mode", choices=("heating", "combined", "driving"))

    sub.add_parser("calibrate-beta", parents=[common], help="rescale the beta schedule")

    sp = sub.add_parser("replay", parents=[common], help="energy report from a logged run")
    sp.add_argument("--log", required=True)

    sp = sub.add_parser("fit-alpha", parents=[common], help="fit vent temperature coefficients")
    sp.add_argument("--samples")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for name, default in (("config", None), ("out", None), ("seed", None), ("jobs", 1)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.jobs < 1:
        _log("error: --jobs must be >= 1")
        return EXIT_CONFIG
    try:
        cfg = load(args.config or default_config_path())
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        with warnings.catch_warnings():
            warnings.simplefilter("always", hc.DegenerateVent)
            return COMMANDS[args.command](args, cfg)
    except DOMAIN_ERRORS as exc:
        _log(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    except INPUT_ERRORS as exc:
        _log(f"error: {exc}")
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
