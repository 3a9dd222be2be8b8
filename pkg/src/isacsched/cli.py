"""Command line front end: generate, solve, simulate, sweep, sample-check.

All file formats are JSON with an explicit schema_version, written with
sorted keys and no timestamps so identical inputs produce byte-identical
outputs.  Sweeps write CSV with a fixed column order.  Exit codes:
0 success, 2 invalid input or configuration, 3 infeasible problem,
4 solver did not converge.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from typing import Optional

import numpy as np

from .model import IndependentPolicy, JointPolicy, product_moments
from .network import RadioEnvironment, Timing
from .sampler import dg_calibrate, dg_sample, ising_fit, ising_sample, rng_stream
from .sim import (
    Scenario,
    ScenarioParams,
    classify_proxy,
    generate_scenario,
    run_sweep,
    simulate,
)
from .solver import SolverConfig, SolverReport
from .sim import _solve_one

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_BAD_INPUT = 2
EXIT_INFEASIBLE = 3
EXIT_NO_CONVERGE = 4

SWEEP_COLUMNS = [
    "kind", "value", "policy", "mode", "status", "objective", "max_violation",
    "feasible", "iterations", "gain_exact", "note",
    "sim_gain", "sim_gain_se", "rate_meets_all", "energy_meets",
]


class ConfigError(Exception):
    """Invalid configuration or input file; the message names the field."""


# ---------------------------------------------------------------------------
# schema validation
# ---------------------------------------------------------------------------

_NUM = ("num",)
_INT = ("int",)
_BOOL = ("bool",)
_STR = ("str",)
_NUM_OR_NULL = ("num?",)
_NUM_LIST = ("numlist",)

TIMING_SCHEMA = {"t_s": _NUM, "t_f": _NUM, "t_w": _NUM}
RADIO_SCHEMA = {
    "bandwidth": _NUM,
    "carrier_hz": _NUM,
    "pathloss_exponent": _NUM,
    "pathloss_const_db": _NUM,
    "shadowing_std_db": _NUM,
    "noise_density_dbm_hz": _NUM,
    "noise_rise_db": _NUM,
}
PARAMS_SCHEMA = {
    "seed": _INT,
    "num_devices": _INT,
    "num_classes": _INT,
    "num_features": _INT,
    "cell_inner_m": _NUM,
    "cell_outer_m": _NUM,
    "power_levels": _NUM_LIST,
    "energy_fraction": _NUM,
    "gamma": _NUM,
    "correlation_strength": _NUM_OR_NULL,
    "bits_per_feature": _NUM,
    "timing": TIMING_SCHEMA,
    "radio": RADIO_SCHEMA,
}
DERIVED_SCHEMA = {
    "distances_m": _NUM_LIST,
    "shadowing_db": _NUM_LIST,
    "spectral_efficiency": _NUM_LIST,
    "spectral_efficiency_std": _NUM_LIST,
    "r_min": _NUM_LIST,
    "energy_joules": _NUM,
    "positions": ("any",),
}
SCENARIO_SCHEMA = {
    "schema_version": _INT,
    "params": PARAMS_SCHEMA,
    "derived": DERIVED_SCHEMA,
}
POLICY_SCHEMA = {
    "schema_version": _INT,
    "mode": _STR,
    "policy": {"pi": _NUM_LIST, "p_s": _NUM_LIST, "moments": ("any",)},
    "report": {
        "status": _STR,
        "objective": _NUM_OR_NULL,
        "iterations": _INT,
        "max_violation": _NUM_OR_NULL,
        "violated": ("any",),
        "residuals": ("any",),
    },
}
SOLVER_CONFIG_SCHEMA = {
    "outer_tol": _NUM, "outer_max_iter": _INT, "jong_tol": _NUM, "jong_max_iter": _INT,
    "kkt_tol": _NUM, "inner_max_iter": _INT, "dykstra_tol": _NUM,
    "dykstra_max_cycles": _INT, "feas_tol": _NUM, "restore_tol": _NUM,
    "box_shrink": _NUM, "box_floor": _NUM, "psd_floor": _NUM,
}


def _check(obj, schema, path: str):
    """Whitelist walk: any unknown or ill-typed field fails with its path."""
    if schema == ("any",):
        return
    if isinstance(schema, dict):
        if not isinstance(obj, dict):
            raise ConfigError(f"{path}: expected an object")
        for key, val in obj.items():
            if key not in schema:
                raise ConfigError(f"{path}.{key}: unknown key")
            _check(val, schema[key], f"{path}.{key}")
        return
    kind = schema[0]
    if kind == "num":
        if not isinstance(obj, (int, float)) or isinstance(obj, bool):
            raise ConfigError(f"{path}: expected a number")
    elif kind == "num?":
        if obj is not None and (not isinstance(obj, (int, float)) or isinstance(obj, bool)):
            raise ConfigError(f"{path}: expected a number or null")
    elif kind == "int":
        if not isinstance(obj, int) or isinstance(obj, bool):
            raise ConfigError(f"{path}: expected an integer")
    elif kind == "bool":
        if not isinstance(obj, bool):
            raise ConfigError(f"{path}: expected a boolean")
    elif kind == "str":
        if not isinstance(obj, str):
            raise ConfigError(f"{path}: expected a string")
    elif kind == "numlist":
        if not isinstance(obj, list) or any(
                not isinstance(v, (int, float)) or isinstance(v, bool) for v in obj):
            raise ConfigError(f"{path}: expected a list of numbers")
    else:
        raise ConfigError(f"{path}: unhandled schema kind {kind}")


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def params_to_dict(p: ScenarioParams) -> dict:
    return {
        "seed": int(p.seed),
        "num_devices": int(p.num_devices),
        "num_classes": int(p.num_classes),
        "num_features": int(p.num_features),
        "cell_inner_m": float(p.cell_inner_m),
        "cell_outer_m": float(p.cell_outer_m),
        "power_levels": [float(v) for v in p.power_levels],
        "energy_fraction": float(p.energy_fraction),
        "gamma": float(p.gamma),
        "correlation_strength": None if p.correlation_strength is None
                                else float(p.correlation_strength),
        "bits_per_feature": float(p.bits_per_feature),
        "timing": {"t_s": p.timing.t_s, "t_f": p.timing.t_f, "t_w": p.timing.t_w},
        "radio": {
            "bandwidth": p.radio.bandwidth,
            "carrier_hz": p.radio.carrier_hz,
            "pathloss_exponent": p.radio.pathloss_exponent,
            "pathloss_const_db": p.radio.pathloss_const_db,
            "shadowing_std_db": p.radio.shadowing_std_db,
            "noise_density_dbm_hz": p.radio.noise_density_dbm_hz,
            "noise_rise_db": p.radio.noise_rise_db,
        },
    }


def params_from_dict(d: dict, path: str = "params") -> ScenarioParams:
    _check(d, PARAMS_SCHEMA, path)
    kwargs = dict(d)
    if "timing" in kwargs:
        kwargs["timing"] = Timing(**kwargs["timing"])
    if "radio" in kwargs:
        kwargs["radio"] = RadioEnvironment(**kwargs["radio"])
    if "power_levels" in kwargs:
        kwargs["power_levels"] = tuple(float(v) for v in kwargs["power_levels"])
    try:
        return ScenarioParams(**kwargs)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{path}: {err}") from err


def scenario_to_dict(s: Scenario) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "params": params_to_dict(s.params),
        "derived": {
            "distances_m": [float(v) for v in s.distances_m],
            "shadowing_db": [float(v) for v in s.shadowing_db],
            "spectral_efficiency": [float(v) for v in s.rates.e],
            "spectral_efficiency_std": [float(v) for v in s.rates.e_std],
            "r_min": [float(v) for v in s.rates.r_min],
            "energy_joules": float(s.energy.joules),
            "positions": [[float(x) for x in d.position] for d in s.devices],
        },
    }


def scenario_from_dict(d: dict) -> Scenario:
    _check(d, SCENARIO_SCHEMA, "scenario")
    if "params" not in d:
        raise ConfigError("scenario.params: missing")
    if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError("scenario.schema_version: unsupported version")
    return generate_scenario(params_from_dict(d["params"], "scenario.params"))


def report_to_dict(rep: SolverReport) -> dict:
    return {
        "status": rep.status,
        "objective": None if rep.policy is None else float(rep.objective),
        "iterations": int(rep.iterations),
        "max_violation": float(rep.max_violation),
        "violated": list(rep.violated),
        "residuals": {k: float(v) for k, v in rep.residuals.items()},
    }


def policy_to_dict(policy, mode: str, rep: Optional[SolverReport] = None) -> dict:
    body = {}
    if policy is not None:
        if isinstance(policy, JointPolicy):
            body = {"moments": [[float(v) for v in row] for row in policy.moments],
                    "p_s": [float(v) for v in policy.p_s]}
        else:
            body = {"pi": [float(v) for v in policy.pi],
                    "p_s": [float(v) for v in policy.p_s]}
    out = {"schema_version": SCHEMA_VERSION, "mode": mode, "policy": body}
    if rep is not None:
        out["report"] = report_to_dict(rep)
    return out


def policy_from_dict(d: dict):
    _check(d, POLICY_SCHEMA, "policy")
    if d.get("schema_version", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError("policy.schema_version: unsupported version")
    body = d.get("policy") or {}
    if "moments" in body:
        try:
            return JointPolicy(np.asarray(body["moments"], dtype=float),
                               np.asarray(body["p_s"], dtype=float))
        except (ValueError, KeyError) as err:
            raise ConfigError(f"policy.policy: {err}") from err
    if "pi" in body:
        try:
            return IndependentPolicy(np.asarray(body["pi"], dtype=float),
                                     np.asarray(body["p_s"], dtype=float))
        except (ValueError, KeyError) as err:
            raise ConfigError(f"policy.policy: {err}") from err
    raise ConfigError("policy.policy: needs either pi or moments")


def solver_config_from_dict(d: dict) -> SolverConfig:
    _check(d, SOLVER_CONFIG_SCHEMA, "solver")
    try:
        return SolverConfig(**d)
    except TypeError as err:
        raise ConfigError(f"solver: {err}") from err


def _dump_json(obj, out: Optional[str]):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _load_json(path: str) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"{path}: {err}") from err


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def _cmd_gen(args) -> int:
    cfg = {}
    if args.config:
        cfg = _load_json(args.config)
        _check(cfg, PARAMS_SCHEMA, "config")
    if args.seed is not None:
        cfg["seed"] = args.seed
    params = params_from_dict(cfg, "config")
    scenario = generate_scenario(params)
    _dump_json(scenario_to_dict(scenario), args.out)
    return EXIT_OK


def _load_scenario(args) -> Scenario:
    return scenario_from_dict(_load_json(args.scenario))


def _solver_config(args) -> SolverConfig:
    if getattr(args, "solver_config", None):
        return solver_config_from_dict(_load_json(args.solver_config))
    return SolverConfig()


def _cmd_solve(args) -> int:
    scenario = _load_scenario(args)
    cfg = _solver_config(args)
    if args.mode == "joint" and scenario.correlation.c is None:
        if scenario.correlation.rho is None:
            print("joint mode needs a scenario with feature correlation", file=sys.stderr)
            return EXIT_INFEASIBLE
    try:
        rep = _solve_one(scenario, args.policy, args.mode, cfg, None)
    except ValueError as err:
        raise ConfigError(str(err)) from err
    _dump_json(policy_to_dict(rep.policy, args.mode, rep), args.out)
    if rep.status == "infeasible":
        return EXIT_INFEASIBLE
    if rep.status == "no_converge":
        return EXIT_NO_CONVERGE
    return EXIT_OK


def _cmd_simulate(args) -> int:
    scenario = _load_scenario(args)
    policy = policy_from_dict(_load_json(args.policy_file))
    if policy.num_devices != scenario.num_devices:
        raise ConfigError("policy and scenario disagree on the device count")
    sim = simulate(scenario, policy, args.cycles, seed=args.seed, sampler=args.sampler)
    out = {
        "schema_version": SCHEMA_VERSION,
        "num_cycles": sim.num_cycles,
        "mean_gain": sim.mean_gain,
        "se_gain": sim.se_gain,
        "mean_rates": [float(v) for v in sim.mean_rates],
        "se_rates": [float(v) for v in sim.se_rates],
        "r_min": [float(v) for v in sim.r_min],
        "rate_meets": [bool(v) for v in sim.rate_meets],
        "mean_energy": sim.mean_energy,
        "se_energy": sim.se_energy,
        "energy_budget": sim.energy_budget,
        "energy_meets": sim.energy_meets,
        "empirical_moments": [[float(v) for v in row] for row in sim.empirical_moments],
        "cond_coactive": [None if not np.isfinite(v) else float(v) for v in sim.cond_coactive],
        "sampler_used": sim.sampler_used,
    }
    if args.classify_trials > 0:
        out["classifier_accuracy"] = classify_proxy(
            scenario, policy, args.classify_trials, seed=args.seed, sampler=args.sampler)
    _dump_json(out, args.out)
    return EXIT_OK


def _cmd_sweep(args) -> int:
    scenario = _load_scenario(args)
    cfg = _solver_config(args)
    try:
        values = [float(v) for v in args.values.split(",") if v != ""]
    except ValueError as err:
        raise ConfigError(f"--values: {err}") from err
    if not values:
        raise ConfigError("--values: at least one value required")
    policies = tuple(p for p in args.policies.split(",") if p)
    rows = run_sweep(scenario, args.kind, values, mode=args.mode, policies=policies,
                     cfg=cfg, sim_cycles=args.sim_cycles, sim_seed=args.seed)
    text_rows = []
    for row in rows:
        text_rows.append({col: _csv_cell(row.get(col)) for col in SWEEP_COLUMNS})
    if args.out is None or args.out == "-":
        _write_csv(sys.stdout, text_rows)
    else:
        with open(args.out, "w", newline="") as fh:
            _write_csv(fh, text_rows)
    return EXIT_OK


def _csv_cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(fh, rows):
    writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row)


def _cmd_sample_check(args) -> int:
    policy = policy_from_dict(_load_json(args.policy_file))
    if isinstance(policy, JointPolicy):
        target = np.asarray(policy.moments)
    else:
        target = product_moments(policy.pi)
    out = {"schema_version": SCHEMA_VERSION, "num_samples": args.num, "samplers": {}}
    for name in args.samplers.split(","):
        name = name.strip()
        if name == "independent":
            rng = rng_stream(args.seed, 20)
            draws = (rng.random((args.num, target.shape[0])) < np.diag(target)[None, :]).astype(float)
            extra = {}
        elif name == "ising":
            model = ising_fit(target)
            draws = ising_sample(model, args.num, args.seed)
            extra = {"fit_converged": bool(model.converged),
                     "fit_residual": float(model.residual)}
        elif name == "dg":
            model = dg_calibrate(target)
            draws = dg_sample(model, args.num, args.seed)
            extra = {"adjusted": bool(model.adjusted), "max_adjust": float(model.max_adjust)}
        else:
            raise ConfigError(f"--samplers: unknown sampler '{name}'")
        emp = (draws.T @ draws) / args.num
        np.fill_diagonal(emp, draws.mean(axis=0))
        err = float(np.max(np.abs(emp - target)))
        if name == "independent":
            # only the marginals are promised by the independent sampler
            err = float(np.max(np.abs(np.diag(emp) - np.diag(target))))
        out["samplers"][name] = {"max_moment_error": err, **extra}
    _dump_json(out, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="isacsched",
        description="Optimize and validate sensing schedules for collaborative ISAC networks.")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a scenario file")
    g.add_argument("--config", help="scenario parameter JSON")
    g.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    g.add_argument("--out", help="output path (default stdout)")
    g.set_defaults(func=_cmd_gen)

    s = sub.add_parser("solve", help="compute a scheduling policy")
    s.add_argument("--scenario", required=True)
    s.add_argument("--policy", default="optimal",
                   choices=["optimal", "fair", "importance", "allon", "grid"])
    s.add_argument("--mode", default="independent", choices=["independent", "joint"])
    s.add_argument("--solver-config", help="solver tolerance JSON")
    s.add_argument("--out", help="output path (default stdout)")
    s.set_defaults(func=_cmd_solve)

    m = sub.add_parser("simulate", help="Monte Carlo check of a policy")
    m.add_argument("--scenario", required=True)
    m.add_argument("--policy-file", required=True)
    m.add_argument("--cycles", type=int, default=100000)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--sampler", default="auto", choices=["auto", "independent", "ising", "dg"])
    m.add_argument("--classify-trials", type=int, default=0,
                   help="also run the classifier proxy with this many trials")
    m.add_argument("--out", help="output path (default stdout)")
    m.set_defaults(func=_cmd_simulate)

    w = sub.add_parser("sweep", help="solve a family of scenarios along one parameter")
    w.add_argument("--scenario", required=True)
    w.add_argument("--kind", required=True, choices=["energy", "gamma", "correlation", "features"])
    w.add_argument("--values", required=True, help="comma separated sweep values")
    w.add_argument("--mode", default="independent", choices=["independent", "joint"])
    w.add_argument("--policies", default="optimal,fair,importance,allon")
    w.add_argument("--solver-config", help="solver tolerance JSON")
    w.add_argument("--sim-cycles", type=int, default=0)
    w.add_argument("--seed", type=int, default=0)
    w.add_argument("--out", help="output CSV path (default stdout)")
    w.set_defaults(func=_cmd_sweep)

    c = sub.add_parser("sample-check", help="empirical moments of the schedule samplers")
    c.add_argument("--policy-file", required=True)
    c.add_argument("--samplers", default="independent,ising,dg")
    c.add_argument("--num", type=int, default=200000)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--out", help="output path (default stdout)")
    c.set_defaults(func=_cmd_sample_check)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
