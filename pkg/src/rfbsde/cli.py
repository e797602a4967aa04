"""Command-line orchestration: config parsing, pipelines, artifact emission.

Subcommands: ``solve`` (obstacle PDE -> surface/residual/law CSVs), ``cost``
(one cost evaluation by Monte Carlo, closed loop or tree), ``verify`` (one of
the three verification routes, nonzero exit on failure), ``assumptions``
(sampled assumption report) and ``paper`` (preset end-to-end bundles for the
two built-in examples).

Configs are YAML with a fixed nested schema; unknown keys are errors.  Exit
codes: 0 pass, 1 verification failure, 2 config error, 3 numerical failure.
Every failure prints one machine-greppable ``ERROR[kind]: ...`` line on
stderr.  Re-running a command with an identical config reproduces the CSV
artifacts byte for byte (the manifest records timings, which vary).
"""

import argparse
import copy
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .errors import (BackwardSolverError, ConfigError, EvaluationError,
                     RfbsdeError, SimulationError, StabilityError)
from .hjb import (SpaceTimeGrid, candidate_surface, residual,
                  solve_obstacle_hjb, write_surface_csv)
from .model import ProbeGrid, build_model, validate_assumptions
from .rbsde import SolverConfig, cost_functional, tree_oracle
from .simulate import OpenLoopControl, TimeGrid
from .synthesis import FeedbackLaw, evaluate_feedback, extract_feedback, write_law_csv
from .verify import (MembershipProbe, TripleTables, VerifyConfig,
                     build_control_battery, tables_from_surface,
                     verify_classical, verify_feedback_optimality,
                     verify_viscosity_conditions)

DEFAULTS = {
    "model": {"name": "example-classical", "horizon": 1.0, "control_points": 5},
    "pde": {"t_steps": 400, "x_steps": 100, "x_min": 0.1, "x_max": 5.0,
            "scheme": "explicit", "cfl": "auto", "boundary": "extrap2",
            "penalty_level": None, "surface": "computed"},
    "mc": {"paths": 20000, "steps": 100, "seed": 7,
           "start_time": 0.0, "start_state": 1.0},
    "estimator": {"kind": "poly", "degree": 3, "bins": 32},
    "penalty": {"n": 100.0},
    "solver": {"picard_iterations": 3},
    "tolerances": {"obstacle": 1e-9, "skorokhod": 1e-8, "z_match": 0.1,
                   "membership": 0.02, "nonmember": 0.05, "bias_budget": 0.05},
    "cost": {"method": "reflected", "control": 0.0, "tree_depth": 16},
    "verify": {"mode": "classical", "surface": "candidate", "constant_law": None,
               "control": None, "tables": "surface",
               "battery_random": 20, "battery_switches": 8,
               "membership_times": 16, "membership_paths": 64,
               "node_samples": 64,
               "triple": {"time_slope": 0.0, "gradient": 1.0, "curvature": 0.0}},
    "assumptions": {"t_min": 0.0, "t_max": 1.0, "x_min": -5.0, "x_max": 5.0,
                    "points": 9},
    "output": {"directory": "out"},
    "workers": 1,
}

_CANDIDATE_FOR = {"example-classical": "candidate-classical",
                  "example-viscosity": "candidate-viscosity"}


def _merge(base, update, path=""):
    out = copy.deepcopy(base)
    for key, val in update.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key '{where}'")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"config key '{where}' must be a mapping")
            out[key] = _merge(base[key], val, where)
        else:
            out[key] = val
    return out


def _coerce(text):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if text.lower() in ("none", "null"):
        return None
    return text


def _apply_overrides(cfg, pairs, prefix=""):
    for pair in pairs or []:
        if "=" not in pair:
            raise ConfigError(f"override '{pair}' must look like key=value")
        key, val = pair.split("=", 1)
        key = prefix + key
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            if part not in node or not isinstance(node[part], dict):
                raise ConfigError(f"unknown config key '{key}'")
            node = node[part]
        if parts[-1] not in node:
            raise ConfigError(f"unknown config key '{key}'")
        node[parts[-1]] = _coerce(val)
    return cfg


def load_config(path, sets=None, tols=None, seed=None, out=None, workers=None,
                base=None):
    cfg = copy.deepcopy(DEFAULTS if base is None else base)
    if path is not None:
        with open(path) as fh:
            user = yaml.safe_load(fh) or {}
        if not isinstance(user, dict):
            raise ConfigError("config root must be a mapping")
        cfg = _merge(cfg, user)
    _apply_overrides(cfg, sets)
    _apply_overrides(cfg, tols, prefix="tolerances.")
    if seed is not None:
        cfg["mc"]["seed"] = int(seed)
    if out is not None:
        cfg["output"]["directory"] = out
    if workers is not None:
        cfg["workers"] = int(workers)
    return cfg


def _config_hash(cfg):
    # hash the computation inputs; output location and worker hints are not
    payload = {k: v for k, v in cfg.items() if k not in ("output", "workers")}
    return hashlib.sha256(
        json.dumps(payload, sort_keys=True, default=str).encode()).hexdigest()


class _Run:
    """Output directory plus manifest bookkeeping for one invocation."""

    def __init__(self, cfg, command):
        self.cfg = cfg
        self.command = command
        self.out = Path(cfg["output"]["directory"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.timings = {}
        self.extra = {}
        self._t0 = time.time()

    def path(self, name):
        p = self.out / name
        self.artifacts.append(str(p))
        return p

    def finish(self):
        manifest = {
            "command": self.command,
            "config_sha256": _config_hash(self.cfg),
            "artifacts": sorted(self.artifacts),
            "timings_s": {**self.timings, "total": round(time.time() - self._t0, 3)},
            "version": __version__,
            "workers": self.cfg["workers"],
            **self.extra,
        }
        p = self.out / "manifest.json"
        with open(p, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        return manifest


def _model_from(cfg):
    mc = cfg["model"]
    return build_model(mc["name"], horizon=float(mc["horizon"]),
                       control_points=int(mc["control_points"]))


def _solver_config(cfg):
    t = cfg["tolerances"]
    return SolverConfig(estimator=cfg["estimator"]["kind"],
                        degree=int(cfg["estimator"]["degree"]),
                        bins=int(cfg["estimator"]["bins"]),
                        penalty_level=float(cfg["penalty"]["n"]),
                        picard_iterations=int(cfg["solver"]["picard_iterations"]),
                        tol_obstacle=float(t["obstacle"]),
                        tol_skorokhod=float(t["skorokhod"]))


def _verify_config(cfg):
    t = cfg["tolerances"]
    v = cfg["verify"]
    probe = MembershipProbe(member_tol=float(t["membership"]),
                            nonmember_tol=float(t["nonmember"]),
                            seed=int(cfg["mc"]["seed"]))
    return VerifyConfig(n_paths=int(cfg["mc"]["paths"]),
                        steps=int(cfg["mc"]["steps"]),
                        seed=int(cfg["mc"]["seed"]),
                        solver=_solver_config(cfg),
                        bias_budget=float(t["bias_budget"]),
                        z_tol=float(t["z_match"]),
                        battery_random=int(v["battery_random"]),
                        battery_switches=int(v["battery_switches"]),
                        membership_times=int(v["membership_times"]),
                        membership_paths=int(v["membership_paths"]),
                        node_samples=int(v["node_samples"]),
                        probe=probe)


def _pde_grid(cfg, model):
    p = cfg["pde"]
    return SpaceTimeGrid(horizon=model.horizon, x_min=float(p["x_min"]),
                         x_max=float(p["x_max"]), t_steps=int(p["t_steps"]),
                         x_steps=int(p["x_steps"]))


def _surface_for(cfg, model):
    if cfg["verify"]["surface"] == "candidate":
        name = _CANDIDATE_FOR.get(model.name)
        if name is not None:
            return candidate_surface(name, _pde_grid(cfg, model))
    p = cfg["pde"]
    return solve_obstacle_hjb(model, _pde_grid(cfg, model),
                              scheme=p["scheme"], cfl=p["cfl"],
                              boundary=p["boundary"],
                              penalty_level=p["penalty_level"])


def cmd_solve(cfg):
    run = _Run(cfg, "solve")
    model = _model_from(cfg)
    grid = _pde_grid(cfg, model)
    p = cfg["pde"]
    t0 = time.time()
    if p["surface"] == "candidate":
        name = _CANDIDATE_FOR.get(model.name)
        if name is None:
            raise ConfigError(f"no candidate surface for model '{model.name}'")
        surface = candidate_surface(name, grid)
    else:
        surface = solve_obstacle_hjb(model, grid, scheme=p["scheme"],
                                     cfl=p["cfl"], boundary=p["boundary"],
                                     penalty_level=p["penalty_level"])
    run.timings["solve"] = round(time.time() - t0, 3)
    write_surface_csv(surface, run.path("surface.csv"))

    res = residual(surface, model)
    with open(run.path("residual.csv"), "w") as fh:
        fh.write("# residual field (NaN at edges and kink columns)\n")
        fh.write("time," + ",".join(repr(float(x)) for x in grid.xs) + "\n")
        for i, t in enumerate(grid.times):
            fh.write(repr(float(t)) + "," + ",".join(repr(float(v)) for v in res[i]) + "\n")

    law = extract_feedback(surface, model)
    write_law_csv(law, run.path("law.csv"))

    finite = res[np.isfinite(res)]
    tt, xx = np.meshgrid(grid.times, grid.xs, indexing="ij")
    barrier = np.asarray(model.obstacle(tt, xx), dtype=float)
    violation = float(np.maximum(surface.values - barrier, 0.0).max())
    run.extra["kink_columns"] = list(surface.kink_columns)
    run.extra["residual_max"] = float(finite.max()) if finite.size else 0.0
    run.extra["obstacle_violation_max"] = violation
    run.finish()
    print(f"surface: {surface.provenance}")
    print(f"residual max (interior): {run.extra['residual_max']:.6g}")
    print(f"obstacle violation max: {violation:.6g}")
    if surface.kink_columns:
        print(f"kink columns: {list(surface.kink_columns)}")
    return 0


def cmd_cost(cfg):
    run = _Run(cfg, "cost")
    model = _model_from(cfg)
    mc = cfg["mc"]
    method = cfg["cost"]["method"]
    u0 = float(cfg["cost"]["control"])
    t0 = time.time()
    if method == "reflected":
        grid = TimeGrid(float(mc["start_time"]), model.horizon, int(mc["steps"]))
        est = cost_functional(model, float(mc["start_time"]),
                              float(mc["start_state"]),
                              OpenLoopControl.constant(u0), grid,
                              int(mc["paths"]), int(mc["seed"]),
                              _solver_config(cfg))
        value, stderr = est.value, est.stderr
    elif method == "feedback":
        surface = _surface_for(cfg, model)
        law = extract_feedback(surface, model)
        grid = TimeGrid(float(mc["start_time"]), model.horizon, int(mc["steps"]))
        est = evaluate_feedback(model, law, float(mc["start_time"]),
                                float(mc["start_state"]), grid,
                                int(mc["paths"]), int(mc["seed"]),
                                _solver_config(cfg), allow_irregular=True)
        value, stderr = est.value, est.stderr
    elif method == "tree":
        value = tree_oracle(model, float(mc["start_time"]),
                            float(mc["start_state"]),
                            lambda t, x: u0, int(cfg["cost"]["tree_depth"]))
        stderr = 0.0
    else:
        raise ConfigError(f"unknown cost method '{method}'")
    run.timings["cost"] = round(time.time() - t0, 3)

    row = (f"{model.name},{method},{mc['start_time']!r},{mc['start_state']!r},"
           f"{u0!r},{value!r},{stderr!r},{mc['seed']}\n")
    path = run.path("cost.csv")
    header = "model,method,start_time,start_state,control,value,stderr,seed\n"
    exists = path.exists()
    with open(path, "a") as fh:
        if not exists:
            fh.write(header)
        fh.write(row)
    run.finish()
    print(f"J = {value:.6g} +/- {stderr:.2g}")
    return 0


def _write_report(run, report):
    with open(run.path("report.json"), "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
    with open(run.path("report.txt"), "w") as fh:
        fh.write("\n".join(report.summary_lines()) + "\n")
    for line in report.summary_lines():
        print(line)


def cmd_verify(cfg):
    run = _Run(cfg, "verify")
    model = _model_from(cfg)
    vcfg = _verify_config(cfg)
    v = cfg["verify"]
    mc = cfg["mc"]
    start_time = float(mc["start_time"])
    start_state = float(mc["start_state"])
    surface = _surface_for(cfg, model)

    if v["mode"] == "classical":
        if v["constant_law"] is not None:
            law = FeedbackLaw.constant(float(v["constant_law"]), model.control_set)
        else:
            law = extract_feedback(surface, model)
        battery = build_control_battery(model, start_time, vcfg.seed,
                                        vcfg.battery_random,
                                        vcfg.battery_switches)
        report = verify_classical(model, surface, start_time, start_state,
                                  law, battery, vcfg)
    elif v["mode"] == "viscosity":
        u0 = v["control"]
        if u0 is None:
            u0 = model.control_set.bounds[0][0]
        tr = v["triple"]
        triple = (float(tr["time_slope"]), float(tr["gradient"]),
                  float(tr["curvature"]))
        battery = build_control_battery(model, start_time, vcfg.seed,
                                        min(vcfg.battery_random, 5),
                                        vcfg.battery_switches)
        report = verify_viscosity_conditions(
            model, surface, start_time, start_state,
            OpenLoopControl.constant(float(u0)),
            lambda s, x: triple, vcfg, battery=battery)
    elif v["mode"] == "feedback":
        if v["constant_law"] is not None:
            law = FeedbackLaw.constant(float(v["constant_law"]), model.control_set)
        else:
            law = extract_feedback(surface, model)
        if v["tables"] == "surface":
            tables = tables_from_surface(surface)
        else:
            tr = v["triple"]
            shape = surface.values.shape
            tables = TripleTables(
                time_slope=np.full(shape, float(tr["time_slope"])),
                gradient=np.full(shape, float(tr["gradient"])),
                curvature=np.full(shape, float(tr["curvature"])))
        report = verify_feedback_optimality(model, surface, law, tables,
                                            start_time, start_state, vcfg)
    else:
        raise ConfigError(f"unknown verify mode '{v['mode']}'")

    _write_report(run, report)
    run.extra["status"] = report.status
    run.finish()
    if report.status != "pass":
        print(f"ERROR[verify]: aggregate status {report.status}", file=sys.stderr)
        return 1
    return 0


def cmd_assumptions(cfg):
    run = _Run(cfg, "assumptions")
    model = _model_from(cfg)
    a = cfg["assumptions"]
    probe = ProbeGrid(time_bounds=(float(a["t_min"]), float(a["t_max"])),
                      state_bounds=(float(a["x_min"]), float(a["x_max"])),
                      points=int(a["points"]))
    report = validate_assumptions(model, probe, seed=int(cfg["mc"]["seed"]))
    lines = report.summary_lines()
    with open(run.path("assumptions.txt"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    run.extra["passed"] = report.passed
    run.finish()
    for line in lines:
        print(line)
    return 0


_PAPER_PRESETS = {
    "5.1": {
        "model": {"name": "example-classical"},
        "pde": {"t_steps": 4000, "x_steps": 200, "x_min": 0.1, "x_max": 5.0},
        "mc": {"paths": 20000, "steps": 100, "start_state": 1.0},
        "verify": {"mode": "classical", "battery_random": 5},
        "assumptions": {"x_min": -5.0, "x_max": 5.0},
    },
    "5.2": {
        "model": {"name": "example-viscosity"},
        "pde": {"t_steps": 2000, "x_steps": 200, "x_min": -5.0, "x_max": 5.0},
        "mc": {"paths": 5000, "steps": 100, "start_state": 0.0},
        "verify": {"mode": "viscosity", "control": 1.0, "battery_random": 3,
                   "triple": {"time_slope": 0.0, "gradient": 1.0,
                              "curvature": 0.0}},
        "cost": {"control": 1.0},
    },
}


def cmd_paper(cfg, example_id):
    base = Path(cfg["output"]["directory"]) / f"example-{example_id}"
    summary = []
    for sub, fn in (("assumptions", cmd_assumptions), ("solve", cmd_solve),
                    ("cost", cmd_cost), ("verify", cmd_verify)):
        sub_cfg = copy.deepcopy(cfg)
        sub_cfg["output"]["directory"] = str(base / sub)
        print(f"--- {sub} ---")
        code = fn(sub_cfg)
        summary.append((sub, "ok" if code == 0 else f"exit {code}"))
        if code != 0 and sub == "verify":
            return code
    base.mkdir(parents=True, exist_ok=True)
    with open(base / "summary.txt", "w") as fh:
        for sub, status in summary:
            fh.write(f"{sub}: {status}\n")
    print(f"bundle written under {base}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="rfbsde",
        description="stochastic control with reflected FBSDEs: solve, cost, "
                    "verify, assumptions, paper")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("solve", "cost", "verify", "assumptions", "paper"):
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="YAML config path")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None,
                       help="worker hint recorded in the manifest; the "
                            "numerics are vectorized")
        p.add_argument("--tol", action="append", default=None,
                       metavar="KEY=VAL", help="tolerance override")
        p.add_argument("--set", action="append", default=None, dest="sets",
                       metavar="KEY=VAL", help="dotted-path config override")
        if name == "paper":
            p.add_argument("example_id", help="5.1 or 5.2")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        base = None
        if args.command == "paper":
            if args.example_id not in _PAPER_PRESETS:
                raise ConfigError(
                    f"unknown example id '{args.example_id}'; valid ids: "
                    f"{sorted(_PAPER_PRESETS)}")
            base = _merge(DEFAULTS, _PAPER_PRESETS[args.example_id])
        cfg = load_config(args.config, sets=args.sets, tols=args.tol,
                          seed=args.seed, out=args.out, workers=args.workers,
                          base=base)
        if args.command == "solve":
            return cmd_solve(cfg)
        if args.command == "cost":
            return cmd_cost(cfg)
        if args.command == "verify":
            return cmd_verify(cfg)
        if args.command == "assumptions":
            return cmd_assumptions(cfg)
        return cmd_paper(cfg, args.example_id)
    except (ConfigError, yaml.YAMLError, FileNotFoundError) as exc:
        print(f"ERROR[config]: {exc}", file=sys.stderr)
        return 2
    except StabilityError as exc:
        print(f"ERROR[numerical]: {exc}", file=sys.stderr)
        return 3
    except (BackwardSolverError, SimulationError, EvaluationError) as exc:
        print(f"ERROR[numerical]: {exc}", file=sys.stderr)
        return 3
    except RfbsdeError as exc:
        print(f"ERROR[numerical]: {exc}", file=sys.stderr)
        return 3


def console_entry():
    sys.exit(main())
