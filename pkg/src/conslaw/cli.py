"""Command-line entry point: ``conslaw <command> [flags]``.

Commands: solve, count, closed-form, compare, simulate, free-flow. Every
report is deterministic JSON embedding the normalized config, seeds, witness
points and library version. Exit codes: 0 ok, 1 assertion failure (with a
``mismatch`` block), 2 config error.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from .model import Architecture, ConfigError, MetricSpec

EXIT_OK, EXIT_MISMATCH, EXIT_CONFIG = 0, 1, 2

COMMANDS = ("solve", "count", "closed-form", "compare", "simulate", "free-flow")

_INT = {"type": "integer", "minimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}
_EXACT = {"type": ["string", "integer"]}
_NUM = {"type": "number"}

JOB_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["command"],
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "architecture": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["linear", "relu2"]},
                "dims": {"type": "array", "items": _POS_INT, "minItems": 3},
                "nmr": {"type": "array", "items": _POS_INT, "minItems": 3, "maxItems": 3},
                "bias": {"type": "boolean"},
                "out_bias": {"type": "boolean"},
            },
        },
        "metric": {"enum": ["euclidean", "mirror", "icnn", "natural"]},
        "mode": {"enum": ["gf", "mf"]},
        "flow": {"enum": ["gf", "heavy_ball", "nesterov"]},
        "tau": _EXACT,
        "degree": _POS_INT,
        "time_cap": _INT,
        "cap": _POS_INT,
        "seed": {"type": "integer", "minimum": 0, "maximum": 2**64 - 1},
        "simulation": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "mu": {"type": "number", "minimum": 0},
                "nu": {"type": "number", "minimum": 0},
                "delta": {"type": "number", "exclusiveMinimum": 0},
                "steps": _POS_INT,
                "samples": _POS_INT,
                "velocity_seed": {"type": ["integer", "null"], "minimum": 0},
                "tolerance": {"type": ["number", "null"], "minimum": 0},
                "every": _POS_INT,
            },
        },
        "free_flow": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "tau": {"type": "number", "exclusiveMinimum": 0},
                "horizon": {"type": "number", "exclusiveMinimum": 0},
                "steps": _POS_INT,
                "seeds": _POS_INT,
                "dim": _POS_INT,
                "tolerance": {"type": "number", "minimum": 0},
            },
        },
        "output": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "path": {"type": ["string", "null"]},
                "format": {"enum": ["json", "csv"]},
            },
        },
    },
}

SWEEP_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["jobs"],
    "properties": {"jobs": {"type": "array", "items": JOB_SCHEMA, "minItems": 1}},
}

SIM_DEFAULTS = {"mu": 0.0, "nu": 1.0, "delta": 1e-3, "steps": 1000, "samples": 16,
                "velocity_seed": None, "tolerance": None, "every": 1}
FREE_DEFAULTS = {"tau": 1.0, "horizon": 2.0, "steps": 2000, "seeds": 10, "dim": 4,
                 "tolerance": 1e-9}


def _frac_str(x) -> str:
    x = Fraction(x)
    return f"{x.numerator}/{x.denominator}"


def _point(p) -> list:
    return [_frac_str(v) for v in p]


# ---------------------------------------------------------------------------
# config normalization


def validate(config: dict) -> None:
    schema = SWEEP_SCHEMA if "jobs" in config else JOB_SCHEMA
    try:
        jsonschema.validate(config, schema)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from None


def _architecture(cfg: dict) -> Architecture:
    a = cfg.get("architecture")
    if a is None:
        raise ConfigError("an architecture block is required for this command")
    if ("dims" in a) == ("nmr" in a):
        raise ConfigError("give exactly one of architecture.dims and architecture.nmr")
    bias, out_bias = a.get("bias", False), a.get("out_bias", False)
    if "nmr" in a:
        n, m, r = a["nmr"]
        if a["kind"] == "linear":
            if bias or out_bias:
                raise ConfigError("biases are only supported for relu2")
            return Architecture.linear_nmr(n, m, r)
        return Architecture("relu2", (n, m, r), bias, out_bias)
    return Architecture(a["kind"], tuple(a["dims"]), bias, out_bias)


def _flow_name(cfg: dict) -> str:
    mode, flow = cfg.get("mode"), cfg.get("flow")
    if flow is None:
        return "heavy_ball" if mode == "mf" else "gf"
    if mode is not None and (mode == "gf") != (flow == "gf"):
        raise ConfigError(f"mode {mode!r} contradicts flow {flow!r}")
    return flow


def _exact_tau(cfg: dict) -> Fraction:
    try:
        tau = Fraction(str(cfg.get("tau", 0)))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"tau must be an exact rational 'p/q', got {cfg.get('tau')!r}") from None
    if tau < 0:
        raise ConfigError("tau must be >= 0")
    return tau


def normalize(config: dict) -> dict:
    """Validate ``config`` and fill defaults; the result is embedded in reports."""
    validate(config)
    cfg = copy.deepcopy(config)
    cmd = cfg["command"]
    cfg.setdefault("seed", 0)
    cfg["output"] = {"path": None, "format": "json", **cfg.get("output", {})}
    if cfg["output"]["format"] == "csv" and cmd != "simulate":
        raise ConfigError("csv output is only available for simulate")
    if cmd == "free-flow":
        cfg["free_flow"] = {**FREE_DEFAULTS, **cfg.get("free_flow", {})}
        return cfg
    arch = _architecture(cfg)
    cfg["architecture"] = arch.to_json()
    cfg.setdefault("metric", "euclidean")
    if cmd == "simulate":
        cfg["simulation"] = {**SIM_DEFAULTS, **cfg.get("simulation", {})}
        for key in ("mode", "flow", "tau", "degree", "time_cap", "cap"):
            if key in cfg:
                raise ConfigError(f"{key!r} does not apply to simulate (use simulation.mu / nu)")
        return cfg
    if cfg["metric"] == "natural":
        raise ConfigError("the natural metric is only available for simulate")
    flow = _flow_name(cfg)
    cfg["flow"] = flow
    cfg["mode"] = "gf" if flow == "gf" else "mf"
    if flow == "heavy_ball":
        cfg["tau"] = _frac_str(_exact_tau(cfg))
    elif "tau" in cfg:
        raise ConfigError(f"tau does not apply to flow {flow!r}")
    cfg.setdefault("cap", 8)
    return cfg


def _system(cfg: dict):
    from .lift import FlowSpec, build_system

    arch = Architecture.from_json(cfg["architecture"])
    metric = MetricSpec(MetricSpec.CONFIG_NAMES[cfg["metric"]])
    flow = FlowSpec.from_json({k: cfg[k] for k in ("flow", "tau") if k in cfg})
    return build_system(arch, metric, flow)


# ---------------------------------------------------------------------------
# commands


def _system_block(system) -> dict:
    return {"mode": system.mode, "D": system.D, "ambient": system.ambient,
            "variables": list(system.space.names),
            "time_variable": system.space.time_kind,
            "generators": len(system.fields)}


def _solve(system, cfg):
    from .solver import solve_system

    return solve_system(system, cfg.get("degree"), cfg.get("time_cap"), cfg["seed"])


def _solver_block(basis) -> dict:
    return {"degree": basis.degree, "time_degree_cap": basis.time_degree_cap,
            "count": len(basis.laws), "independent": basis.independent,
            "laws": [h.to_json() for h in basis.laws],
            "witness": _point(basis.witness), "witness_certificate": basis.witness_certificate,
            "witness_attempts": basis.witness_attempts,
            "ansatz_columns": basis.columns, "equations": basis.rows, "blocks": basis.blocks}


def _lie_block(rep) -> dict:
    return {"dim": rep.dim, "ambient": rep.ambient, "law_count": rep.law_count,
            "iterations": rep.iterations, "stabilized": rep.stabilized, "stop": rep.stop,
            "exact": rep.stop in ("stabilized", "saturated"),
            "history": list(rep.history), "basis_size": rep.basis_size,
            "witness": _point(rep.witness), "witness_certificate": rep.certificate}


def cmd_solve(cfg):
    system = _system(cfg)
    basis = _solve(system, cfg)
    return {"system": _system_block(system), "solver": _solver_block(basis)}, EXIT_OK


def cmd_count(cfg):
    from .lie import lie_count

    system = _system(cfg)
    rep = lie_count(system, cap=cfg["cap"], seed=cfg["seed"])
    return {"system": _system_block(system), "lie": _lie_block(rep)}, EXIT_OK


def _family_id(fam) -> str:
    params = ",".join(f"{k}={json.dumps(v, separators=(',', ':'))}"
                      for k, v in sorted(fam.params.items()))
    return f"{fam.name}[{params}]"


def cmd_closed_form(cfg):
    from .laws import closed_form_laws
    from .solver import count_independent, verify_law
    from .witness import find_witness

    system = _system(cfg)
    fams = closed_form_laws(system)
    witness, _ = find_witness(system.space, system.certificate, cfg["seed"])
    rows, failed = [], []
    for fam in fams:
        ok = verify_law(fam.realization, system.fields)
        if not ok:
            failed.append(_family_id(fam))
        rows.append({"id": _family_id(fam), "annihilated": ok, **fam.to_json()})
    report = {"system": _system_block(system), "families": rows, "count": len(fams),
              "independent": count_independent([f.realization for f in fams], witness) if fams else 0,
              "witness": _point(witness)}
    if failed:
        report["mismatch"] = {"code": "closed form not annihilated", "families": failed}
        return report, EXIT_MISMATCH
    return report, EXIT_OK


def _formula(system, cfg):
    from .laws import formula_count

    if system.flow.kind == "nesterov":
        return None
    got = formula_count(system.arch, system.metric.kind, system.mode)
    if got is None:
        return None
    return {"count": got[0], "source": got[1]}


def cmd_compare(cfg):
    from .lie import lie_count

    system = _system(cfg)
    basis = _solve(system, cfg)
    # each verified law bounds the trace dimension by ambient - independent
    bound = system.ambient - basis.independent
    rep = lie_count(system, cap=cfg["cap"], seed=cfg["seed"], upper_bound=bound)
    formula = _formula(system, cfg)
    counts = {"solver": basis.independent, "lie": rep.law_count,
              "formula": None if formula is None else formula["count"]}
    report = {"system": _system_block(system), "solver": _solver_block(basis),
              "lie": _lie_block(rep), "formula": formula, "counts": counts}
    mismatch = None
    if basis.independent > rep.law_count:
        mismatch = {"code": "solver exceeds lie",
                    "hint": "solver found more independent laws than the Lie bound allows; this is a bug"}
    elif basis.independent < rep.law_count:
        mismatch = {"code": "raise degree",
                    "hint": "the Lie count allows more laws than the degree-bounded solver found"}
        if not (rep.stop in ("stabilized", "saturated")):
            mismatch["hint"] += "; the Lie dimension is only a lower bound (raise --cap)"
    elif formula is not None and formula["count"] != basis.independent:
        mismatch = {"code": "formula mismatch",
                    "hint": "solver and Lie counts agree but differ from the closed formula"}
    report["agree"] = mismatch is None
    if mismatch:
        mismatch.update(counts)
        report["mismatch"] = mismatch
        return report, EXIT_MISMATCH
    return report, EXIT_OK


def _simulation_laws(arch, metric, mu, nu):
    from .laws import (balancedness_gf_laws, icnn_gf_laws, nmf_gf_laws,
                       pca_momentum_laws)
    from .lift import FlowSpec

    if metric in ("euclidean", "natural"):
        fams = balancedness_gf_laws(arch)
    elif metric == "mirror":
        fams = nmf_gf_laws(arch) if arch.kind == "linear" and arch.is_two_layer else []
    else:
        fams = icnn_gf_laws(arch)
    if mu > 0 and metric == "euclidean" and arch.kind == "linear":
        tau = Fraction(str(nu)) / Fraction(str(mu))
        fams = fams + pca_momentum_laws(arch, FlowSpec("heavy_ball", tau))
    return fams


def cmd_simulate(cfg):
    from .dynamics import (evaluate_drift, init_theta, make_synthetic_dataset,
                           simulate_flow, write_drift_csv)

    arch = Architecture.from_json(cfg["architecture"])
    sim, seed, metric = cfg["simulation"], cfg["seed"], cfg["metric"]
    data = make_synthetic_dataset(arch, sim["samples"], seed)
    theta0 = init_theta(arch, seed, metric)
    v0 = None
    if sim["velocity_seed"] is not None:
        v0 = np.random.default_rng(sim["velocity_seed"]).standard_normal(arch.D)
    run = simulate_flow(arch, data, theta0, metric, sim["mu"], sim["nu"], sim["delta"],
                        sim["steps"], seed, thetadot0=v0)
    fams = _simulation_laws(arch, metric, sim["mu"], sim["nu"])
    ids = [_family_id(f) for f in fams]
    reports = evaluate_drift(run, fams, ids)
    body = run.manifest()
    body["laws"] = [{"law_id": r.law_id, "max_abs_drift": r.max_abs_drift,
                     "relative_drift": r.relative_drift, "initial": float(r.values[0]),
                     "velocity": r.velocity_convention} for r in reports]
    out = cfg["output"]
    if out["format"] == "csv":
        if not out["path"]:
            raise ConfigError("csv output needs --out")
        write_drift_csv(out["path"], run, reports, sim["every"])
        body["drift_csv"] = str(out["path"])
    worst = max((r.max_abs_drift for r in reports if not r.law_id.startswith("pca_mf")),
                default=0.0)
    body["max_gf_law_drift"] = worst
    tol = sim["tolerance"]
    if tol is not None and worst > tol:
        body["mismatch"] = {"code": "drift above tolerance", "max_drift": worst, "tolerance": tol}
        return body, EXIT_MISMATCH
    return body, EXIT_OK


def cmd_free_flow(cfg):
    from ._kernels import rk4_damped
    from .lift import free_flow_invariant_pair

    ff = cfg["free_flow"]
    rows, worst = [], 0.0
    for k in range(ff["seeds"]):
        rng = np.random.default_rng(cfg["seed"] + k)
        th0, v0 = rng.standard_normal(ff["dim"]), rng.standard_normal(ff["dim"])
        pair = free_flow_invariant_pair(th0, v0, ff["tau"])
        ts, th, vel = rk4_damped(th0, v0, float(ff["tau"]), float(ff["horizon"]), int(ff["steps"]))
        a = np.array([pair.invariant_a(t, x, v) for t, x, v in zip(ts, th, vel)])
        b = np.array([pair.invariant_b(t, x, v) for t, x, v in zip(ts, th, vel)])
        da, db = float(np.abs(a - a[0]).max()), float(np.abs(b - b[0]).max())
        exact = float(np.abs(th - np.array([pair.trajectory(t)[0] for t in ts])).max())
        worst = max(worst, da, db)
        rows.append({"seed": cfg["seed"] + k, "max_drift_a": da, "max_drift_b": db,
                     "max_trajectory_error": exact})
    body = {"runs": rows, "max_drift": worst, "tolerance": ff["tolerance"],
            "integrator": "classical RK4"}
    if worst > ff["tolerance"]:
        body["mismatch"] = {"code": "invariant drift above tolerance", "max_drift": worst}
        return body, EXIT_MISMATCH
    return body, EXIT_OK


HANDLERS = {"solve": cmd_solve, "count": cmd_count, "closed-form": cmd_closed_form,
            "compare": cmd_compare, "simulate": cmd_simulate, "free-flow": cmd_free_flow}


def run(config: dict) -> tuple:
    """Execute one job; returns (report dict, exit code). Never raises ConfigError."""
    from .dynamics import FlowAborted

    try:
        cfg = normalize(config)
    except ConfigError as exc:
        return {"error": str(exc), "version": __version__}, EXIT_CONFIG
    head = {"command": cfg["command"], "version": __version__, "seed": cfg["seed"],
            "config": cfg}
    try:
        body, code = HANDLERS[cfg["command"]](cfg)
    except ConfigError as exc:
        return {**head, "error": str(exc)}, EXIT_CONFIG
    except FlowAborted as exc:
        return {**head, "mismatch": {"code": "flow aborted", "step": exc.step,
                                     "message": str(exc)}}, EXIT_MISMATCH
    return {**head, **body}, code


def dumps(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def _emit(report: dict, cfg_out: dict | None):
    path = (cfg_out or {}).get("path")
    if path and (cfg_out or {}).get("format", "json") == "json":
        Path(path).write_text(dumps(report))
    elif path:  # csv already written; manifest goes next to it
        Path(str(path) + ".manifest.json").write_text(dumps(report))
    else:
        sys.stdout.write(dumps(report))


def _run_job(config):
    report, code = run(config)
    return report, code


def run_sweep(configs: list, jobs: int = 1) -> tuple:
    if jobs <= 1:
        results = [_run_job(c) for c in configs]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_job, configs))
    code = max(c for _, c in results)
    return {"version": __version__, "jobs": [r for r, _ in results],
            "exit_codes": [c for _, c in results]}, code


# ---------------------------------------------------------------------------
# argument parsing


def _int_list(text):
    try:
        return [int(x) for x in text.replace("x", ",").split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="conslaw", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"conslaw {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON job file (single job or {\"jobs\": [...]})")
        s.add_argument("--arch", choices=["linear", "relu2"])
        s.add_argument("--dims", type=_int_list, help="native dims, e.g. 2,2,2")
        s.add_argument("--nmr", type=_int_list, help="two-layer (n,m,r) triple")
        s.add_argument("--bias", action="store_true", default=None)
        s.add_argument("--out-bias", action="store_true", default=None)
        s.add_argument("--metric", choices=["euclidean", "mirror", "icnn", "natural"])
        s.add_argument("--mode", choices=["gf", "mf"])
        s.add_argument("--flow", choices=["gf", "heavy_ball", "nesterov"])
        s.add_argument("--tau", help="exact rational p/q (heavy ball)")
        s.add_argument("--degree", type=int)
        s.add_argument("--time-cap", type=int)
        s.add_argument("--cap", type=int, help="Lie iteration cap")
        s.add_argument("--seed", type=int)
        s.add_argument("--out")
        s.add_argument("--format", choices=["json", "csv"])
        s.add_argument("--jobs", type=int, default=1, help="parallel workers for a sweep")
        if name == "simulate":
            s.add_argument("--mu", type=float)
            s.add_argument("--nu", type=float)
            s.add_argument("--delta", type=float)
            s.add_argument("--steps", type=int)
            s.add_argument("--samples", type=int)
            s.add_argument("--velocity-seed", type=int)
            s.add_argument("--tolerance", type=float)
            s.add_argument("--every", type=int)
        if name == "free-flow":
            s.add_argument("--horizon", type=float)
            s.add_argument("--steps", type=int)
            s.add_argument("--seeds", type=int)
            s.add_argument("--dim", type=int)
            s.add_argument("--tolerance", type=float)
    return p


def config_from_args(args) -> dict:
    """Inline flags layered over the optional --config file."""
    if args.config:
        try:
            cfg = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    else:
        cfg = {}
    if "jobs" in cfg:
        return cfg
    cfg.setdefault("command", args.command)
    if cfg["command"] != args.command:
        raise ConfigError(f"config command {cfg['command']!r} differs from {args.command!r}")
    if args.arch or args.dims or args.nmr or args.bias or args.out_bias:
        arch = dict(cfg.get("architecture", {}))
        if args.arch:
            arch["kind"] = args.arch
        if args.dims:
            arch.pop("nmr", None)
            arch["dims"] = args.dims
        if args.nmr:
            arch.pop("dims", None)
            arch["nmr"] = args.nmr
        if args.bias:
            arch["bias"] = True
        if args.out_bias:
            arch["out_bias"] = True
        arch.setdefault("kind", "linear")
        cfg["architecture"] = arch
    for key, attr in (("metric", "metric"), ("mode", "mode"), ("flow", "flow"), ("tau", "tau"),
                      ("degree", "degree"), ("time_cap", "time_cap"), ("cap", "cap"),
                      ("seed", "seed")):
        val = getattr(args, attr)
        if val is not None:
            cfg[key] = val
    if args.out or args.format:
        out = dict(cfg.get("output", {}))
        if args.out:
            out["path"] = args.out
        if args.format:
            out["format"] = args.format
        cfg["output"] = out
    if args.command == "simulate":
        sim = dict(cfg.get("simulation", {}))
        for key in ("mu", "nu", "delta", "steps", "samples", "velocity_seed", "tolerance", "every"):
            val = getattr(args, key)
            if val is not None:
                sim[key] = val
        if sim:
            cfg["simulation"] = sim
    if args.command == "free-flow":
        ff = dict(cfg.get("free_flow", {}))
        if args.tau is not None:
            cfg.pop("tau", None)
            try:
                ff["tau"] = float(Fraction(args.tau))
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"bad tau {args.tau!r}") from None
        for key in ("horizon", "steps", "seeds", "dim", "tolerance"):
            val = getattr(args, key)
            if val is not None:
                ff[key] = val
        if ff:
            cfg["free_flow"] = ff
    return cfg


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = config_from_args(args)
        if "jobs" in cfg:
            validate(cfg)
            report, code = run_sweep(cfg["jobs"], args.jobs)
            out = {"path": args.out, "format": "json"}
        else:
            report, code = run(cfg)
            out = report.get("config", {}).get("output")
    except ConfigError as exc:
        report, code, out = {"error": str(exc), "version": __version__}, EXIT_CONFIG, None
    _emit(report, out)
    if code == EXIT_CONFIG:
        print(f"conslaw: config error: {report.get('error')}", file=sys.stderr)
    elif code == EXIT_MISMATCH:
        print(f"conslaw: mismatch: {report.get('mismatch', {}).get('code', 'see report')}",
              file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
