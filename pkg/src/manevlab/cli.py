"""Experiment orchestration: validated scenario configs, simulation runs,
the epsilon-convergence and mass-dichotomy sweeps, the inequality suite, and
run-directory reporting.

Run directory layout (schema version 1):
    diagnostics.ndjson   one DiagnosticsRecord JSON object per cadence tick
    diagnostics.csv      same series as a wide CSV (fixed column order)
    checkpoint.bin/.npz  final state (phase grid binary / particle arrays)
    summary.json         resolved config, schema version, invariant checks,
                         collapse event (if any)

Exit codes: 0 success (collapse is an outcome, not an error), 2 config or
schema violation, 3 numerical divergence (partial output retained), 4 IO
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

try:
    import jsonschema
except ImportError:  # pragma: no cover
    jsonschema = None

from . import diagnostics as diag
from .errors import (
    CollapseError,
    ConfigError,
    DivergenceError,
    SingularEvaluationError,
)
from .inequalities import run_default_suite
from .kernels import KernelSpec
from .particles import (
    InitialDataSpec,
    ParticleEnsemble,
    SdeParams,
    run,
    sample_initial,
)
from .phase_grid import (
    PhaseGrid,
    load_checkpoint,
    save_checkpoint,
    strang_step,
    uniform_phase_grid,
)

SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "MANEVLAB_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_IO = 4

_KERNEL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "family": {"enum": [
            "manev-combined", "pure-manev", "coulomb",
            "power-law", "repulsive-power-law", "manev-2d",
        ]},
        "c_manev": {"type": "number", "minimum": 0},
        "c_coulomb": {"type": "number", "minimum": 0},
        "alpha": {"type": "number", "exclusiveMinimum": 0, "maximum": 2},
        "epsilon": {"type": "number", "minimum": 0},
        "dim": {"enum": [1, 2, 3]},
    },
}

_INITIAL_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "family": {"enum": [
            "gaussian-gaussian", "uniform-ball-maxwellian", "custom-tabulated",
        ]},
        "mass": {"type": "number", "exclusiveMinimum": 0},
        "position_scale": {"type": "number", "exclusiveMinimum": 0},
        "velocity_scale": {"type": "number", "exclusiveMinimum": 0},
        "velocity_cutoff": {"type": ["number", "null"]},
        "dim": {"enum": [1, 2, 3]},
    },
}

CONFIG_SCHEMA = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "type": "object",
    "additionalProperties": False,
    "required": ["solver", "kernel", "sigma", "dt", "t_end", "cadence"],
    "properties": {
        "name": {"type": "string"},
        "solver": {"enum": ["particles", "phase-grid"]},
        "kernel": _KERNEL_SCHEMA,
        "initial": _INITIAL_SCHEMA,
        "sigma": {"type": "number", "minimum": 0},
        "dt": {"type": "number", "exclusiveMinimum": 0},
        "t_end": {"type": "number", "minimum": 0},
        "cadence": {"type": "number", "exclusiveMinimum": 0},
        "n_particles": {"type": "integer", "minimum": 1},
        "scheme": {"enum": ["euler-maruyama", "kick-exact-ou"]},
        "grid": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "d": {"enum": [1, 2]},
                "n_x": {"type": "integer", "minimum": 4},
                "n_v": {"type": "integer", "minimum": 4},
                "L_x": {"type": "number", "exclusiveMinimum": 0},
                "L_v": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
        "guards": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "delta_min": {"type": "number", "minimum": 0},
                "collapse_delta_min": {"type": "number", "minimum": 0},
                "energy_ratio_max": {"type": "number", "exclusiveMinimum": 0},
                "stability_bound": {"type": "number", "exclusiveMinimum": 0},
            },
        },
    },
}

_DEFAULTS = {
    "name": None,
    "initial": {},
    "n_particles": 1024,
    "scheme": "kick-exact-ou",
    "grid": {"d": 1, "n_x": 128, "n_v": 128, "L_x": 8.0, "L_v": 8.0},
    "seed": 0,
    "output": None,
    "guards": {},
}

_GUARD_DEFAULTS = {
    "delta_min": 1e-8,
    "collapse_delta_min": 1e-6,
    "energy_ratio_max": 1e3,
    "stability_bound": 10.0,
}


def load_config(path) -> dict:
    # a missing file surfaces as OSError (exit 4); bad content as ConfigError (2)
    with open(path) as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw)


def validate_config(raw: dict) -> dict:
    try:
        jsonschema.validate(raw, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config schema violation: {exc.message}") from exc
    cfg = {**_DEFAULTS, **raw}
    cfg["grid"] = {**_DEFAULTS["grid"], **raw.get("grid", {})}
    cfg["guards"] = {**_GUARD_DEFAULTS, **raw.get("guards", {})}
    cfg["kernel"] = dict(raw["kernel"])
    cfg["initial"] = dict(raw.get("initial", {}))
    try:
        kernel = _kernel_of(cfg)
        if cfg["solver"] == "particles":
            init = _initial_of(cfg)
            if init.dim != kernel.dim:
                raise ValueError(
                    f"initial dim {init.dim} != kernel dim {kernel.dim}"
                )
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"config rejected: {exc}") from exc
    if cfg["solver"] == "phase-grid":
        fam = cfg["initial"].get("family", "gaussian-gaussian")
        if fam != "gaussian-gaussian":
            raise ConfigError("phase-grid runs support gaussian-gaussian initial data")
        if cfg["grid"]["d"] != kernel.dim:
            raise ConfigError(
                f"grid dimension {cfg['grid']['d']} != kernel dim {kernel.dim}"
            )
    return cfg


def _kernel_of(cfg) -> KernelSpec:
    return KernelSpec(**cfg["kernel"])


def _initial_of(cfg) -> InitialDataSpec:
    return InitialDataSpec(**{"family": "gaussian-gaussian", **cfg["initial"]})


def resolve_output_dir(cfg, cfg_path=None, override=None) -> str:
    if override:
        return override
    if cfg.get("output"):
        return cfg["output"]
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    name = cfg.get("name")
    if not name and cfg_path:
        name = os.path.splitext(os.path.basename(cfg_path))[0]
    if not name:
        name = "scenario"
    return os.path.join(root, name)


# ---------------------------------------------------------------------------
# scenario execution

def _initial_grid(cfg) -> PhaseGrid:
    gc = cfg["grid"]
    init = cfg["initial"]
    sx = init.get("position_scale", 1.0)
    sv = init.get("velocity_scale", 1.0)
    mass = init.get("mass", 1.0)
    g = uniform_phase_grid(gc["d"], gc["L_x"], gc["n_x"], gc["L_v"], gc["n_v"])
    x2 = sum(m**2 for m in np.meshgrid(*[g.x_coords] * g.d, indexing="ij"))
    v2 = sum(m**2 for m in np.meshgrid(*[g.v_coords] * g.d, indexing="ij"))
    vals = np.exp(-x2 / (2 * sx**2)).reshape(x2.shape + (1,) * g.d) * np.exp(
        -v2 / (2 * sv**2)
    ).reshape((1,) * g.d + v2.shape)
    vals = vals * (mass / (vals.sum() * g.cell_volume))
    return g.with_values(vals)


def _summary_checks(records, cfg, collapse):
    checks = {}
    if len(records) >= 2:
        masses = [r.mass for r in records]
        checks["mass_conserved"] = bool(
            max(masses) - min(masses) <= 1e-6 * max(abs(masses[0]), 1e-300)
        )
    if cfg["solver"] == "phase-grid" and len(records) >= 2:
        fe = [r.free_energy for r in records if r.free_energy is not None]
        tol = 1e-6 * abs(fe[0]) if fe else 0.0
        if cfg["sigma"] > 0:
            checks["free_energy_monotone"] = bool(
                all(b <= a + tol for a, b in zip(fe, fe[1:]))
            )
        checks["dissipation_nonnegative"] = bool(
            all(r.dissipation >= 0 for r in records if r.dissipation is not None)
        )
    return checks


def run_scenario(cfg: dict, out_dir: str, resume: bool = False) -> dict:
    """Execute one scenario into `out_dir`; returns the summary dict.

    Raises DivergenceError (partial output already on disk) or OSError."""
    os.makedirs(out_dir, exist_ok=True)
    ndjson_path = os.path.join(out_dir, "diagnostics.ndjson")
    records = []
    mode = "w"
    if resume and os.path.exists(ndjson_path):
        records = diag.read_ndjson(ndjson_path)
        mode = "a"
    kernel = _kernel_of(cfg)
    collapse = None
    stream = open(ndjson_path, mode)
    try:
        if cfg["solver"] == "particles":
            collapse, final = _run_particles(cfg, kernel, out_dir, records,
                                             stream, resume)
        else:
            collapse, final = _run_grid(cfg, kernel, out_dir, records, stream,
                                        resume)
    finally:
        stream.close()
    diag.write_csv(records, os.path.join(out_dir, "diagnostics.csv"))
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "simulate",
        "config": cfg,
        "solver": cfg["solver"],
        "records": len(records),
        "final_time": final,
        "collapse": collapse,
        "checks": _summary_checks(records, cfg, collapse),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _run_particles(cfg, kernel, out_dir, records, stream, resume):
    guards = cfg["guards"]
    ckpt = os.path.join(out_dir, "checkpoint.npz")
    if resume and os.path.exists(ckpt):
        data = np.load(ckpt)
        ens = ParticleEnsemble(
            data["positions"], data["velocities"], data["weights"],
            float(data["time"]), int(data["seed"]), int(data["step_index"]),
        )
    else:
        ens = sample_initial(_initial_of(cfg), cfg["n_particles"], cfg["seed"])
    params = SdeParams(
        dt=cfg["dt"], sigma=cfg["sigma"], kernel=kernel,
        scheme=cfg["scheme"], delta_min=guards["delta_min"],
        stability_bound=guards["stability_bound"],
    )

    def observer(current, energy):
        # widen the KDE box with the cloud so dispersing runs stay covered
        half_width = max(6.0, 1.05 * float(np.abs(current.positions).max()))
        kde = diag.default_kde(current, half_width=half_width)
        return diag.particle_record(current, kernel, kde=kde, interaction=energy)

    def on_record(rec):
        records.append(rec)
        stream.write(rec.to_json() + "\n")
        stream.flush()

    result = run(
        ens, params, t_end=cfg["t_end"], cadence=cfg["cadence"],
        observer=observer, on_record=on_record,
        energy_ratio_max=guards["energy_ratio_max"],
        collapse_delta_min=guards["collapse_delta_min"],
    )
    fin = result.ensemble
    np.savez(
        ckpt, positions=fin.positions, velocities=fin.velocities,
        weights=fin.weights, time=fin.time, seed=fin.seed,
        step_index=fin.step_index,
    )
    collapse = None
    if result.collapse is not None:
        collapse = {
            "time": result.collapse.time,
            "step_index": result.collapse.step_index,
            "reason": result.collapse.reason,
        }
    return collapse, fin.time


def _run_grid(cfg, kernel, out_dir, records, stream, resume):
    ckpt = os.path.join(out_dir, "checkpoint.bin")
    if resume and os.path.exists(ckpt):
        g = load_checkpoint(ckpt)
    else:
        g = _initial_grid(cfg)
    sigma, dt, t_end, cadence = (
        cfg["sigma"], cfg["dt"], cfg["t_end"], cfg["cadence"],
    )
    spec = kernel if (kernel.c_manev > 0 or kernel.c_coulomb > 0) else None

    def emit(state):
        rec = diag.grid_record(state, spec)
        records.append(rec)
        stream.write(rec.to_json() + "\n")
        stream.flush()

    emit(g)
    next_tick = g.time + cadence
    while g.time < t_end - 1e-12:
        g = strang_step(g, spec, sigma, dt)
        if not np.all(np.isfinite(g.values)):
            save_checkpoint(g, ckpt)
            raise DivergenceError(int(round(g.time / dt)))
        if g.time >= next_tick - 1e-9:
            emit(g)
            next_tick += cadence
    save_checkpoint(g, ckpt)
    return None, g.time


# ---------------------------------------------------------------------------
# sweeps

def sweep_epsilon(cfg: dict, epsilons, out_dir: str) -> dict:
    if len(epsilons) < 3:
        raise ConfigError("epsilon sweep needs at least 3 values")
    epsilons = list(epsilons)
    if any(b >= a for a, b in zip(epsilons, epsilons[1:])):
        raise ConfigError("epsilons must be strictly decreasing")
    densities = []
    members = []
    for k, eps in enumerate(epsilons):
        member_cfg = json.loads(json.dumps(cfg))
        member_cfg["kernel"]["epsilon"] = eps
        member_dir = os.path.join(out_dir, f"eps-{eps:g}")
        run_scenario(member_cfg, member_dir)
        densities.append(_final_density(member_cfg, member_dir))
        members.append(member_dir)
    diffs_l1, diffs_l32 = [], []
    for a, b in zip(densities, densities[1:]):
        d = np.abs(a.values - b.values)
        vol = a.cell_volume
        diffs_l1.append(float(d.sum() * vol))
        diffs_l32.append(float((np.sum(d**1.5) * vol) ** (2.0 / 3.0)))
    # differences already at the noise floor count as converged
    floor = 1e-12 * max(d.mass for d in densities)

    def cauchy(diffs):
        return all(y < x or max(x, y) <= floor
                   for x, y in zip(diffs, diffs[1:]))

    passed = cauchy(diffs_l1) and cauchy(diffs_l32)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sweep-epsilon",
        "config": cfg,
        "epsilons": epsilons,
        "members": members,
        "l1_differences": diffs_l1,
        "l32_differences": diffs_l32,
        "cauchy": passed,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _final_density(cfg, member_dir):
    """Macroscopic density of the final state on the member's grid."""
    from .phase_grid import moments

    if cfg["solver"] == "phase-grid":
        g = load_checkpoint(os.path.join(member_dir, "checkpoint.bin"))
        rho, _ = moments(g)
        return rho
    data = np.load(os.path.join(member_dir, "checkpoint.npz"))
    ens = ParticleEnsemble(
        data["positions"], data["velocities"], data["weights"],
        float(data["time"]), int(data["seed"]), int(data["step_index"]),
    )
    return diag.default_kde(ens)


def sweep_mass(cfg: dict, masses, out_dir: str) -> dict:
    kernel = _kernel_of(cfg)
    if kernel.family not in ("pure-manev", "manev-combined"):
        raise ConfigError("mass sweep requires a Manev-family kernel")
    per_mass = []
    for k, mass in enumerate(masses):
        member_cfg = json.loads(json.dumps(cfg))
        member_cfg.setdefault("initial", {})
        member_cfg["initial"]["mass"] = mass
        member_cfg["seed"] = cfg.get("seed", 0) + k
        member_dir = os.path.join(out_dir, f"mass-{mass:g}")
        summary = run_scenario(member_cfg, member_dir)
        records = diag.read_ndjson(os.path.join(member_dir, "diagnostics.ndjson"))
        # boundedness proxy: the velocity second moment.  The positional
        # moment grows ~t^2 for any dispersing cloud, so it cannot separate
        # bounded from blown-up runs; velocity concentration can.
        kin0 = records[0].kinetic
        margin0 = records[0].virial_margin
        if summary["collapse"] is not None:
            outcome = "collapsed"
        elif all(r.kinetic < 10.0 * kin0 for r in records):
            outcome = "bounded"
        else:
            outcome = "undecided"
        per_mass.append({
            "mass": mass,
            "outcome": outcome,
            "virial_margin_initial": margin0,
            "collapse": summary["collapse"],
            "dir": member_dir,
        })
    bounded = [m["mass"] for m in per_mass if m["outcome"] == "bounded"]
    collapsed = [m["mass"] for m in per_mass if m["outcome"] == "collapsed"]
    transition = None
    statistic = None
    if bounded and collapsed:
        lo, hi = max(bounded), min(collapsed)
        transition = [lo, hi]
        statistic = kernel.c_manev * math.sqrt(lo * hi) ** (1.0 / 3.0)
    summary = {
        "schema_version": SCHEMA_VERSION,
        "kind": "sweep-mass",
        "config": cfg,
        "masses": list(masses),
        "outcomes": per_mass,
        "transition_interval": transition,
        "transition_statistic_cm_m13": statistic,
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# entry points

def _cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = resolve_output_dir(cfg, args.config, args.output)
    summary = run_scenario(cfg, out_dir, resume=args.resume)
    state = "collapse" if summary["collapse"] else "completed"
    print(f"{state}: t={summary['final_time']:g} "
          f"records={summary['records']} -> {out_dir}")
    return EXIT_OK


def _cmd_sweep_epsilon(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = resolve_output_dir(cfg, args.config, args.output)
    summary = sweep_epsilon(cfg, args.eps, out_dir)
    print(f"cauchy={summary['cauchy']} "
          f"l1_differences={summary['l1_differences']} -> {out_dir}")
    return EXIT_OK


def _cmd_sweep_mass(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out_dir = resolve_output_dir(cfg, args.config, args.output)
    summary = sweep_mass(cfg, args.masses, out_dir)
    for entry in summary["outcomes"]:
        print(f"M={entry['mass']:g}: {entry['outcome']} "
              f"(virial margin {entry['virial_margin_initial']:+.3g})")
    if summary["transition_interval"]:
        lo, hi = summary["transition_interval"]
        print(f"transition in ({lo:g}, {hi:g}]; "
              f"C_M M^(1/3) ~ {summary['transition_statistic_cm_m13']:.3g}")
    return EXIT_OK


def _cmd_check_inequalities(args) -> int:
    try:
        reports = run_default_suite(
            seed=args.seed if args.seed is not None else 0,
            names=args.family or None,
        )
    except ValueError as exc:
        raise ConfigError(str(exc))
    payload = [r.as_dict() for r in reports]
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
    ok = True
    for rep in reports:
        print(f"{rep.name}: {'pass' if rep.passed else 'FAIL'} "
              f"(max ratio {rep.max_ratio:.4g})")
        ok = ok and rep.passed
    return EXIT_OK if ok else EXIT_DIVERGENCE


def _cmd_report(args) -> int:
    path = os.path.join(args.run_dir, "summary.json")
    with open(path) as fh:  # missing summary surfaces as an IO failure
        summary = json.load(fh)
    print(f"kind: {summary.get('kind')}")
    print(f"schema version: {summary.get('schema_version')}")
    if summary.get("kind") == "simulate":
        print(f"solver: {summary.get('solver')}")
        print(f"final time: {summary.get('final_time')}")
        print(f"records: {summary.get('records')}")
        collapse = summary.get("collapse")
        print(f"collapse: {collapse if collapse else 'none'}")
        for name, ok in summary.get("checks", {}).items():
            print(f"check {name}: {'pass' if ok else 'FAIL'}")
    elif summary.get("kind") == "sweep-epsilon":
        print(f"epsilons: {summary['epsilons']}")
        print(f"l1 differences: {summary['l1_differences']}")
        print(f"cauchy: {summary['cauchy']}")
    elif summary.get("kind") == "sweep-mass":
        for entry in summary["outcomes"]:
            print(f"M={entry['mass']}: {entry['outcome']}")
        print(f"transition: {summary.get('transition_interval')}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="manevlab",
        description="numerical laboratory for kinetic self-attraction with "
                    "friction and diffusion",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one scenario config")
    p.add_argument("config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None)
    p.add_argument("--resume", action="store_true")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep-epsilon", help="regularization convergence study")
    p.add_argument("config")
    p.add_argument("--eps", type=float, nargs="+", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_sweep_epsilon)

    p = sub.add_parser("sweep-mass", help="mass threshold dichotomy sweep")
    p.add_argument("config")
    p.add_argument("--masses", type=float, nargs="+", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", default=None)
    p.set_defaults(func=_cmd_sweep_mass)

    p = sub.add_parser("check-inequalities", help="functional inequality suite")
    p.add_argument("--family", nargs="*", default=None,
                   help="subset of check names to run")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="write JSON reports here")
    p.set_defaults(func=_cmd_check_inequalities)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", EXIT_CONFIG)
    except (DivergenceError, CollapseError) as exc:
        print(f"numerical divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except SingularEvaluationError as exc:
        print(f"singular evaluation: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except OSError as exc:
        print(f"io failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
