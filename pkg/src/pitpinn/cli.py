"""Command-line entry point: train, reference, compare, ablate.

Scenario files are case-sensitive INI text carrying SI units:

    [meta]    schema_version = 1, name, dim
    [scales]  l_c, t_c (meters, seconds; file values divide by these
              to give the non-dimensional domain)
    [domain]  one "lo hi" pair per axis keyed x/y/z, plus t_end
    [pits]    pit0, pit1, ... each "center... radius" (dim+1 floats)
    [faces]   solid / liquid / flux, each a space-separated subset of
              xmin xmax ymin ymax zmin zmax

Floats serialize with %.17g so files round-trip doubles exactly; face
lists serialize sorted so files are diffable.

Hyperparameter files are INI as well: a [meta] section with
schema_version = 1 and a [hyperparameters] section whose keys are any
subset of HYPER_KEYS below (unknown or wrongly cased keys are rejected).
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import datetime
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .metrics import (GridMismatch, compare_snapshots, default_eval_axes,
                      evaluate_network_on_grid, export_snapshot,
                      import_snapshot_csv)
from .network import NetworkConfig
from .physics import PhysicalParams, Scenario, nondimensionalize
from .refsolver import TimeStepUnderflow, solve_reference
from .sampling import SamplingConfig
from .scenarios import (BUILTIN_NAMES, DEFAULT_L_C, DEFAULT_T_C,
                        ScenarioFileError, builtin_scenario,
                        scenario_from_file)
from .training import NonFiniteLoss, TrainConfig, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONFINITE = 3
EXIT_GRID = 4

HYPER_KEYS = ("m_f", "sigma_x", "sigma_t", "m_w", "m_h",
              "N_g", "N_b", "N_i", "S_s", "alpha_w", "eta")

VARIANTS = {
    "sharp": {},
    "no-stagger": {"stagger": False},
    "no-hard-constraints": {"hard_constraints": False},
    "no-modified-mlp": {"modified_mlp": False},
    "no-fourier": {"fourier": False},
    "plain": {"stagger": False, "hard_constraints": False,
              "modified_mlp": False, "fourier": False},
}


class ConfigError(ValueError):
    """A config file or flag failed to parse or validate."""


def _resolve_scenario(spec: str):
    if os.path.exists(spec):
        return scenario_from_file(spec)
    if spec in BUILTIN_NAMES:
        return builtin_scenario(spec), DEFAULT_L_C, DEFAULT_T_C
    raise ScenarioFileError(
        f"{spec!r} is neither a scenario file nor one of {BUILTIN_NAMES}")


def _default_counts(scenario: Scenario) -> tuple:
    if scenario.dim == 2:
        return (40, 20, 30)
    return (30, 20, 15, 30) if len(scenario.pits) >= 2 else (20, 20, 15, 30)


def load_hyperparameters(path) -> dict:
    """Read the flat hyperparameter file; unknown keys are rejected."""
    cp = configparser.ConfigParser()
    cp.optionxform = str
    try:
        with open(path) as fh:
            cp.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if "meta" in cp and cp["meta"].get("schema_version", "1").strip() != "1":
        raise ConfigError(f"{path}: unsupported schema_version")
    if "hyperparameters" not in cp:
        raise ConfigError(f"{path}: missing [hyperparameters] section")
    section = cp["hyperparameters"]
    unknown = set(section) - set(HYPER_KEYS)
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    out = {}
    try:
        for key in ("m_f", "m_w", "m_h", "N_b", "N_i", "S_s"):
            if key in section:
                out[key] = int(section[key])
        for key in ("sigma_x", "sigma_t", "alpha_w", "eta"):
            if key in section:
                out[key] = float(section[key])
        if "N_g" in section:
            out["N_g"] = tuple(int(v) for v in section["N_g"].split())
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return out


def build_train_config(scenario: Scenario, hyper: dict, steps,
                       workers: int, variant: str = "sharp",
                       phys: PhysicalParams = None) -> TrainConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; choose from "
                          f"{', '.join(VARIANTS)}")
    flags = {"stagger": True, "hard_constraints": True,
             "modified_mlp": True, "fourier": True}
    flags.update(VARIANTS[variant])
    phys = phys or PhysicalParams()
    net = NetworkConfig(
        dim=scenario.dim,
        m_f=hyper.get("m_f", 64),
        sigma_x=hyper.get("sigma_x", 2.0),
        sigma_t=hyper.get("sigma_t", 0.4),
        m_w=hyper.get("m_w", 128),
        m_h=hyper.get("m_h", 6),
        fourier=flags["fourier"],
        modified_mlp=flags["modified_mlp"],
        hard_constraints=flags["hard_constraints"],
        c_se=phys.c_se, c_le=phys.c_le)
    samp = SamplingConfig(
        general_counts=hyper.get("N_g", _default_counts(scenario)),
        n_b=hyper.get("N_b", 500),
        n_i=hyper.get("N_i", 800))
    return TrainConfig(
        s_max=steps if steps is not None else 1000,
        s_s=hyper.get("S_s", 25),
        stagger=flags["stagger"],
        alpha_w=hyper.get("alpha_w", 0.5),
        eta0=hyper.get("eta", 5.0e-4),
        workers=workers, network=net, sampling=samp)


def _default_times(scenario: Scenario):
    return [f * scenario.t_end for f in (0.25, 0.5, 0.75, 1.0)]


def _parse_times(text, scenario: Scenario):
    if text is None:
        return _default_times(scenario)
    try:
        times = sorted(float(v) for v in text.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"--times: {exc}") from None
    if not times:
        raise ConfigError("--times must name at least one time")
    return times


def _parse_resolution(text, scenario: Scenario):
    if text is None:
        return tuple(len(a) for a in default_eval_axes(scenario))
    try:
        counts = tuple(int(v) for v in text.lower().split("x"))
    except ValueError as exc:
        raise ConfigError(f"--resolution: {exc}") from None
    if len(counts) != scenario.dim or any(c < 2 for c in counts):
        raise ConfigError("--resolution needs one count >= 2 per axis")
    return counts


def _eval_axes(scenario: Scenario, resolution):
    return tuple(np.linspace(scenario.space_lo[j], scenario.space_hi[j],
                             resolution[j])
                 for j in range(scenario.dim))


def _scenario_dict(scenario: Scenario, l_c: float, t_c: float) -> dict:
    d = dataclasses.asdict(scenario)
    for key in ("solid_boundary_faces", "liquid_boundary_faces",
                "flux_free_faces"):
        d[key] = sorted(d[key])
    d["l_c"] = l_c
    d["t_c"] = t_c
    return d


def write_manifest(out_dir, command: str, payload: dict) -> str:
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "schema_version": 1,
        "command": command,
        "created": datetime.datetime.now(datetime.timezone.utc).isoformat(),
        "build": f"pitpinn {__version__}",
    }
    manifest.update(payload)
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _export_series(snaps, out_dir, formats=("csv", "vtk")) -> None:
    snap_dir = os.path.join(out_dir, "snapshots")
    os.makedirs(snap_dir, exist_ok=True)
    for i, snap in enumerate(snaps):
        for fmt in formats:
            export_snapshot(snap, os.path.join(snap_dir, f"snap_{i:03d}.{fmt}"),
                            fmt=fmt)


def _load_series(run_dir):
    snap_dir = os.path.join(run_dir, "snapshots")
    if not os.path.isdir(snap_dir):
        raise GridMismatch(f"{run_dir} has no snapshots directory")
    names = sorted(n for n in os.listdir(snap_dir) if n.endswith(".csv"))
    if not names:
        raise GridMismatch(f"{snap_dir} holds no csv snapshots")
    return [import_snapshot_csv(os.path.join(snap_dir, n)) for n in names]


def cmd_train(args) -> int:
    scenario, l_c, t_c = _resolve_scenario(args.scenario)
    hyper = load_hyperparameters(args.config) if args.config else {}
    phys = PhysicalParams()
    nondim = nondimensionalize(phys, l_c, t_c)
    cfg = build_train_config(scenario, hyper, args.steps, args.workers,
                             variant="sharp", phys=phys)
    times = _parse_times(args.times, scenario)
    resolution = _parse_resolution(args.resolution, scenario)
    write_manifest(args.out, "train", {
        "scenario": _scenario_dict(scenario, l_c, t_c),
        "seed": args.seed,
        "out": os.path.abspath(args.out),
        "config": dataclasses.asdict(cfg),
        "eval_times": times,
        "eval_resolution": list(resolution),
    })
    result = train(cfg, scenario, args.seed, phys=phys, nondim=nondim,
                   out_dir=args.out, log=lambda msg: print(msg, flush=True))
    axes = _eval_axes(scenario, resolution)
    snaps = [evaluate_network_on_grid(result.params, axes, t) for t in times]
    _export_series(snaps, args.out)
    print(f"trained {cfg.s_max} steps in {result.wall_time:.1f} s; "
          f"artifacts in {args.out}")
    return EXIT_OK


def cmd_reference(args) -> int:
    scenario, l_c, t_c = _resolve_scenario(args.scenario)
    phys = PhysicalParams()
    nondim = nondimensionalize(phys, l_c, t_c)
    times = _parse_times(args.times, scenario)
    resolution = _parse_resolution(args.resolution, scenario)
    write_manifest(args.out, "reference", {
        "scenario": _scenario_dict(scenario, l_c, t_c),
        "seed": args.seed,
        "out": os.path.abspath(args.out),
        "output_times": times,
        "resolution": list(resolution),
    })
    result = solve_reference(scenario, phys, nondim, output_times=times,
                             resolution=resolution,
                             log=lambda msg: print(msg, flush=True))
    _export_series(result.snapshots, args.out)
    with open(os.path.join(args.out, "steps.tsv"), "w") as fh:
        fh.write("time\tdt\tnewton_iters\n")
        for t, dt, iters in result.step_log:
            fh.write(f"{t:.17g}\t{dt:.17g}\t{iters}\n")
    with open(os.path.join(args.out, "dt_trace.txt"), "w") as fh:
        fh.write(" ".join(f"{f:g}" for f in result.controller.trace) + "\n")
    print(f"{len(result.step_log)} steps in {result.wall_time:.1f} s; "
          f"snapshots in {args.out}")
    return EXIT_OK


def _print_report(report) -> None:
    print("time        rms_phi")
    for t, rms in report.per_time:
        print(f"{t:<12.6g}{rms:.6e}")
    print(f"max rms        {report.max_rms:.6e} at t={report.t_of_max:.6g}")
    print(f"time-avg rms   {report.time_avg_rms:.6e}")
    print(f"space-time rms {report.space_time_rms:.6e}")
    print(f"worst |dphi|   {report.worst_abs:.6e} at {report.worst_point}")


def cmd_compare(args) -> int:
    out_dir = args.out or args.pinn_run
    write_manifest(out_dir, "compare", {
        "pinn_run": os.path.abspath(args.pinn_run),
        "reference_run": os.path.abspath(args.reference_run),
        "out": os.path.abspath(out_dir),
        "seed": args.seed,
    })
    ours = _load_series(args.pinn_run)
    ref = _load_series(args.reference_run)
    report = compare_snapshots(ours, ref, field="phi")
    _print_report(report)
    payload = dataclasses.asdict(report)
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_ablate(args) -> int:
    scenario, l_c, t_c = _resolve_scenario(args.scenario)
    hyper = load_hyperparameters(args.config) if args.config else {}
    phys = PhysicalParams()
    nondim = nondimensionalize(phys, l_c, t_c)
    if args.variants is None:
        variants = list(VARIANTS)
    else:
        variants = args.variants.replace(",", " ").split()
        for v in variants:
            if v not in VARIANTS:
                raise ConfigError(f"unknown variant {v!r}; choose from "
                                  f"{', '.join(VARIANTS)}")
    times = _parse_times(args.times, scenario)
    resolution = _parse_resolution(args.resolution, scenario)
    write_manifest(args.out, "ablate", {
        "scenario": _scenario_dict(scenario, l_c, t_c),
        "seed": args.seed,
        "out": os.path.abspath(args.out),
        "variants": variants,
        "eval_times": times,
        "eval_resolution": list(resolution),
        "steps": args.steps,
    })
    print(f"reference solve at {'x'.join(str(n) for n in resolution)} ...",
          flush=True)
    ref = solve_reference(scenario, phys, nondim, output_times=times,
                          resolution=resolution)
    rows = []
    for variant in variants:
        cfg = build_train_config(scenario, hyper, args.steps, args.workers,
                                 variant=variant, phys=phys)
        print(f"training variant {variant} ({cfg.s_max} steps) ...",
              flush=True)
        sub = os.path.join(args.out, variant)
        result = train(cfg, scenario, args.seed, phys=phys, nondim=nondim,
                       out_dir=sub)
        axes = _eval_axes(scenario, resolution)
        snaps = [evaluate_network_on_grid(result.params, axes, t)
                 for t in times]
        _export_series(snaps, sub)
        # final-time error; training wall time excludes export and eval
        rms = float(np.sqrt(np.mean((snaps[-1].phi - ref.snapshots[-1].phi)
                                    ** 2)))
        rows.append((variant, rms, result.wall_time))

    width = max(len("variant"), max(len(v) for v, _, _ in rows))
    print(f"{'variant':<{width + 2}}{'final_rms':<14}wall_s")
    lines = ["variant\tfinal_rms\twall_s"]
    for variant, rms, wall in rows:
        print(f"{variant:<{width + 2}}{rms:<14.6e}{wall:.1f}")
        lines.append(f"{variant}\t{rms:.17g}\t{wall:.3f}")
    with open(os.path.join(args.out, "ablation.tsv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pitpinn",
        description="Phase-field pitting corrosion: PINN training and a "
                    "finite-difference reference solver.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scenario=True):
        if scenario:
            p.add_argument("scenario",
                           help="builtin scenario name or scenario file path")
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--times", default=None,
                       help="output times, comma separated (non-dimensional)")
        p.add_argument("--resolution", default=None,
                       help="evaluation grid, e.g. 201x101")

    p = sub.add_parser("train", help="train the network on a scenario")
    common(p)
    p.add_argument("--config", default=None, help="hyperparameter file")
    p.add_argument("--steps", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reference", help="run the finite-difference solver")
    common(p)
    p.set_defaults(func=cmd_reference)

    p = sub.add_parser("compare", help="compare two run directories")
    p.add_argument("pinn_run", help="training run directory")
    p.add_argument("reference_run", help="reference run directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None,
                   help="report directory (defaults to the training run)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("ablate", help="train and score model variants")
    common(p)
    p.add_argument("--config", default=None, help="hyperparameter file")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--variants", default=None,
                   help=f"comma separated subset of {', '.join(VARIANTS)}")
    p.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except GridMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_GRID
    except NonFiniteLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONFINITE
    except TimeStepUnderflow as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, ScenarioFileError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
