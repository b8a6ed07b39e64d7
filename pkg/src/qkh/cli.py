"""Command-line entry point: ``qkh <subcommand> --config run.toml --out DIR``.

Every subcommand writes plain CSV/JSON plus a ``manifest.json`` holding the
resolved configuration, its hash and the hash of every file written.  No
timestamps are recorded, so identical configs give identical directories.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import json
import math
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .bath import CouplingDensity, discretize, gaussian_wavepacket, load_density_csv, pulse_from_wavepacket
from .config import RunConfig, load_config, set_path, validate
from .drive import DriveSpec, Envelope
from .effective import commutator_kernel, correction_norms, epsilon_report, export_kernel_csv
from .errors import (
    AccuracyError,
    ConfigError,
    QKHError,
    StabilityError,
    TruncationLeakageError,
    TruncationRiskError,
)
from .gauge import gauge_equivalence_fidelity
from .hilbert import (
    Coherent,
    CompositeState,
    FockSpace,
    GaussianPacket,
    PotentialSpec,
    SpatialGrid,
    Squeezed,
    TrapGround,
    Vacuum,
    prepare_state,
    save_snapshot,
)
from .optomech import OptomechParams, mapping_report
from .propagate import Absorber, PropagatorConfig, evolve_continuum, evolve_final, evolve_lab

EXIT_OK, EXIT_VALIDATION, EXIT_STABILITY, EXIT_LEAKAGE = 0, 2, 3, 4


# -- builders ------------------------------------------------------------------------


def build_potential(cfg: RunConfig) -> PotentialSpec:
    p = cfg.physics.potential
    try:
        if p.kind == "harmonic":
            return PotentialSpec.harmonic(p.omega)
        if p.kind == "gaussian_well":
            return PotentialSpec.gaussian_well(p.depth, p.width)
        return PotentialSpec.soft_core(p.depth, p.softening)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc), "physics.potential") from None


def build_drive(cfg: RunConfig) -> DriveSpec:
    d = cfg.physics.drive
    if d is None:
        raise ConfigError("a drive block is required for this command", "physics.drive")
    env = None
    if not d.continuous_wave and d.envelope is not None:
        e = d.envelope
        try:
            env = Envelope(e.kind, e.t_i, e.t_f, e.ramp, e.sigma)
        except ValueError as exc:
            raise ConfigError(str(exc), "physics.drive.envelope") from None
    return DriveSpec(d.ell, d.omega, env, d.slow_envelope)


def build_bath(cfg: RunConfig):
    b = cfg.physics.bath
    if b is None:
        raise ConfigError("a bath block is required for this command", "physics.bath")
    if b.density == "table":
        dens = load_density_csv(b.table)
    else:
        dens = CouplingDensity(b.density, b.amplitude, b.center, b.width)
    bath = discretize(dens, (b.omega_min, b.omega_max), b.modes, n_cut=b.n_cut)
    if b.packet is not None:
        bath = gaussian_wavepacket(bath, b.packet.center, b.packet.width, b.packet.amplitude, b.packet.t_center)
    return bath


def build_propagator(cfg: RunConfig) -> PropagatorConfig:
    n = cfg.numerics
    absorber = None if n.absorber is None else Absorber(n.absorber.strength, n.absorber.onset)
    return PropagatorConfig(
        dt=n.dt,
        scheme=n.scheme,
        absorber=absorber,
        max_steps=n.max_steps,
        record_every=n.record_every,
        taylor_order=n.taylor_order,
        taylor_max_order=n.taylor_max_order,
        taylor_tol=n.taylor_tol,
        potential_mode=n.potential_mode,
        trap_region=n.trap_region,
        leakage_check=n.leakage_check,
    )


def build_state(cfg: RunConfig, potential: PotentialSpec, n_cut: int | None = None, oscillator_vector=None):
    n = cfg.numerics
    grid = SpatialGrid(n.n_points, n.x_min, n.x_max)
    e = cfg.experiment
    particle = (
        TrapGround(e.particle.method)
        if e.particle.kind == "ground"
        else GaussianPacket(e.particle.x0, e.particle.p0, e.particle.sigma)
    )
    if oscillator_vector is not None:
        base = prepare_state(grid, FockSpace(2), particle, Vacuum(), potential)
        return CompositeState(grid, np.outer(base.amplitudes[:, 0], oscillator_vector)).normalize()
    o = e.oscillator
    osc = {
        "vacuum": Vacuum(),
        "coherent": Coherent(complex(o.beta_re, o.beta_im)),
        "squeezed": Squeezed(o.r, o.phi),
    }[o.kind]
    return prepare_state(grid, FockSpace(n_cut or n.n_cut), particle, osc, potential)


def _times(cfg: RunConfig, spec: DriveSpec | None):
    e = cfg.experiment
    t0 = e.t0 if e.t0 is not None else (spec.t_i if spec is not None else 0.0)
    t1 = e.t1
    if t1 is None:
        if spec is None or not np.isfinite(spec.t_f):
            raise ConfigError("experiment.t1 is required for continuous-wave or bath runs", "experiment.t1")
        t1 = spec.t_f
    return t0, t1


# -- output --------------------------------------------------------------------------


def _sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, cfg: RunConfig, command: str, files, extra=None) -> Path:
    manifest = {
        "command": command,
        "code_version": __version__,
        "config": cfg.resolved(),
        "config_hash": cfg.content_hash(),
        "files": {Path(f).name: _sha(Path(f)) for f in files},
        "tolerances": {
            "taylor_tol": cfg.numerics.taylor_tol,
            "leakage_warn": 1e-6,
            "leakage_error": 1e-3,
            "quadrature_rtol": 1e-9,
        },
    }
    if extra:
        manifest.update(extra)
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def _outdir(cfg: RunConfig, out) -> Path:
    path = Path(out if out is not None else cfg.output.dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=float))
    return path


# -- commands ------------------------------------------------------------------------


def cmd_simulate(cfg: RunConfig, out=None) -> Path:
    out = _outdir(cfg, out)
    potential = build_potential(cfg)
    prop = build_propagator(cfg)
    files = []
    frame = cfg.experiment.frame
    summary = {}
    if frame == "continuum":
        bath = build_bath(cfg)
        t0, t1 = _times(cfg, None)
        state = build_state(cfg, potential, oscillator_vector=bath.coherent_amplitudes())
        final, series = evolve_continuum(state, potential, bath, prop, t0, t1)
        files.append(series.to_csv(out / "series_continuum.csv"))
        files.append(out / "series_continuum.json")
        summary["continuum"] = {k: series[k][-1] for k in series.names()}
        if cfg.output.snapshots:
            files.append(save_snapshot(out / "state_continuum.qkh", final))
    else:
        spec = build_drive(cfg)
        t0, t1 = _times(cfg, spec)
        state = build_state(cfg, potential)
        frames = ("lab", "final") if frame == "both" else (frame,)
        for fr in frames:
            if fr == "lab":
                final, series = evolve_lab(state, potential, spec, prop, t0, t1)
            else:
                final, series = evolve_final(state, potential, spec, cfg.experiment.order, prop, t0, t1)
            files.append(series.to_csv(out / f"series_{fr}.csv"))
            files.append(out / f"series_{fr}.json")
            summary[fr] = {k: series[k][-1] for k in series.names()}
            if cfg.output.snapshots:
                files.append(save_snapshot(out / f"state_{fr}.qkh", final))
    files.append(_write_json(out / "summary.json", summary))
    write_manifest(out, cfg, "simulate", files)
    return out


def cmd_compare_gauges(cfg: RunConfig, out=None) -> Path:
    out = _outdir(cfg, out)
    potential = build_potential(cfg)
    spec = build_drive(cfg)
    _, t1 = _times(cfg, spec)
    state = build_state(cfg, potential)
    prop = build_propagator(cfg)
    e = cfg.experiment
    result = {"order": e.order, "t": t1, "epsilon": epsilon_report(1.0, spec.omega, spec.ell).epsilon}
    for integrand in ("R", "i"):
        fid = gauge_equivalence_fidelity(
            state, spec, potential, t1, e.order, prop, integrand=integrand, check_convergence=e.check_convergence
        )
        result[f"fidelity_{integrand}"] = fid
        result[f"infidelity_{integrand}"] = 1.0 - fid
    result["fidelity"] = result[f"fidelity_{e.integrand}"]
    files = [_write_json(out / "compare.json", result)]
    write_manifest(out, cfg, "compare-gauges", files)
    return out


def cmd_effective_field(cfg: RunConfig, out=None) -> Path:
    out = _outdir(cfg, out)
    e = cfg.experiment
    files = []
    report = {}
    if cfg.physics.bath is not None:
        source = build_bath(cfg)
        t0, t1 = _times(cfg, None)
        report["modes"] = source.n_modes
    else:
        source = build_drive(cfg)
        t0, t1 = _times(cfg, source)
        report["epsilon"] = epsilon_report(1.0, source.omega, source.ell).as_dict()
    if cfg.physics.optomech is not None:
        report["optomech"] = _optomech_report(cfg)["mapping"]
    files.append(export_kernel_csv(out / "kernel.csv", source, np.linspace(t0, t1, e.kernel_points)))
    times = np.linspace(t0, t1, e.series_points)
    norms = correction_norms(source, times, order=2, t_max=t1)
    path = out / "series.csv"
    cols = [k for k in norms if k != "t"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + cols)
        for i, t in enumerate(times):
            w.writerow([repr(float(t))] + [repr(float(norms[c][i])) for c in cols])
    files.append(path)
    files.append(_write_json(out / "epsilon.json", report))
    write_manifest(out, cfg, "effective-field", files)
    return out


def _optomech_params(cfg: RunConfig) -> OptomechParams:
    o = cfg.physics.optomech
    if o is None:
        raise ConfigError("an SI optomech block is required", "physics.optomech")
    return OptomechParams(o.m, o.Omega, o.omega, o.kappa, o.n0, o.omega0, o.g0, o.G)


def _optomech_report(cfg: RunConfig) -> dict:
    o = cfg.physics.optomech
    return mapping_report(_optomech_params(cfg), o.duration, "warn")


def cmd_optomech_map(cfg: RunConfig, out=None) -> Path:
    out = _outdir(cfg, out)
    o = cfg.physics.optomech
    params = _optomech_params(cfg)
    if o.severity == "error":
        from .optomech import map_to_qkh

        map_to_qkh(params, "error")
    files = [_write_json(out / "optomech.json", _optomech_report(cfg))]
    write_manifest(out, cfg, "optomech-map", files)
    return out


def cmd_bath_design(cfg: RunConfig, out=None) -> Path:
    out = _outdir(cfg, out)
    bath = build_bath(cfg)
    files = []
    path = out / "modes.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["omega", "ell_k", "beta_re", "beta_im"])
        for wk, lk, bk in zip(bath.omegas, bath.ells, bath.betas):
            w.writerow([repr(wk), repr(lk), repr(bk.real), repr(bk.imag)])
    files.append(path)
    b = cfg.physics.bath
    info = {"modes": bath.n_modes, "d_omega": bath.d_omega, "recurrence_time": 2 * math.pi / bath.d_omega}
    if b.window is not None:
        pulse = pulse_from_wavepacket(bath, b.window)
        p = out / "pulse.csv"
        with open(p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "alpha"])
            for t, a in zip(pulse.times, pulse.alpha):
                w.writerow([repr(float(t)), repr(float(a))])
        files.append(p)
        info.update({"peak": pulse.peak, "edge": pulse.edge})
    files.append(_write_json(out / "bath.json", info))
    write_manifest(out, cfg, "bath-design", files)
    return out


COMMANDS = {
    "simulate": cmd_simulate,
    "compare-gauges": cmd_compare_gauges,
    "effective-field": cmd_effective_field,
    "optomech-map": cmd_optomech_map,
    "bath-design": cmd_bath_design,
}


def _sweep_point(args):
    tree, command, out = args
    cfg = validate(tree)
    COMMANDS[command](cfg, out)
    return out


def _last_values(point_dir: Path) -> dict:
    for name in ("summary.json", "compare.json"):
        p = point_dir / name
        if p.exists():
            data = json.loads(p.read_text())
            flat = {}
            for k, v in data.items():
                if isinstance(v, dict):
                    flat.update({f"{k}.{kk}": vv for kk, vv in v.items() if isinstance(vv, (int, float))})
                elif isinstance(v, (int, float)):
                    flat[k] = v
            return flat
    return {}


def cmd_sweep(cfg: RunConfig, out=None, parallel: int | None = None) -> Path:
    """Run one isolated sub-run per sweep value, optionally in worker processes."""
    if cfg.sweep is None:
        raise ConfigError("a [sweep] block is required", "sweep")
    out = _outdir(cfg, out)
    sw = cfg.sweep
    base = cfg.resolved()
    base.pop("sweep")
    jobs = []
    values = sw.axis()
    for i, v in enumerate(values):
        tree = copy.deepcopy(base)
        set_path(tree, sw.path, v)
        validate(tree)
        jobs.append((tree, sw.command, str(out / f"point_{i:03d}")))
    workers = parallel or sw.parallel
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            list(pool.map(_sweep_point, jobs))
    else:
        for job in jobs:
            _sweep_point(job)
    rows = [_last_values(Path(j[2])) for j in jobs]
    cols = sorted({k for r in rows for k in r})
    path = out / "sweep.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([sw.path, "point"] + cols)
        for i, (v, r) in enumerate(zip(values, rows)):
            w.writerow([repr(v), f"point_{i:03d}"] + [repr(r.get(c, float("nan"))) for c in cols])
    files = [path] + [Path(j[2]) / "manifest.json" for j in jobs]
    write_manifest(out, cfg, "sweep", files, {"points": [j[2] for j in jobs]})
    return out


# -- entry point ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qkh", description="Quantized acceleration-gauge simulator")
    parser.add_argument("--version", action="version", version=f"qkh {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "compare-gauges", "effective-field", "optomech-map", "sweep", "bath-design"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="TOML run configuration")
        p.add_argument("--out", type=Path, help="output directory (default: output.dir)")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE", help="dot-path override")
        p.add_argument("--parallel", type=int, default=None, help="worker processes for sweeps")
    return parser


def exit_code(exc: BaseException) -> int:
    if isinstance(exc, (TruncationLeakageError, TruncationRiskError)):
        return EXIT_LEAKAGE
    if isinstance(exc, (StabilityError, AccuracyError)):
        return EXIT_STABILITY
    if isinstance(exc, (ConfigError, ValueError, QKHError)):
        return EXIT_VALIDATION
    raise exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override)
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            if args.command == "sweep":
                out = cmd_sweep(cfg, args.out, args.parallel)
            else:
                out = COMMANDS[args.command](cfg, args.out)
    except Exception as exc:  # mapped to documented exit codes, anything else re-raised
        code = exit_code(exc)
        print(f"qkh {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return code
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
