"""Command-line harness: ``singletrack {simulate,sweep,hopf,track,validate-config}``.

Every command reads a TOML scenario file, writes its outputs under ``--out``
and finishes with a ``manifest.json`` listing the emitted files. Failures are
reported as a single JSON object on stderr with a nonzero exit code.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    BracketError,
    NonHopfBoundaryError,
    StabilityMap,
    find_boundary,
    grid,
    hopf_bisect,
    stability_sweep,
)
from .config import ConfigError, Experiment, ScenarioConfig, load_config
from .control import (
    Circle,
    DropoutModel,
    SimulationError,
    TrackingLog,
    circle_summary,
    run_open_loop,
    run_tracking,
    state_with_point_at,
)
from .linearise import Law
from .model import VehicleState

EXIT_OK = 0
EXIT_SIMULATION = 1
EXIT_CONFIG = 2
EXIT_NO_CROSSING = 3

CIRCLE_HORIZON = 60.0


def compute_nmpe(simulated, reference) -> float:
    """Normalised mean prediction error.

    For each channel (column) the RMS of ``simulated - reference`` is divided
    by the population standard deviation of ``reference``; the result is the
    mean over channels. A 1-D input is a single channel.

    Raises
    ------
    ValueError
        If the shapes differ or a reference channel has zero variance.
    """
    sim = np.asarray(simulated, dtype=float)
    ref = np.asarray(reference, dtype=float)
    if sim.shape != ref.shape:
        raise ValueError(f"series shapes differ: {sim.shape} vs {ref.shape}")
    if sim.ndim == 1:
        sim, ref = sim[:, None], ref[:, None]
    if sim.shape[0] == 0:
        raise ValueError("series are empty")
    spread = ref.std(axis=0)
    if np.any(spread == 0):
        raise ValueError("reference channel has zero variance; NMPE is undefined")
    rms = np.sqrt(np.mean((sim - ref) ** 2, axis=0))
    return float(np.mean(rms / spread))


@dataclass
class RunManifest:
    command: str
    config_hash: str
    tool_version: str
    timestamp: str
    seed: int
    files: list

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(dataclasses.asdict(self), indent=2, sort_keys=True) + "\n")
        return path


def _finite_or_none(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _write_json(path: Path, payload) -> Path:
    def clean(obj):
        if isinstance(obj, dict):
            return {k: clean(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [clean(v) for v in obj]
        if isinstance(obj, (np.floating, float)):
            return _finite_or_none(float(obj))
        if isinstance(obj, np.integer):
            return int(obj)
        return obj

    path.write_text(json.dumps(clean(payload), indent=2, sort_keys=True) + "\n")
    return path


def _eig_pairs(lam) -> list:
    return [[float(z.real), float(z.imag)] for z in lam]


# Experiments ---------------------------------------------------------------


def _open_loop(cfg: ScenarioConfig, dropout: DropoutModel | None = None) -> TrackingLog:
    params = cfg.params()
    lin = cfg.linearisation_config()
    state0 = VehicleState(psi=math.radians(cfg.open_loop.initial_heading_deg))
    schedule = [tuple(seg) for seg in cfg.open_loop.schedule]
    T = cfg.integrator.horizon
    return run_open_loop(schedule, cfg.dropout_model() if dropout is None else dropout, state0, params, lin,
                         dt=cfg.integrator.dt, T=T,
                         steer_limit=math.radians(cfg.integrator.steer_limit_deg))


def circle_start_state(cfg: ScenarioConfig) -> VehicleState:
    """Point P placed ``start_offset`` outside the circle, heading along it."""
    circle = cfg.circle.build()
    radius = circle.radius + cfg.circle.start_offset
    cx, cy = circle.center
    point = (cx + radius * math.cos(circle.phase), cy + radius * math.sin(circle.phase))
    psi = circle.phase + math.copysign(math.pi / 2, circle.angular_velocity)
    return state_with_point_at(point, psi, cfg.params(), cfg.linearisation_config())


def _circle(cfg: ScenarioConfig, dropout: DropoutModel | None = None) -> TrackingLog:
    return run_tracking(
        cfg.circle.build(), cfg.tracking.build(), cfg.dropout_model() if dropout is None else dropout,
        circle_start_state(cfg), cfg.params(), cfg.linearisation_config(),
        dt=cfg.integrator.dt, T=cfg.horizon(CIRCLE_HORIZON), feedforward=cfg.tracking.feedforward,
        steer_limit=math.radians(cfg.integrator.steer_limit_deg),
    )


def cmd_simulate(cfg: ScenarioConfig, out: Path) -> tuple[list, int]:
    """Run the configured scenario and log it.

    Open-loop scenarios (``open_loop_steps``, ``custom``) log the nominal
    point-P trajectory, the integral of the commanded velocities, in the
    reference columns. ``circle_tracking`` logs the circle instead.
    """
    kind = cfg.kind
    if kind in (Experiment.STABILITY_SWEEP, Experiment.HOPF_THRESHOLD):
        raise ConfigError("experiment", f"{kind.value} has no time-domain run; use the sweep or hopf command")
    if kind is Experiment.CIRCLE_TRACKING:
        return cmd_track(cfg, out)
    log = _open_loop(cfg)
    files = [log.write_csv(out / "run_log.csv").name]
    dev = log.point_deviation()
    summary = {
        "max_point_deviation": float(dev.max()),
        "final_point_deviation": float(dev[-1]),
        "rms_point_deviation": float(np.sqrt(np.mean(dev**2))),
        "dropout_intervals": [list(iv) for iv in log.dropout_intervals],
    }
    files.append(_write_json(out / "summary.json", summary).name)
    return files, EXIT_OK


def cmd_track(cfg: ScenarioConfig, out: Path) -> tuple[list, int]:
    """Circle tracking run with a tracking-error summary."""
    circle = cfg.circle.build()
    log = _circle(cfg)
    files = [log.write_csv(out / "run_log.csv").name]
    summary = circle_summary(log, circle).as_dict()
    summary["dropout_intervals"] = [list(iv) for iv in log.dropout_intervals]
    if log.dropout_intervals:
        baseline = circle_summary(_circle(cfg, DropoutModel()), circle)
        summary["baseline_rms_radial_error"] = baseline.rms_radial_error
        summary["error_inflation"] = summary["rms_radial_error"] / baseline.rms_radial_error
    files.append(_write_json(out / "tracking_summary.json", summary).name)
    return files, EXIT_OK


def _sweep_axes(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    s = cfg.sweep
    if s.v_bar is not None:
        v_bars = np.array(s.v_bar, dtype=float)
    else:
        v_bars = grid(s.v_bar_min, s.v_bar_max, s.v_bar_step)
    return v_bars, grid(s.dl_min, s.dl_max, s.dl_step)


def plot_stability_map(smap: StabilityMap, path: Path) -> Path:
    """Two-tone region plot (light: stable, dark: unstable) with the boundary curve."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.colors import ListedColormap

    code = np.where(smap.verdict == "stable", 0.0, np.where(smap.verdict == "unstable", 1.0, np.nan))
    with matplotlib.rc_context({"svg.hashsalt": "singletrack", "font.size": 9, "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        # Filled contours of the 0/1 verdict keep the file small; invalid cells stay blank.
        cmap = ListedColormap(["#d9d9d9", "#404040"])
        if code.shape[0] > 1 and code.shape[1] > 1:
            ax.contourf(smap.dl_grid, smap.v_bar_grid, np.ma.masked_invalid(code), levels=[-0.5, 0.5, 1.5],
                        cmap=cmap)
        else:
            ax.pcolormesh(smap.dl_grid, smap.v_bar_grid, np.ma.masked_invalid(code), cmap=cmap,
                          vmin=0, vmax=1, shading="nearest")
        if smap.hopf_points:
            pts = sorted((hp.v_bar, hp.dl_star) for hp in smap.hopf_points)
            ax.plot([p[1] for p in pts], [p[0] for p in pts], "k-", linewidth=1.0, label="Hopf boundary")
            ax.legend(loc="upper right")
        ax.set_xlabel("dl [m]")
        ax.set_ylabel("v_bar [m/s]")
        ax.set_title(f"{smap.law.value}: light = stable, dark = unstable")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path


def cmd_sweep(cfg: ScenarioConfig, out: Path) -> tuple[list, int]:
    v_bars, dl_grid = _sweep_axes(cfg)
    smap = stability_sweep(v_bars, dl_grid, cfg.params(), cfg.linearisation_config(),
                           psi_bar=math.radians(cfg.sweep.psi_bar_deg), workers=cfg.sweep.workers)
    files = [smap.write_csv(out / "stability_map.csv").name, smap.write_hopf_csv(out / "hopf_points.csv").name]
    if cfg.sweep.plot:
        files.append(plot_stability_map(smap, out / "stability_map.svg").name)
    summary = {
        "law": smap.law.value,
        "cells": int(smap.verdict.size),
        "stable": int(np.sum(smap.verdict == "stable")),
        "unstable": int(np.sum(smap.verdict == "unstable")),
        "invalid": int(np.sum(smap.verdict == "invalid")),
        "max_oracle_gap": float(np.nanmax(smap.oracle_gap)) if np.isfinite(smap.oracle_gap).any() else None,
        "non_hopf_boundaries": [[v, dl] for v, dl in smap.other_boundaries],
    }
    files.append(_write_json(out / "sweep_summary.json", summary).name)
    return files, EXIT_OK


def _default_scan(law: Law, l_r: float) -> tuple[float, float, float]:
    if law is Law.FRONT_AXLE_OFFSET:
        return 0.0, -1.0, 0.01
    return 0.0, l_r, 0.001


def hopf_entry(cfg: ScenarioConfig, v_bar: float) -> dict:
    """Threshold search at one speed, returned as a report entry."""
    params = cfg.params()
    lin = cfg.linearisation_config()
    h = cfg.hopf
    psi_bar = math.radians(h.psi_bar_deg)
    entry = {"v_bar": float(v_bar)}
    try:
        if h.bracket is not None:
            entry["search"] = {"bracket": [float(b) for b in h.bracket]}
            hp = hopf_bisect(v_bar, tuple(h.bracket), params, lin, psi_bar=psi_bar)
        else:
            start, stop, step = _default_scan(lin.law, params.l_r)
            start = start if h.scan_from is None else h.scan_from
            stop = stop if h.scan_to is None else h.scan_to
            step = step if h.scan_step is None else h.scan_step
            values = grid(min(start, stop), max(start, stop), step)
            if stop < start:
                values = values[::-1]
            entry["search"] = {"scan_from": start, "scan_to": stop, "scan_step": step}
            hp = find_boundary(v_bar, values, params, lin, psi_bar=psi_bar)
            if hp is None:
                raise BracketError("no change of stability along the scan")
    except BracketError as exc:
        entry.update(status="no-crossing-found", detail=str(exc))
        return entry
    except NonHopfBoundaryError as exc:
        entry.update(status="non-hopf-boundary", dl=exc.dl, eigenvalues=_eig_pairs(exc.eigenvalues),
                     detail=str(exc))
        return entry
    entry.update(status="hopf", dl_star=hp.dl_star, hopf_freq=hp.frequency, bracket=list(hp.bracket),
                 eigenvalues=_eig_pairs(hp.eigenvalues), kind=hp.kind)
    return entry


def cmd_hopf(cfg: ScenarioConfig, out: Path) -> tuple[list, int]:
    entries = [hopf_entry(cfg, float(v)) for v in cfg.hopf.v_bar]
    report = {"law": cfg.linearisation.law, "p": cfg.linearisation.p, "entries": entries}
    files = [_write_json(out / "hopf_report.json", report).name]
    with (out / "hopf_points.csv").open("w") as fh:
        fh.write("v_bar,dl_star,hopf_freq\n")
        for e in entries:
            if e["status"] == "hopf":
                fh.write(f"{e['v_bar']!r},{e['dl_star']!r},{e['hopf_freq']!r}\n")
    files.append("hopf_points.csv")
    missing = [e["v_bar"] for e in entries if e["status"] != "hopf"]
    if missing:
        print(json.dumps({"status": "no-crossing-found", "v_bar": missing}), file=sys.stderr)
        return files, EXIT_NO_CROSSING
    return files, EXIT_OK


def cmd_validate(cfg: ScenarioConfig, out: Path | None) -> tuple[list, int]:
    print(json.dumps({"status": "ok", "config_hash": cfg.config_hash(), "config": cfg.to_dict()},
                     indent=2, sort_keys=True))
    return [], EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "hopf": cmd_hopf,
    "track": cmd_track,
    "validate-config": cmd_validate,
}


# Entry point ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="singletrack", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=True, help="TOML scenario file")
        p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="random seed (overrides seed)")
        p.add_argument("--dt", type=float, help="integration step [s] (overrides integrator.dt)")
        p.add_argument("--horizon", type=float, help="simulated time [s] (overrides integrator.horizon)")
    return parser


def apply_overrides(cfg: ScenarioConfig, args: argparse.Namespace) -> ScenarioConfig:
    changes = {}
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.seed is not None:
        changes["seed"] = args.seed
    integ = {}
    if args.dt is not None:
        integ["dt"] = args.dt
    if args.horizon is not None:
        integ["horizon"] = args.horizon
    if integ:
        changes["integrator"] = dataclasses.replace(cfg.integrator, **integ)
    return dataclasses.replace(cfg, **changes).validate() if changes else cfg


def _error(kind: str, message: str, **extra) -> dict:
    return {"status": "error", "error": kind, "message": message, **extra}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = apply_overrides(load_config(args.config), args)
        out = None
        if args.command != "validate-config":
            out = Path(cfg.output_dir)
            out.mkdir(parents=True, exist_ok=True)
        files, code = COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(json.dumps(_error("config", exc.message, key=exc.key)), file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(json.dumps(_error("simulation", str(exc), t=_finite_or_none(exc.t))), file=sys.stderr)
        return EXIT_SIMULATION
    except (ValueError, RuntimeError, OSError) as exc:
        print(json.dumps(_error(type(exc).__name__, str(exc))), file=sys.stderr)
        return EXIT_SIMULATION
    if out is not None:
        files.append(_write_json(out / "config.resolved.json", cfg.to_dict()).name)
        RunManifest(
            command=args.command, config_hash=cfg.config_hash(), tool_version=__version__,
            timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            seed=cfg.seed, files=files,
        ).write(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
