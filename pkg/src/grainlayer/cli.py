"""Command-line front end.

Subcommands: ``micro``, ``effective-a``, ``effective-b``,
``cell-conductivity``, ``study``.  Exit codes: 0 on success, 2 on
configuration errors, 3 on solver failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io
from .cells import effective_conductivity
from .config import ConfigError, parse_config
from .effective import CellBank, run_effective
from .geometry import GeometryError, exact_measures
from .grid import DomainLabels, Field, Label
from .linalg import SolverError
from .micro import run as run_micro
from .micro import solve_micro_stationary
from .studies import run_study

MICRO_COLUMNS = ["t", "energy_stored", "energy_injected", "norm_L2_fluid",
                 "norm_L2_solid", "norm_L2_grain_scaled", "jump_norm"]
EFFECTIVE_COLUMNS = ["t", "K_iterations", "E_final", "eta"]


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="grainlayer",
        description="Heat transfer through a thin periodic grain layer: "
                    "resolved and homogenized finite-volume solvers.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
            ("micro", "resolved layer simulation"),
            ("effective-a", "homogenized model with per-point grain problems"),
            ("effective-b", "homogenized model with an interface equation"),
            ("cell-conductivity", "effective lateral conductivity of a shape"),
            ("study", "parameter study defined by the [study] section")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="run configuration file")
        p.add_argument("--set", action="append", default=[], metavar="S.K=V",
                       help="override a config value (section.key=value)")
        p.add_argument("--out", default="out", help="output directory")
    return parser


def _cmd_micro(runcfg, out: Path) -> int:
    params = runcfg.params()
    stationary = runcfg["discretization"]["stationary"]
    if stationary:
        theta, ops = solve_micro_stationary(runcfg.micro_config(), params)
        rows = []
    else:
        res = run_micro(runcfg.micro_config(), params)
        theta, ops = res.final, res.ops
        rows = [
            {"t": res.times[i], "energy_stored": res.stored[i],
             "energy_injected": res.injected[i], **{
                 k: res.norm_rows[i][k] for k in MICRO_COLUMNS[3:]}}
            for i in range(len(res.times))
        ]
    if rows:
        io.write_csv(out / "timeseries.csv", MICRO_COLUMNS, rows)
    io.write_field_dump(out / "final_state.bin", ops.domain, theta)
    io.write_manifest(out / "manifest.json", {
        "command": "micro", "stationary": stationary,
        "config_hash": io.config_hash(runcfg.hash_items()),
        "cells": ops.domain.grid.num_cells, "status": "completed"})
    print(f"wrote {out / 'final_state.bin'}")
    return 0


def _cmd_effective(runcfg, out: Path, regime: str) -> int:
    params = runcfg.params()
    params.regime = regime
    cfg = runcfg.effective_config(params=params)
    res = run_effective(cfg)
    rows = [{"t": res.times[i + 1], "K_iterations": rep.iterations,
             "E_final": rep.errors[-1] if rep.errors else 0.0,
             "eta": rep.relaxation}
            for i, rep in enumerate(res.reports)]
    io.write_csv(out / "timeseries.csv", EFFECTIVE_COLUMNS, rows)

    macro = res.macro
    final = res.final
    io.write_field_dump(out / "final_state.bin",
                        macro.domain, Field(macro.grid, final.theta))
    trace_rows = list(zip(range(len(final.trace)), final.trace))
    io.write_csv(out / "interface_trace.csv", ["face_index", "trace"],
                 trace_rows)
    if isinstance(res.grain, CellBank):
        means = res.grain.mean_temperatures(final.grain)
        rows = [tuple(pos) + (means[j],)
                for j, pos in enumerate(res.grain.positions)]
        coord_names = [f"x{i + 1}" for i in range(res.grain.positions.shape[1])]
        io.write_csv(out / "cellbank.csv",
                     coord_names + ["mean_grain_temperature"], rows)
    command = "effective-a" if regime == "disconnected" else "effective-b"
    io.write_manifest(out / "manifest.json", {
        "command": command,
        "config_hash": io.config_hash(runcfg.hash_items()),
        "steps": len(res.reports), "status": "completed"})
    print(f"wrote {out / 'final_state.bin'}")
    return 0


def _cmd_cell_conductivity(runcfg, out: Path) -> int:
    shape = runcfg.shape()
    disc = runcfg["discretization"]
    phys = runcfg["physics"]
    measures = exact_measures(shape)
    eff = effective_conductivity(shape, disc["cell_resolution"],
                                 kappa_grain=phys["kappa_grain"])
    rows = [("volume", measures.volume),
            ("gamma_f", measures.area_fluid),
            ("gamma_s", measures.area_solid)]
    d = eff.tensor.shape[0]
    for i in range(d):
        for j in range(d):
            rows.append((f"k_eff_{i + 1}{j + 1}", eff.tensor[i, j]))
    print("quantity,value")
    for name, value in rows:
        print(f"{name},{io.format_value(value)}")
    io.write_csv(out / "conductivity.csv", ["quantity", "value"], rows)
    if disc["dump_correctors"]:
        labels = np.where(eff.inside, int(Label.GRAIN),
                          int(Label.FLUID)).astype(np.int8)
        dom = DomainLabels(grid=eff.grid, labels=labels, faces={},
                           corrections={})
        for i, psi in enumerate(eff.correctors):
            io.write_field_dump(out / f"corrector_{i + 1}.bin", dom,
                                Field(eff.grid, psi))
    io.write_manifest(out / "manifest.json", {
        "command": "cell-conductivity",
        "config_hash": io.config_hash(runcfg.hash_items()),
        "status": "completed"})
    return 0


def _cmd_study(runcfg, out: Path) -> int:
    run_study(runcfg, out)
    print(f"study outputs in {out}")
    return 0


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        runcfg = parse_config(args.config, overrides=args.set)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "micro":
            return _cmd_micro(runcfg, out)
        if args.command == "effective-a":
            return _cmd_effective(runcfg, out, "disconnected")
        if args.command == "effective-b":
            return _cmd_effective(runcfg, out, "connected")
        if args.command == "cell-conductivity":
            return _cmd_cell_conductivity(runcfg, out)
        if args.command == "study":
            return _cmd_study(runcfg, out)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, GeometryError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
