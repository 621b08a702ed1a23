"""Sectioned key=value run configuration with schema validation.

The file format is deliberately simple to parse and diff: ``[section]``
headers with one ``key = value`` pair per line.  Unknown sections or keys are
rejected; every value is validated against the schema before any solver
starts.  Command-line overrides use ``section.key=value`` spellings.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry
from .linalg import SolverConfig
from .micro import MicroConfig, PhysicalParams, VelocitySpec


class ConfigError(ValueError):
    pass


def _parse_float(raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None


def _parse_int(raw):
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _parse_bool(raw):
    low = raw.strip().lower()
    if low in ("true", "yes", "on", "1"):
        return True
    if low in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"expected a boolean, got {raw!r}")


def _parse_float_list(raw):
    try:
        return [float(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


def _parse_int_list(raw):
    try:
        return [int(part) for part in raw.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {raw!r}") from None


def _choice(*allowed):
    def parse(raw):
        val = raw.strip().lower()
        if val not in allowed:
            raise ConfigError(f"expected one of {allowed}, got {raw!r}")
        return val

    return parse


def _string(raw):
    return raw.strip()


# section -> key -> (parser, default)
SCHEMA = {
    "geometry": {
        "shape": (_choice("disc", "sphere", "connected", "full"), "disc"),
        "r": (_parse_float, 0.4),
        "r_c": (_parse_float, 0.2),
        "dim": (_parse_int, 2),
    },
    "physics": {
        "kappa_fluid": (_parse_float, 0.1),
        "kappa_solid": (_parse_float, 1.0),
        "kappa_grain": (_parse_float, 2.0),
        "rho_c_fluid": (_parse_float, 1.0),
        "rho_c_solid": (_parse_float, 1.0),
        "rho_c_grain": (_parse_float, 1.0),
        "alpha_fluid": (_parse_float, 1.0),
        "alpha_solid": (_parse_float, 1.0),
        "source_fluid": (_parse_float, 0.0),
        "source_solid": (_parse_float, 0.0),
        "source_grain": (_parse_float, 1.0),
        "source_profile": (_choice("uniform", "circular"), "uniform"),
        "profile_radius": (_parse_float, 0.3),
        "profile_center": (_parse_float_list, [0.5, 0.5]),
        "regime": (_choice("disconnected", "connected"), "disconnected"),
        "velocity_magnitude": (_parse_float, 0.0),
        "velocity_cutoff": (_parse_float, 0.0),  # 0 = pick automatically
    },
    "discretization": {
        "extent": (_parse_float_list, [1.0, 1.0]),
        "h": (_parse_float, 1.0 / 16),
        "eps": (_parse_float, 0.1),
        "dt": (_parse_float, 0.01),
        "t_end": (_parse_float, 1.0),
        "stationary": (_parse_bool, False),
        "top_bc": (_choice("neumann", "dirichlet"), "neumann"),
        "top_value": (_parse_float, 0.0),
        "lateral_periodic": (_parse_bool, False),
        "initial": (_parse_float, 0.0),
        "solver_tol": (_parse_float, 1e-10),
        "coupling_tol": (_parse_float, 1e-6),
        "relaxation": (_parse_float, 1.0),
        "max_inner": (_parse_int, 200),
        "bank_size": (_parse_int, 16),
        "cell_resolution": (_parse_int, 64),
        "k_eff": (_string, "auto"),
        "dump_correctors": (_parse_bool, False),
    },
    "study": {
        "kind": (_choice("mesh", "epsilon", "iterations", "cells", "profile"),
                 "mesh"),
        "model": (_choice("micro", "effective-a", "effective-b"),
                  "effective-b"),
        "h_list": (_parse_float_list, [1.0 / 16, 1.0 / 32, 1.0 / 64, 1.0 / 128]),
        "eps_list": (_parse_float_list, [0.1, 0.05, 0.025]),
        "alpha_list": (_parse_float_list, [0.1, 1.0, 10.0, 100.0]),
        "eta_list": (_parse_float_list, [1.0, 1.2, 1.4, 1.6, 1.8]),
        "m_list": (_parse_int_list, [3, 6, 16, 32]),
        "micro_refine": (_parse_int, 8),
        "field_dump": (_string, ""),
        "profile_axis": (_parse_int, 0),
        "profile_offset": (_parse_float_list, [0.0]),
    },
}


@dataclass
class RunConfig:
    """Validated configuration values, grouped by section."""

    values: dict

    def __getitem__(self, section: str) -> dict:
        return self.values[section]

    # -- materializers ----------------------------------------------------

    def shape(self):
        geo = self.values["geometry"]
        return geometry.shape_from_config(geo["shape"], r=geo["r"],
                                          r_c=geo["r_c"], dim=geo["dim"])

    def source_profile(self):
        phys = self.values["physics"]
        if phys["source_profile"] == "uniform":
            return None
        radius = phys["profile_radius"]
        center = np.asarray(phys["profile_center"], dtype=float)

        def circular(lateral: np.ndarray) -> np.ndarray:
            c = center[: lateral.shape[1]]
            dist = np.sqrt(np.sum((lateral - c) ** 2, axis=1))
            return (dist <= radius).astype(float)

        return circular

    def params(self) -> PhysicalParams:
        phys = self.values["physics"]
        return PhysicalParams(
            kappa_fluid=phys["kappa_fluid"], kappa_solid=phys["kappa_solid"],
            kappa_grain=phys["kappa_grain"], rho_c_fluid=phys["rho_c_fluid"],
            rho_c_solid=phys["rho_c_solid"], rho_c_grain=phys["rho_c_grain"],
            alpha_fluid=phys["alpha_fluid"], alpha_solid=phys["alpha_solid"],
            source_fluid=phys["source_fluid"],
            source_solid=phys["source_solid"],
            source_grain=phys["source_grain"],
            source_grain_profile=self.source_profile(),
            regime=phys["regime"])

    def velocity(self, default_cutoff: float) -> VelocitySpec | None:
        phys = self.values["physics"]
        if phys["velocity_magnitude"] == 0.0:
            return None
        cutoff = phys["velocity_cutoff"] or default_cutoff
        return VelocitySpec(magnitude=phys["velocity_magnitude"],
                            cutoff_start=cutoff, cutoff_width=cutoff)

    def solver(self) -> SolverConfig:
        disc = self.values["discretization"]
        return SolverConfig(tol=disc["solver_tol"])

    def micro_config(self, **overrides) -> MicroConfig:
        disc = self.values["discretization"]
        kw = dict(shape=self.shape(), eps=disc["eps"],
                  extent=tuple(disc["extent"]), h=disc["h"], dt=disc["dt"],
                  t_end=disc["t_end"],
                  velocity=self.velocity(default_cutoff=disc["eps"]),
                  top_bc=disc["top_bc"], top_value=disc["top_value"],
                  lateral_periodic=disc["lateral_periodic"],
                  initial=disc["initial"], solver=self.solver())
        kw.update(overrides)
        return MicroConfig(**kw)

    def k_eff(self):
        disc = self.values["discretization"]
        raw = disc["k_eff"]
        if raw == "auto":
            return None
        return np.diag(_parse_float_list(raw))

    def effective_config(self, **overrides):
        from .effective import EffectiveConfig

        disc = self.values["discretization"]
        kw = dict(shape=self.shape(), params=self.params(),
                  extent=tuple(disc["extent"]), h=disc["h"], dt=disc["dt"],
                  t_end=disc["t_end"], tol=disc["coupling_tol"],
                  relaxation=disc["relaxation"], max_inner=disc["max_inner"],
                  bank_size=disc["bank_size"],
                  cell_resolution=disc["cell_resolution"],
                  k_eff=self.k_eff(),
                  velocity=self.velocity(default_cutoff=2.0 * disc["h"]),
                  top_bc=disc["top_bc"], top_value=disc["top_value"],
                  lateral_periodic=disc["lateral_periodic"],
                  stationary=disc["stationary"], initial=disc["initial"],
                  solver=self.solver())
        kw.update(overrides)
        return EffectiveConfig(**kw)

    def hash_items(self) -> dict:
        return {s: {k: str(v) for k, v in kv.items()}
                for s, kv in self.values.items()}


def _validate(section: str, key: str, raw: str):
    if section not in SCHEMA:
        raise ConfigError(f"unknown section [{section}]")
    if key not in SCHEMA[section]:
        raise ConfigError(f"unknown key {key!r} in section [{section}]")
    parser, _ = SCHEMA[section][key]
    return parser(raw)


def parse_config(path=None, overrides=(), text=None) -> RunConfig:
    """Load, override, validate, and materialize a run configuration.

    ``overrides`` are ``section.key=value`` strings applied on top of the
    file; both file entries and overrides must match the schema.
    """
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    if text is not None:
        cp.read_string(text)
    elif path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {path}")
        cp.read_string(p.read_text())

    values = {s: {k: default for k, (_, default) in kv.items()}
              for s, kv in SCHEMA.items()}
    for section in cp.sections():
        for key, raw in cp[section].items():
            values.setdefault(section, {})
            if section not in SCHEMA:
                raise ConfigError(f"unknown section [{section}]")
            values[section][key] = _validate(section, key, raw)

    for item in overrides:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, "
                              f"got {item!r}")
        target, raw = item.split("=", 1)
        section, key = target.split(".", 1)
        values[section.strip()][key.strip()] = _validate(section.strip(),
                                                         key.strip(), raw)
    return RunConfig(values=values)
