"""Reproduction studies: mesh convergence, layer-period convergence,
iteration behavior, and interface-sampling sensitivity.

Every study emits a CSV table plus a machine-readable manifest (config hash,
sweep, per-run status).  Runs are executed in a fixed order with no shared
mutable state, so outputs are bit-reproducible.
"""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, RunConfig
from .effective import EffectiveConfig, run_effective
from .grid import Field, Label, norm_l2
from .linalg import SolverError
from .micro import run as run_micro
from .micro import solve_micro_stationary


def restrict_to_coarse(fine: Field, coarse_dims) -> np.ndarray:
    """Volume-weighted restriction: coarse value = mean of covered fine cells.

    Requires the fine grid dimensions to be integer multiples of the coarse
    ones, which keeps the comparison free of interpolation-order effects.
    """
    fine_dims = fine.grid.dims
    ratios = []
    for nf, nc in zip(fine_dims, coarse_dims):
        if nf % nc != 0:
            raise ValueError("grids are not nested")
        ratios.append(nf // nc)
    arr = fine.reshape()
    shape = []
    for nc, r in zip(coarse_dims, ratios):
        shape += [nc, r]
    arr = arr.reshape(shape)
    axes = tuple(range(1, 2 * len(coarse_dims), 2))
    return arr.mean(axis=axes).ravel()


def _final_macro_field(cfg: EffectiveConfig) -> Field:
    res = run_effective(cfg)
    return res.final_field()


def _micro_final(run_config, params):
    if run_config.top_bc == "dirichlet" and run_config.t_end == 0.0:
        theta, ops = solve_micro_stationary(run_config, params)
        return theta, ops
    res = run_micro(run_config, params)
    return res.final, res.ops


def study_mesh(runcfg: RunConfig, out_dir=None) -> list:
    """Self-convergence against the finest grid in the sweep.

    Returns rows (h, L2_error_vs_reference, observed_order); the order entry
    is NaN for the coarsest grid.
    """
    study = runcfg["study"]
    h_values = sorted(set(study["h_list"]), reverse=True)
    if len(h_values) < 3:
        raise ConfigError("mesh study needs at least 3 spacings")
    model = study["model"]
    stationary = runcfg["discretization"]["stationary"]

    fields = {}
    for h in h_values:
        if model == "micro":
            mc = runcfg.micro_config(h=h)
            if stationary:
                theta, ops = solve_micro_stationary(mc, runcfg.params())
            else:
                theta = run_micro(mc, runcfg.params()).final
        else:
            regime = "disconnected" if model == "effective-a" else "connected"
            params = runcfg.params()
            params.regime = regime
            ec = runcfg.effective_config(h=h, params=params,
                                         stationary=stationary)
            theta = _final_macro_field(ec)
        fields[h] = theta

    h_ref = h_values[-1]
    reference = fields[h_ref]
    rows = []
    errors = []
    for h in h_values[:-1]:
        coarse = fields[h]
        restricted = restrict_to_coarse(reference, coarse.grid.dims)
        diff = Field(coarse.grid, coarse.values - restricted)
        err = norm_l2(diff)
        errors.append(err)
        if len(errors) == 1 or errors[-1] == 0.0 or errors[-2] == 0.0:
            order = math.nan
        else:
            prev_h = h_values[len(errors) - 2]
            order = math.log(errors[-2] / errors[-1]) / math.log(prev_h / h)
        rows.append((h, err, order))

    if out_dir is not None:
        io.write_csv(Path(out_dir) / "mesh_study.csv",
                     ["h", "L2_error_vs_reference", "observed_order"], rows)
        _manifest(runcfg, out_dir, "mesh", {"h_list": h_values,
                                            "reference_h": h_ref})
    return rows


def study_epsilon(runcfg: RunConfig, out_dir=None) -> list:
    """Distance between the resolved and the homogenized solution as the
    layer period shrinks; rows (eps, L2_diff_micro_vs_effective)."""
    study = runcfg["study"]
    disc = runcfg["discretization"]
    eps_values = sorted(set(study["eps_list"]), reverse=True)
    refine = study["micro_refine"]
    stationary = disc["stationary"]
    params = runcfg.params()

    rows = []
    for eps in eps_values:
        h = eps / refine
        mc = runcfg.micro_config(eps=eps, h=h)
        if stationary:
            theta_micro, ops = solve_micro_stationary(mc, params)
        else:
            res = run_micro(mc, params)
            theta_micro, ops = res.final, res.ops

        ec = runcfg.effective_config(h=h, stationary=stationary)
        theta_eff = _final_macro_field(ec)

        bulk = np.flatnonzero(ops.domain.labels != Label.GRAIN)
        diff = Field(ops.domain.grid,
                     theta_micro.values - theta_eff.values)
        rows.append((eps, norm_l2(diff, bulk)))

    if out_dir is not None:
        io.write_csv(Path(out_dir) / "epsilon_study.csv",
                     ["eps", "L2_diff_micro_vs_effective"], rows)
        _manifest(runcfg, out_dir, "epsilon", {"eps_list": eps_values,
                                               "micro_refine": refine})
    return rows


def fitted_contraction_ratio(errors) -> float:
    """Geometric mean of successive error ratios, skipping the first pair."""
    if len(errors) < 3:
        return math.nan
    ratios = [errors[i + 1] / errors[i] for i in range(1, len(errors) - 1)
              if errors[i] > 0.0]
    if not ratios:
        return math.nan
    return float(np.exp(np.mean(np.log(ratios))))


def study_iterations(runcfg: RunConfig, out_dir=None) -> dict:
    """Sweep the exchange coefficient and the relaxation factor for both
    homogenized models; records the worst per-step iteration count and the
    fitted contraction ratio of the first step."""
    study = runcfg["study"]
    alphas = study["alpha_list"]
    etas = study["eta_list"]
    tables = {}
    for model, regime in (("a", "disconnected"), ("b", "connected")):
        rows = []
        for alpha in alphas:
            for eta in etas:
                params = runcfg.params()
                params.alpha_fluid = alpha
                params.alpha_solid = alpha
                params.regime = regime
                kw = dict(params=params, relaxation=eta,
                          raise_on_nonconvergence=False)
                if regime == "connected" and runcfg.k_eff() is None \
                        and not runcfg.shape().spans_lateral:
                    # lateral conduction does not affect the uniform coupling
                    # mode; a zero tensor is the honest 2D stand-in
                    kw["k_eff"] = np.zeros((len(runcfg["discretization"]["extent"]) - 1,) * 2)
                ec = runcfg.effective_config(**kw)
                res = run_effective(ec)
                max_iter = max(r.iterations for r in res.reports)
                ratio = fitted_contraction_ratio(res.reports[0].errors)
                rows.append((alpha, eta, max_iter, ratio))
        tables[model] = rows
        if out_dir is not None:
            io.write_csv(Path(out_dir) / f"iterations_{model}.csv",
                         ["alpha", "eta", "max_iterations_over_time_steps",
                          "mean_contraction_ratio"], rows)
    if out_dir is not None:
        _manifest(runcfg, out_dir, "iterations",
                  {"alpha_list": alphas, "eta_list": etas})
    return tables


def study_cells(runcfg: RunConfig, out_dir=None) -> list:
    """Sensitivity to the number of interface sampling points; rows
    (M, L2_diff_vs_largest_M)."""
    study = runcfg["study"]
    m_values = sorted(set(study["m_list"]))
    reference_m = m_values[-1]
    params = runcfg.params()
    params.regime = "disconnected"

    fields = {}
    for m in m_values:
        ec = runcfg.effective_config(bank_size=m, params=params)
        fields[m] = _final_macro_field(ec)

    ref = fields[reference_m]
    rows = []
    for m in m_values:
        diff = Field(ref.grid, fields[m].values - ref.values)
        rows.append((m, norm_l2(diff)))

    if out_dir is not None:
        io.write_csv(Path(out_dir) / "cells_study.csv",
                     ["M", "L2_diff_vs_largest_M"], rows)
        _manifest(runcfg, out_dir, "cells", {"m_list": m_values,
                                             "reference_M": reference_m})
    return rows


def extract_profile(grid, values, axis: int, offset) -> list:
    """Nearest-cell line sample along ``axis`` at the transverse ``offset``.

    ``offset`` lists the coordinates of the remaining axes in order; returns
    rows (coordinate, value).
    """
    values = np.asarray(values, dtype=float).reshape(grid.dims)
    offset = list(np.atleast_1d(offset))
    other_axes = [a for a in range(grid.ndim) if a != axis]
    if len(offset) != len(other_axes):
        raise ValueError("offset must give one coordinate per remaining axis")
    index = [slice(None)] * grid.ndim
    for a, off in zip(other_axes, offset):
        centers = grid.axis_centers(a)
        if off < grid.origin[a] or off > centers[-1] + 0.5 * grid.spacing[a]:
            raise ValueError(f"offset {off} outside the domain on axis {a}")
        index[a] = int(np.argmin(np.abs(centers - off)))
    line = values[tuple(index)]
    coords = grid.axis_centers(axis)
    return list(zip(coords, line))


def study_profile(runcfg: RunConfig, out_dir=None) -> list:
    study = runcfg["study"]
    dump = study["field_dump"]
    if not dump:
        raise ConfigError("profile study needs study.field_dump")
    grid, labels, values = io.read_field_dump(dump)
    rows = extract_profile(grid, values, study["profile_axis"],
                           study["profile_offset"])
    if out_dir is not None:
        io.write_csv(Path(out_dir) / "profile.csv", ["coordinate", "value"],
                     rows)
        _manifest(runcfg, out_dir, "profile", {"source": str(dump)})
    return rows


def _manifest(runcfg: RunConfig, out_dir, kind: str, sweep: dict):
    payload = {
        "study": kind,
        "config_hash": io.config_hash(runcfg.hash_items()),
        "sweep": sweep,
        "status": "completed",
    }
    io.write_manifest(Path(out_dir) / "manifest.json", payload)


STUDIES = {
    "mesh": study_mesh,
    "epsilon": study_epsilon,
    "iterations": study_iterations,
    "cells": study_cells,
    "profile": study_profile,
}


def run_study(runcfg: RunConfig, out_dir):
    kind = runcfg["study"]["kind"]
    return STUDIES[kind](runcfg, out_dir)
