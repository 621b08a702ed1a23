"""Unit-cell solves: correctors/effective tensor and transient grain steps."""

import numpy as np
import pytest

from grainlayer import (Disc, FullCell, Slab, Sphere, SphereWithConnectors,
                        SolverConfig, boundary_exchange_integrals,
                        build_cell_problem, cell_heat_step,
                        effective_conductivity, exact_measures)
from grainlayer.cells import CellProblemError


class TestEffectiveConductivity:
    def test_full_cell_trivial_corrector(self):
        eff = effective_conductivity(FullCell(dim=3), 16, kappa_grain=2.0)
        for psi in eff.correctors:
            assert np.abs(psi).max() < 1e-10
        assert eff.tensor[0, 0] == pytest.approx(2.0 * 2.0, rel=1e-9)
        assert eff.tensor[1, 1] == pytest.approx(4.0, rel=1e-9)
        assert eff.tensor[2, 2] == 0.0
        assert abs(eff.tensor[0, 1]) < 1e-12

    @pytest.mark.parametrize("w", [0.25, 0.5, 1.0])
    def test_slab_layered_identity(self, w):
        eff = effective_conductivity(Slab(w, dim=3), 16, kappa_grain=2.0)
        assert eff.tensor[0, 0] == pytest.approx(2.0 * w, rel=1e-6)
        assert eff.tensor[1, 1] == pytest.approx(2.0 * w, rel=1e-6)
        assert eff.tensor[2, 2] == 0.0

    def test_slab_2d(self):
        eff = effective_conductivity(Slab(0.5, dim=2), 32, kappa_grain=1.0)
        assert eff.tensor[0, 0] == pytest.approx(0.5, rel=1e-6)

    def test_connected_shape_sanity(self):
        eff = effective_conductivity(SphereWithConnectors(0.4, 0.2), 32,
                                     kappa_grain=2.0)
        assert 0.15 <= eff.tensor[0, 0] / 2.0 <= 0.25
        # swap symmetry of the shape carries over to the tensor
        assert eff.tensor[0, 0] == pytest.approx(eff.tensor[1, 1], rel=1e-8)
        assert abs(eff.tensor[0, 1] - eff.tensor[1, 0]) < 1e-8 * eff.tensor[0, 0]
        assert abs(eff.tensor[0, 1]) / 2.0 < 0.01
        assert eff.tensor[2, 2] == 0.0
        assert np.abs(eff.tensor[2, :]).max() == 0.0

    def test_voigt_bound(self):
        eff = effective_conductivity(SphereWithConnectors(0.4, 0.2), 24,
                                     kappa_grain=3.0)
        vol = exact_measures(SphereWithConnectors(0.4, 0.2)).volume
        for i in range(2):
            assert 0.0 < eff.tensor[i, i] <= 3.0 * vol * 1.05

    def test_ersatz_void_insensitive(self):
        shape = SphereWithConnectors(0.4, 0.2)
        a = effective_conductivity(shape, 24, 2.0, void_factor=1e-6)
        b = effective_conductivity(shape, 24, 2.0, void_factor=5e-7)
        rel = abs(a.tensor[0, 0] - b.tensor[0, 0]) / a.tensor[0, 0]
        assert rel < 0.005

    def test_disconnected_shape_rejected(self):
        with pytest.raises(CellProblemError):
            effective_conductivity(Sphere(0.4), 16)


def make_problem(shape=Disc(0.4), n=32, kappa=2.0, alpha=1.0, rho_c=1.0):
    return build_cell_problem(shape, n, kappa, alpha, alpha, rho_c)


class TestCellHeatStep:
    def test_equilibrium_unchanged(self):
        p = make_problem()
        values = np.full(p.num_unknowns, 1.7)
        out = cell_heat_step(p, values, trace=1.7, dt=0.05, source=0.0)
        assert np.abs(out - 1.7).max() < 1e-10

    def test_relaxation_to_ambient(self):
        p = make_problem()
        values = np.zeros(p.num_unknowns)
        prev_mean = 0.0
        for _ in range(60):
            values = cell_heat_step(p, values, trace=1.0, dt=0.5, source=0.0,
                                    cfg=SolverConfig(tol=1e-12))
            mean = values.mean()
            assert mean >= prev_mean - 1e-12
            prev_mean = mean
        assert np.abs(values - 1.0).max() < 1e-6

    def test_stationary_mean_balance_sphere(self):
        # stationary with trace 0: mean ~= vol * f / (alpha_f*gamma_f +
        # alpha_s*gamma_s) up to an O(1/kappa) internal-resistance shift
        p = build_cell_problem(Sphere(0.4), 32, kappa=2.0, alpha_fluid=1.0,
                               alpha_solid=1.0, rho_c=1.0)
        values = cell_heat_step(p, np.zeros(p.num_unknowns), trace=0.0,
                                dt=None, source=1.0,
                                cfg=SolverConfig(tol=1e-12))
        m = exact_measures(Sphere(0.4))
        predicted = m.volume / (m.area_fluid + m.area_solid)
        assert values.mean() == pytest.approx(predicted, rel=0.15)

    def test_step_conservation_identity(self):
        p = make_problem()
        rng = np.random.default_rng(3)
        values = rng.uniform(0.0, 1.0, p.num_unknowns)
        dt, trace, source = 0.07, 0.3, 0.8
        new = cell_heat_step(p, values, trace, dt, source,
                             cfg=SolverConfig(tol=1e-13))
        vol = p.cell_volume
        d_stored = p.rho_c * vol * float(np.sum(new - values))
        g_f, g_s = boundary_exchange_integrals(p, new)
        m = exact_measures(p.raster.shape)
        influx = (p.alpha_fluid * (m.area_fluid * trace - g_f)
                  + p.alpha_solid * (m.area_solid * trace - g_s))
        injected = source * p.inside_volume
        assert d_stored == pytest.approx(dt * (injected + influx),
                                         rel=1e-10, abs=1e-12)


class TestExchangeIntegrals:
    def test_uniform_gives_measure_times_value(self):
        p = make_problem()
        c = 2.5
        g_f, g_s = boundary_exchange_integrals(p, np.full(p.num_unknowns, c))
        m = exact_measures(Disc(0.4))
        assert g_f == pytest.approx(c * m.area_fluid, rel=1e-12)
        assert g_s == pytest.approx(c * m.area_solid, rel=1e-12)

    def test_zero_gives_zero(self):
        p = make_problem()
        assert boundary_exchange_integrals(p, np.zeros(p.num_unknowns)) == (0.0, 0.0)

    def test_stationary_divergence_identity(self):
        p = make_problem()
        values = cell_heat_step(p, np.zeros(p.num_unknowns), trace=0.0,
                                dt=None, source=1.0,
                                cfg=SolverConfig(tol=1e-13))
        g_f, g_s = boundary_exchange_integrals(p, values)
        m = exact_measures(Disc(0.4))
        lhs = (p.alpha_fluid * (m.area_fluid * 0.0 - g_f)
               + p.alpha_solid * (m.area_solid * 0.0 - g_s))
        rhs = -1.0 * p.inside_volume
        assert lhs == pytest.approx(rhs, rel=1e-8)
