import math

import numpy as np
import pytest
from scipy import integrate

from conftest import SMALL_GRID
from modules.collision import CollisionKernel
from modules.errors import InvalidInputError, ResolutionError
from modules.solvers import (
    DiffusionSolver,
    KineticSolver,
    PhaseSpaceField,
    box_modes,
    cauchy_profile,
    density_profile,
    gaussian_initial_density,
    gaussian_profile,
    periodic_bin_masses,
    point_mass_density,
    relative_l2_distance,
    stable_tail_constant,
)
from modules.symbol import KappaValue

BOX = 4.0 * math.pi


@pytest.fixture
def diffusion():
    return DiffusionSolver()


@pytest.fixture(scope="module")
def bgk_solver(bgk_kernel, bgk_regime):
    return KineticSolver(bgk_kernel, bgk_regime, threads=2)


def test_box_modes():
    modes = box_modes(2.0 * math.pi, 8)
    np.testing.assert_allclose(modes[:, 0], [0, 1, 2, 3, -4, -3, -2, -1])
    assert box_modes(1.0, 4, dim=2).shape == (16, 2)
    with pytest.raises(InvalidInputError):
        box_modes(0.0, 8)


def test_gaussian_density_profile():
    field = gaussian_initial_density(40.0, 256, sigma=1.0)
    assert field.mass == pytest.approx(1.0)
    x, values = density_profile(field)
    assert x[128] == 0.0
    np.testing.assert_allclose(values, gaussian_profile(x, 1.0), atol=1e-10)


def test_bin_masses_cover_the_box():
    field = gaussian_initial_density(40.0, 128, sigma=2.0)
    masses = periodic_bin_masses(field, [-20.0, 0.0, 20.0])
    np.testing.assert_allclose(masses, [0.5, 0.5], atol=1e-10)


def test_relative_distance():
    a = gaussian_initial_density(BOX, 16, sigma=0.5)
    assert relative_l2_distance(a, a) == 0.0
    with pytest.raises(InvalidInputError):
        relative_l2_distance(a, gaussian_initial_density(BOX, 8, sigma=0.5))


def test_fractional_heat_multiplier(diffusion):
    rho0 = point_mass_density(BOX, 16)
    rho = diffusion.solve_fractional_heat(math.pi / 4.0, 1.0, rho0, 2.0)
    kmag = np.abs(rho0.modes[:, 0])
    np.testing.assert_allclose(rho.amplitudes, np.exp(-math.pi / 4.0 * kmag * 2.0))
    assert rho.mass == pytest.approx(1.0)
    assert rho.time == 2.0
    assert rho.source == "fractional_heat"
    with pytest.raises(InvalidInputError):
        diffusion.solve_fractional_heat(1.0, 2.5, rho0, 1.0)
    with pytest.raises(InvalidInputError):
        diffusion.solve_fractional_heat(-1.0, 1.0, rho0, 1.0)


def test_classical_heat(diffusion):
    rho0 = gaussian_initial_density(BOX, 16, sigma=0.5)
    rho = diffusion.solve_classical_heat([[0.5]], rho0, 1.0)
    expected = gaussian_initial_density(BOX, 16, sigma=math.sqrt(0.25 + 1.0))
    np.testing.assert_allclose(rho.amplitudes, expected.amplitudes)


@pytest.mark.parametrize("D", [
    [[1.0, 0.5], [0.0, 1.0]],
    [[-1.0, 0.0], [0.0, 1.0]],
    [[1.0]],
])
def test_classical_heat_rejects_bad_matrices(diffusion, D):
    rho0 = gaussian_initial_density(1.0, 4, sigma=0.1, dim=2)
    with pytest.raises(InvalidInputError):
        diffusion.solve_classical_heat(D, rho0, 1.0)


def test_solve_limit_dispatches(diffusion, bgk_regime):
    rho0 = point_mass_density(BOX, 16)
    fractional = KappaValue(kappa=0.5, regime=bgk_regime, method="closed-form")
    assert diffusion.solve_limit(fractional, rho0, 1.0).source == "fractional_heat"
    classical = KappaValue(kappa=0.5, regime=bgk_regime, method="cell-problem", D=((0.5,),))
    assert diffusion.solve_limit(classical, rho0, 1.0).source == "classical_heat"


def test_stable_profile_matches_closed_forms(diffusion):
    x = np.array([0.0, 0.5, 2.0, 10.0])
    np.testing.assert_allclose(diffusion.stable_profile(1.0, 1.0, 1.0, x), cauchy_profile(x, 1.0), rtol=0, atol=1e-6)
    with pytest.raises(InvalidInputError):
        diffusion.stable_profile(1.0, 1.0, 0.0, x)


def test_stable_profile_gaussian_limit(diffusion):
    x = np.array([0.0, 0.5, 1.0, 1.5, 3.0])
    profile = diffusion.stable_profile(0.5, 2.0, 1.0, x)
    np.testing.assert_allclose(profile, [0.3989, 0.3521, 0.2420, 0.1295, 0.0044], atol=1e-4)
    np.testing.assert_allclose(profile, gaussian_profile(x, 1.0), rtol=0, atol=1e-6)


def test_stable_profile_reports_quadrature_failure(diffusion, monkeypatch):
    def failing_quad(*args, **kwargs):
        return 0.0, 1.0, {}, "maximum number of cycles allowed has been achieved", "explain"

    monkeypatch.setattr(integrate, "quad", failing_quad)
    with pytest.raises(ResolutionError):
        diffusion.stable_profile(0.5, 2.0, 1.0, [0.5])


def test_stable_profile_has_unit_mass_and_power_tail(diffusion):
    x = np.linspace(-60.0, 60.0, 1201)
    profile = diffusion.stable_profile(1.0, 1.0, 1.0, x)
    # Cauchy mass outside |x| <= 60 is 2 atan(1/60) / pi
    assert integrate.trapezoid(profile, x) == pytest.approx(1.0 - 2.0 * math.atan(1.0 / 60.0) / math.pi, abs=1e-3)
    tail_x = np.array([10.0, 30.0, 100.0])
    scaled = diffusion.stable_profile(1.0, 1.5, 1.0, tail_x) * tail_x ** 2.5
    assert np.all(scaled > 0)
    assert scaled[-1] == pytest.approx(scaled[-2], rel=0.1)


def test_stable_tail_constant():
    assert stable_tail_constant(2.0, 1.0, 1.5) == pytest.approx(3.0 / math.pi)


def test_step_parameters(bgk_solver):
    assert bgk_solver.step_parameters(0.1, 1.0) == pytest.approx((1.0 / 2048, 2048))
    dt, n = bgk_solver.step_parameters(0.1, 1.0, dt_over_theta=0.5)
    assert dt == pytest.approx(0.05)
    assert n == 20
    with pytest.raises(InvalidInputError):
        bgk_solver.step_parameters(0.1, 0.0)


def test_kinetic_conserves_mass(bgk_solver, bgk_kernel, bgk_regime):
    rho0 = gaussian_initial_density(BOX, 16, sigma=0.5)
    f0 = PhaseSpaceField.from_density(rho0, bgk_kernel, 0.1, bgk_regime)
    trajectory = bgk_solver.solve_kinetic(f0, 0.5, sample_times=[0.25])
    assert [round(s.time, 12) for s in trajectory.snapshots] == [0.25, 0.5]
    np.testing.assert_allclose(trajectory.masses, 1.0, atol=1e-12)
    assert np.all(np.diff(trajectory.norms) <= 1e-10 * trajectory.norms[:-1])
    summary = trajectory.summary()
    assert summary["n_steps"] == 2048
    assert summary["fluctuation_integral"] >= 0.0

    density, g = bgk_solver.decompose(trajectory.final)
    assert density.mass == pytest.approx(1.0, abs=1e-12)
    np.testing.assert_allclose(g @ bgk_kernel.grid.weights, 0.0, atol=1e-12)


def test_kinetic_rejects_foreign_grid(bgk_solver, bgk_kernel, bgk_regime):
    rho0 = point_mass_density(BOX, 4)
    f0 = PhaseSpaceField.from_density(rho0, bgk_kernel, 0.1, bgk_regime)
    bad = PhaseSpaceField(modes=f0.modes, values=f0.values[:, :10], time=0.0, eps=0.1, regime=bgk_regime)
    with pytest.raises(InvalidInputError):
        bgk_solver.solve_kinetic(bad, 0.1)


def test_kinetic_approaches_limit(bgk_solver, bgk_kernel, bgk_regime, diffusion):
    rho0 = gaussian_initial_density(BOX, 16, sigma=0.5)
    limit = diffusion.solve_fractional_heat(math.pi / 4.0, 1.0, rho0, 0.5)
    distances = []
    for eps in (0.1, 0.01):
        f0 = PhaseSpaceField.from_density(rho0, bgk_kernel, eps, bgk_regime)
        density, _ = bgk_solver.decompose(bgk_solver.solve_kinetic(f0, 0.5).final)
        distances.append(relative_l2_distance(density, limit))
    assert distances[1] < distances[0]
    assert distances[1] < 0.25


def test_kinetic_with_scattering_kernel(eq_15, classifier):
    kernel = CollisionKernel(eq_15, kind="separable", beta=0.3, grid=SMALL_GRID)
    regime = classifier.classify(1.5, 0.3)
    solver = KineticSolver(kernel, regime)
    f0 = PhaseSpaceField.from_density(point_mass_density(BOX, 4), kernel, 0.1, regime)
    trajectory = solver.solve_kinetic(f0, 0.05, dt_over_theta=1.0)
    np.testing.assert_allclose(trajectory.masses, 1.0, atol=1e-8)
    assert trajectory.norms[-1] <= trajectory.norms[0]


def test_splitting_is_first_order(bgk_solver, bgk_kernel, bgk_regime):
    f0 = PhaseSpaceField.from_density(gaussian_initial_density(BOX, 8, sigma=0.5), bgk_kernel, 0.1, bgk_regime)
    report = bgk_solver.time_order_check(f0, 0.02, dt=0.002)
    assert report["errors"][0] > report["errors"][1] > 0.0
    assert report["slope"] == pytest.approx(1.0, abs=0.15)
