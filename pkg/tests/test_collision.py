import numpy as np
import pytest

from conftest import SMALL_GRID
from modules.collision import CollisionKernel, VelocityGrid, random_grid_functions
from modules.equilibria import HeavyTailEquilibrium
from modules.errors import InvalidInputError, PreconditionError, UnsupportedRegimeError


@pytest.fixture(scope="module")
def separable(eq_15):
    return CollisionKernel(eq_15, kind="separable", beta=0.5, grid=SMALL_GRID)


@pytest.fixture(scope="module")
def physical(eq_15):
    return CollisionKernel(eq_15, kind="physical", beta=0.5, grid=SMALL_GRID)


def test_grid_carries_unit_mass(cauchy_eq):
    grid = VelocityGrid.build(cauchy_eq, **SMALL_GRID)
    assert grid.size == 2 * (2 + 16) * 6
    mass = grid.integrate(cauchy_eq.eval_F(grid.nodes)) + grid.tail_rule["mass"]
    assert mass == pytest.approx(1.0, abs=1e-6)


def test_grid_in_higher_dimensions():
    eq = HeavyTailEquilibrium(dim=2, alpha=1.5)
    grid = VelocityGrid.build(eq)
    assert grid.nodes.shape[1] == 2
    with pytest.raises(InvalidInputError):
        VelocityGrid.build(eq, angular_nodes=5)


def test_bgk_frequency_is_one(bgk_kernel):
    assert bgk_kernel.nu(np.array([0.0, 3.0, 1e5])) == pytest.approx([1.0, 1.0, 1.0])
    np.testing.assert_allclose(bgk_kernel.nu_grid, 1.0)


def test_equilibrium_is_in_the_kernel(bgk_kernel, separable, physical):
    for kernel in (bgk_kernel, separable, physical):
        np.testing.assert_allclose(kernel.apply_L(kernel.F_grid), 0.0, atol=1e-12 * kernel.nu_grid.max())


def test_mass_conservation(separable, physical):
    for kernel in (separable, physical):
        for f in random_grid_functions(kernel, 5, seed=1):
            assert kernel.mass_defect(f) <= 1e-10 * kernel.norm_nu_F_inv(f)


def test_symmetry(separable):
    f, g = random_grid_functions(separable, 2, seed=2)
    assert separable.symmetry_check(f, g)["pass"]


def test_k_boundedness_bgk(bgk_kernel):
    report = bgk_kernel.k_boundedness_check()
    assert report["norm"] == pytest.approx(1.0, rel=1e-10)
    assert report["pass"]


def test_coercivity_needs_b3_constant(eq_15):
    kernel = CollisionKernel(eq_15, kind="separable", beta=0.5, grid=SMALL_GRID)
    with pytest.raises(PreconditionError):
        kernel.coercivity_check(kernel.F_grid)


@pytest.mark.parametrize("kind", ["bgk", "separable", "shifted", "physical"])
def test_coercivity_after_b3(eq_15, kind):
    kernel = CollisionKernel(eq_15, kind=kind, beta=0.5, grid=SMALL_GRID)
    report = kernel.calibrate_b3()
    assert report["pass"]
    assert kernel.M_b3 == pytest.approx(report["M_observed"])
    assert all(kernel.coercivity_check(f)["pass"] for f in random_grid_functions(kernel, 20, seed=3))


def test_separable_frequency(separable):
    r = np.array([0.0, 2.0, 100.0])
    expected = separable.m_beta * (1.0 + r * r) ** 0.25
    np.testing.assert_allclose(separable.nu_radial(r), expected)
    assert separable.nu_log_slope() == pytest.approx(0.5, abs=0.01)


def test_physical_frequency_slope(physical):
    assert physical.nu_log_slope() == pytest.approx(0.5, abs=0.05)
    assert physical.nu0 > 0


def test_beta_windows(eq_15):
    with pytest.raises(InvalidInputError):
        CollisionKernel(eq_15, kind="physical", beta=1.2, grid=SMALL_GRID)
    with pytest.raises(InvalidInputError):
        CollisionKernel(eq_15, kind="separable", beta=1.6, unchecked=True, grid=SMALL_GRID)
    with pytest.raises(InvalidInputError):
        CollisionKernel(eq_15, kind="unknown")


def test_b3_divergence_outside_window(eq_15):
    kernel = CollisionKernel(eq_15, kind="physical", beta=-0.6, unchecked=True, grid=SMALL_GRID)
    report = kernel.b3_check([1.0, 10.0, 100.0])
    assert not report["pass"]
    assert report["failed_integral"] == "second"
    assert report["ratios"][0]["second"] >= 0.9


def test_b3_local_singularity_is_measured(eq_15):
    kernel = CollisionKernel(eq_15, kind="physical", beta=1.2, unchecked=True, grid=SMALL_GRID)
    report = kernel.b3_check([100.0, 1.0, 10.0])
    assert "per_probe" in report
    assert report["probes"] == [1.0, 10.0, 100.0]
    assert report["failed_integral"] == "first"
    assert report["probe"] == 1.0
    assert not report["pass"]
    # |rho|^-1.2 in one dimension grows by 10^0.2 per decade of cutoff
    assert report["ratios"][0]["first"] == pytest.approx(10 ** 0.2, rel=0.05)


@pytest.mark.parametrize("beta", [-0.3, 0.0, 0.5])
def test_divergence_scan_converges_inside_window(eq_15, beta):
    kernel = CollisionKernel(eq_15, kind="physical", beta=beta, grid=SMALL_GRID)
    scan = kernel.divergence_scan(10.0)
    assert scan["diverged"] is None
    assert all(ratio < 0.5 for ratio in scan["ratios"].values())


def test_b3_check_leaves_constant_alone(eq_15):
    kernel = CollisionKernel(eq_15, kind="separable", beta=0.5, grid=SMALL_GRID)
    report = kernel.b3_check()
    assert report["pass"]
    assert kernel.M_b3 is None
    assert report["radial_slope"] == pytest.approx(0.0, abs=0.05)


def test_b3_bgk_constant_is_two(bgk_kernel):
    report = bgk_kernel.b3_check()
    assert report["pass"]
    assert report["M_observed"] == pytest.approx(2.0, rel=1e-12)
    assert report["continuous_sup"] == pytest.approx(2.0, rel=1e-12)


def test_one_dimensional_kernel_builds():
    eq = HeavyTailEquilibrium(dim=1, alpha=1.0)
    assert eq.radius(np.ones((3, 1))).shape == (3,)
    assert eq.eval_F(np.zeros((4, 1))).shape == (4,)
    kernel = CollisionKernel(eq, kind="separable", beta=0.3, grid=SMALL_GRID)
    assert kernel.F_grid.shape == (kernel.grid.size,)
    assert kernel.apply_L(kernel.F_grid).shape == (kernel.grid.size,)


@pytest.mark.parametrize("kind", ["separable", "physical"])
def test_self_adjoint_on_random_functions(eq_15, kind):
    kernel = CollisionKernel(eq_15, kind=kind, beta=0.5, grid=SMALL_GRID)
    functions = random_grid_functions(kernel, 101, seed=5)
    for f, g in zip(functions[:-1], functions[1:]):
        assert kernel.symmetry_check(f, g)["pass"]


def test_cell_problem_needs_finite_variance(bgk_kernel):
    with pytest.raises(UnsupportedRegimeError):
        bgk_kernel.solve_cell_problem()


def test_cell_problem_bgk_maxwellian_core():
    eq = HeavyTailEquilibrium(dim=1, alpha=3.0, r_cut=8.0, core="maxwellian")
    kernel = CollisionKernel(eq, kind="bgk", grid={"r_cut_outer": 64.0, "core_panels": 8})
    cell = kernel.solve_cell_problem()
    assert cell.D[0, 0] == pytest.approx(eq.moment(2.0).value, rel=1e-6)
    assert cell.residual < 1e-10


def test_kernel_round_trip(separable, eq_15):
    again = CollisionKernel.from_dict(eq_15, separable.to_dict() | {"grid": SMALL_GRID})
    assert again.kind == separable.kind
    assert again.beta == separable.beta
    assert again.nu0 == pytest.approx(separable.nu0)


def test_random_grid_functions_are_deterministic(bgk_kernel):
    a = random_grid_functions(bgk_kernel, 3, seed=4)
    b = random_grid_functions(bgk_kernel, 3, seed=4)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_truncated_mass_matches_tail_rule(bgk_kernel):
    assert bgk_kernel.grid_mass + bgk_kernel.truncated_mass == pytest.approx(1.0)
    assert bgk_kernel.truncated_mass == pytest.approx(bgk_kernel.grid.tail_rule["mass"], abs=1e-6)
    assert bgk_kernel.grid.integrate(bgk_kernel.F_grid) == pytest.approx(1.0, rel=1e-12)


def test_kernel_round_trip_keeps_grid(separable, eq_15):
    spec = separable.to_dict()
    assert spec["grid_size"] == separable.grid.size
    again = CollisionKernel.from_dict(eq_15, spec)
    assert again.grid.size == separable.grid.size
    assert again.truncated_mass == pytest.approx(separable.truncated_mass)
