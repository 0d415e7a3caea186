import math

import numpy as np
import pytest
from scipy import stats

from modules.equilibria import (
    HeavyTailEquilibrium,
    SlowVaryingFn,
    hill_estimator,
    random_directions,
    sphere_area,
)
from modules.errors import InvalidInputError


def test_sphere_area():
    assert sphere_area(1) == pytest.approx(2.0)
    assert sphere_area(2) == pytest.approx(2.0 * math.pi)
    assert sphere_area(3) == pytest.approx(4.0 * math.pi)


def test_uniform_core_normalization(cauchy_eq):
    assert cauchy_eq.normalization == pytest.approx(4.0)
    assert cauchy_eq.tail_constant == pytest.approx(0.25)
    assert cauchy_eq.eval_F(0.5) == pytest.approx(0.25)
    assert cauchy_eq.eval_F(-2.0) == pytest.approx(0.25 / 4.0)


def test_evenness(cauchy_eq):
    v = np.linspace(-50.0, 50.0, 101)
    np.testing.assert_allclose(cauchy_eq.eval_F(v), cauchy_eq.eval_F(-v))


def test_radial_cdf_and_tail_mass(cauchy_eq):
    assert float(cauchy_eq.radial_cdf(1.0)) == pytest.approx(0.5)
    assert cauchy_eq.tail_mass(10.0) == pytest.approx(0.05)
    assert cauchy_eq.tail_mass(1e6) == pytest.approx(5e-7)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_unit_mass(dim):
    eq = HeavyTailEquilibrium(dim=dim, alpha=1.5)
    assert eq.expectation(np.ones_like) == pytest.approx(1.0, rel=1e-7)


def test_moments(cauchy_eq, eq_15):
    assert cauchy_eq.moment(0.0).value == pytest.approx(1.0)
    assert not cauchy_eq.moment(1.0).is_finite
    assert not eq_15.moment(2.0).is_finite
    half = eq_15.moment(0.5)
    assert half.is_finite and half.value > 0
    with pytest.raises(InvalidInputError):
        eq_15.moment(-1.0)


def test_maxwellian_core_second_moment():
    eq = HeavyTailEquilibrium(dim=1, alpha=3.0, r_cut=8.0, core="maxwellian")
    assert eq.moment(2.0).value == pytest.approx(1.0, rel=1e-6)


def test_sampling_is_reproducible(cauchy_eq):
    a = cauchy_eq.sample(11, 1000)
    b = cauchy_eq.sample(11, 1000)
    assert a.shape == (1000, 1)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, cauchy_eq.sample(12, 1000))


def test_samples_follow_radial_law(cauchy_eq):
    radii = np.abs(cauchy_eq.sample(3, 200000)[:, 0])
    for r in (0.5, 1.0, 4.0):
        assert np.mean(radii <= r) == pytest.approx(float(cauchy_eq.radial_cdf(r)), abs=5e-3)


def test_hill_estimator_recovers_alpha(eq_15):
    samples = eq_15.sample(5, 400000)
    assert hill_estimator(samples, 0.01) == pytest.approx(1.5, abs=0.1)


def test_tabulated_sampler_matches_cdf():
    ell = SlowVaryingFn(kind="power_log", param=1.0)
    eq = HeavyTailEquilibrium(dim=1, alpha=1.2, ell=ell, tail_exact=False)
    assert eq.expectation(np.ones_like) == pytest.approx(1.0, rel=1e-6)
    radii = np.abs(eq.sample(9, 100000)[:, 0])
    assert np.mean(radii <= 3.0) == pytest.approx(float(eq.radial_cdf(np.array([3.0]))[0]), abs=1e-2)


def test_tilted_sampler_inverse_is_monotone(cauchy_eq):
    sampler = cauchy_eq.tilted_sampler(0.5)
    u = np.linspace(0.01, 0.99, 50)
    r = sampler.inverse(u)
    assert np.all(np.diff(r) > 0)
    np.testing.assert_allclose(sampler.cdf(r), u, atol=1e-4)


def test_random_directions_are_unit():
    rng = np.random.Generator(np.random.Philox(1))
    d = random_directions(rng, 500, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    d1 = random_directions(rng, 500, 1)
    assert set(np.unique(d1)) <= {-1.0, 1.0}


def test_invalid_equilibria():
    with pytest.raises(InvalidInputError):
        HeavyTailEquilibrium(dim=1, alpha=-1.0)
    with pytest.raises(InvalidInputError):
        HeavyTailEquilibrium(dim=1, alpha=1.0, core="flat")
    with pytest.raises(InvalidInputError):
        HeavyTailEquilibrium(dim=1, alpha=1.0, ell=SlowVaryingFn(kind="iterated_log"))


def test_slowly_varying_potter_bound():
    for ell in (SlowVaryingFn(), SlowVaryingFn(kind="power_log", param=2.0), SlowVaryingFn(kind="iterated_log")):
        samples = [(s, lam) for s in (1.0, 10.0, 1e4) for lam in (1.0 / s, 0.5, 2.0, 100.0) if lam * s >= 1.0]
        report = ell.potter_check(samples)
        assert report["pass"]
        assert report["C_observed"] <= report["C_stored"]


def test_potter_check_rejects_bad_samples():
    with pytest.raises(InvalidInputError):
        SlowVaryingFn().potter_check([])
    with pytest.raises(InvalidInputError):
        SlowVaryingFn().potter_check([(0.1, 1.0)])


def test_regular_variation():
    assert SlowVaryingFn(kind="power_log", param=3.0).regular_variation_check(0.1)["pass"]


def test_slowly_varying_round_trip():
    ell = SlowVaryingFn(kind="tabulated", table_s=(1.0, 10.0, 100.0), table_values=(1.0, 2.0, 3.0),
                        critical_declared=True)
    again = SlowVaryingFn.from_dict(ell.to_dict())
    assert again == ell
    assert again(10.0) == pytest.approx(2.0)
    assert again.critical_divergent() is True


def test_equilibrium_round_trip(eq_15):
    assert HeavyTailEquilibrium.from_dict(eq_15.to_dict()) == eq_15


def test_potter_bound_for_decaying_log():
    ell = SlowVaryingFn(kind="power_log", param=-2.0)
    samples = [(s, lam) for s in np.geomspace(10.0, 1e6, 13) for lam in np.geomspace(0.1, 1e3, 17)]
    report = ell.potter_check(samples)
    assert report["pass"]
    assert report["n_samples"] == 13 * 17
    assert np.isfinite(report["C_observed"])
    assert SlowVaryingFn().potter_check(samples)["C_observed"] <= 1.0


def test_first_moment_closed_form(eq_15):
    # normalization 2 (1 + 2/3); first moment 2 (1/2 + 2) over it
    assert eq_15.normalization == pytest.approx(10.0 / 3.0)
    assert eq_15.moment(1.0).value == pytest.approx(1.5, rel=1e-8)


@pytest.mark.slow
def test_million_draws_match_radial_law(cauchy_eq):
    radii = np.abs(cauchy_eq.sample(2024, 1_000_000)[:, 0])
    assert stats.kstest(radii, cauchy_eq.radial_cdf).statistic < 0.002
