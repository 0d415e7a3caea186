import math

import pytest

from modules.equilibria import SlowVaryingFn
from modules.errors import InvalidInputError, UnsupportedRegimeError
from modules.scaling import gamma_of


@pytest.mark.parametrize("alpha,beta,gamma", [
    (1.0, 0.0, 1.0),
    (1.5, 0.0, 1.5),
    (1.5, -0.5, 2.0 / 1.5),
    (0.5, -1.0, 0.75),
])
def test_fractional_regime(classifier, alpha, beta, gamma):
    regime = classifier.classify(alpha, beta)
    assert regime.kind == "fractional"
    assert regime.gamma == pytest.approx(gamma)
    assert regime.gamma == pytest.approx(gamma_of(alpha, beta))
    assert 0.0 < regime.gamma < 2.0


def test_classical_regime(classifier):
    regime = classifier.classify(3.0, 0.0)
    assert regime.kind == "classical"
    assert regime.gamma == 2.0
    assert regime.theta(0.1) == pytest.approx(0.01)


def test_critical_regime(classifier):
    regime = classifier.classify(1.5, 0.5)
    assert regime.kind == "critical"
    assert regime.critical_divergent is True
    assert regime.theta(0.01) == pytest.approx(1e-4 * math.log(100.0))
    assert regime.log_scale(0.01) == pytest.approx(math.log(100.0))


def test_critical_with_bounded_log_falls_back(classifier):
    regime = classifier.classify(1.5, 0.5, SlowVaryingFn(kind="power_log", param=-2.0))
    assert regime.kind == "classical"
    assert regime.critical_divergent is False


def test_critical_tabulated_needs_declaration(classifier):
    ell = SlowVaryingFn(kind="tabulated", table_s=(1.0, 10.0), table_values=(1.0, 1.0))
    with pytest.raises(UnsupportedRegimeError):
        classifier.classify(1.5, 0.5, ell)
    declared = SlowVaryingFn(kind="tabulated", table_s=(1.0, 10.0), table_values=(1.0, 1.0),
                             critical_declared=True)
    assert classifier.classify(1.5, 0.5, declared).kind == "critical"


@pytest.mark.parametrize("alpha,beta", [(0.0, -1.0), (-1.0, 0.0), (0.5, 0.6), (2.0, 1.0), (1.0, 1.0)])
def test_unsupported_parameters(classifier, alpha, beta):
    with pytest.raises(UnsupportedRegimeError):
        classifier.classify(alpha, beta)


def test_fractional_time_scale(classifier):
    regime = classifier.classify(1.0, 0.0)
    assert regime.theta(0.01) == pytest.approx(0.01)
    assert regime.log_scale(0.01) == 1.0
    thetas = [regime.theta(eps) for eps in (0.5, 0.1, 0.01, 0.001)]
    assert all(a > b for a, b in zip(thetas, thetas[1:]))


def test_slowly_varying_enters_time_scale(classifier):
    regime = classifier.classify(1.5, 0.5, SlowVaryingFn(kind="power_log", param=1.0))
    eps = 0.01
    assert regime.phi(eps) == pytest.approx(math.log(math.e + 1e4))
    assert regime.theta(eps) == pytest.approx(eps * eps * math.log(math.e + 1e4) * math.log(100.0))


@pytest.mark.parametrize("eps", [0.0, 1.0, -0.1, 2.0])
def test_eps_outside_unit_interval(bgk_regime, eps):
    with pytest.raises(InvalidInputError):
        bgk_regime.theta(eps)


def test_describe_lists_the_regime(classifier):
    text = classifier.classify(1.5, 0.5).describe()
    assert "regime: critical" in text
    assert "gamma: 2" in text
    assert "ell_log_divergent: true" in text
    assert "ell_log_divergent" not in classifier.classify(1.0, 0.0).describe()


def test_regime_map(classifier):
    table = classifier.regime_map([0.5, 1.5, 3.0], [-0.5, 0.5, 0.9])
    assert list(table.columns) == ["alpha", "beta", "kind", "gamma"]
    assert len(table) == 9
    kinds = {(row.alpha, row.beta): row.kind for row in table.itertuples()}
    assert kinds[(1.5, 0.5)] == "critical"
    assert kinds[(1.5, -0.5)] == "fractional"
    assert kinds[(3.0, -0.5)] == "classical"
    assert kinds[(0.5, 0.9)] == "unsupported"
    assert table.loc[table.kind == "unsupported", "gamma"].isna().all()


def test_regime_to_dict(bgk_regime):
    spec = bgk_regime.to_dict()
    assert spec["kind"] == "fractional"
    assert spec["ell"]["kind"] == "constant"
