import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from modules.collision import CollisionKernel  # noqa: E402
from modules.equilibria import HeavyTailEquilibrium  # noqa: E402
from modules.scaling import RegimeClassifier  # noqa: E402

SMALL_GRID = {"r_cut_outer": 1e4, "core_panels": 2, "panels": 16, "nodes_per_panel": 6}


@pytest.fixture(scope="session")
def cauchy_eq():
    """N=1, alpha=1, uniform core: normalization 4, tail constant 1/4"""
    return HeavyTailEquilibrium(dim=1, alpha=1.0)


@pytest.fixture(scope="session")
def eq_15():
    return HeavyTailEquilibrium(dim=1, alpha=1.5)


@pytest.fixture(scope="session")
def bgk_kernel(cauchy_eq):
    return CollisionKernel(cauchy_eq, kind="bgk", grid=SMALL_GRID)


@pytest.fixture(scope="session")
def bgk_regime():
    return RegimeClassifier().classify(1.0, 0.0)


@pytest.fixture(scope="session")
def classifier():
    return RegimeClassifier()


@pytest.fixture
def results_dir(tmp_path):
    out = tmp_path / "results"
    out.mkdir()
    return out
