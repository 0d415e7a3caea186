"""
Scaling Module
Regime classification of (alpha, beta, l) and the anomalous time scale theta(eps)
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np
import pandas as pd

from config import CSV_COLUMNS, REGIME_KINDS
from modules.equilibria import SlowVaryingFn
from modules.errors import InvalidInputError, UnsupportedRegimeError

logger = logging.getLogger(__name__)

CRITICAL_TOL = 1e-9


def gamma_of(alpha: float, beta: float) -> float:
    """Fractional order (alpha - beta) / (1 - beta)"""
    return (alpha - beta) / (1.0 - beta)


@dataclass(frozen=True)
class ScalingRegime:
    """Classified regime with its time scale"""

    kind: str
    gamma: float
    alpha: float
    beta: float
    ell: SlowVaryingFn = field(default_factory=SlowVaryingFn)
    critical_divergent: Optional[bool] = None

    @staticmethod
    def _check_eps(eps: float):
        if not 0.0 < eps < 1.0:
            raise InvalidInputError(f"eps must lie in (0, 1), got {eps}")

    def phi(self, eps: float) -> float:
        """l(eps^{-1/(1-beta)})"""
        self._check_eps(eps)
        return self.ell.at_log(-math.log(eps) / (1.0 - self.beta))

    def log_scale(self, eps: float) -> float:
        """ln(1/eps) for the critical kind, 1 otherwise"""
        self._check_eps(eps)
        return -math.log(eps) if self.kind == "critical" else 1.0

    def theta(self, eps: float) -> float:
        """
        Time scale of the regime

        Args:
            eps: scaling parameter in (0, 1)

        Returns:
            phi(eps) eps^gamma, eps^2 phi(eps) ln(1/eps) or eps^2
        """
        self._check_eps(eps)
        if self.kind == "fractional":
            return self.phi(eps) * eps ** self.gamma
        if self.kind == "critical":
            return eps * eps * self.phi(eps) * math.log(1.0 / eps)
        return eps * eps

    @property
    def theta_formula(self) -> str:
        return REGIME_KINDS[self.kind]["theta"]

    def describe(self) -> str:
        """Structured text summary, one key per line"""
        lines = [
            f"regime: {self.kind}",
            f"label: {REGIME_KINDS[self.kind]['label']}",
            f"alpha: {self.alpha:g}",
            f"beta: {self.beta:g}",
            f"gamma: {self.gamma:.10g}",
            f"theta: {self.theta_formula}",
            f"ell: {self.ell.kind}",
        ]
        if self.critical_divergent is not None:
            lines.append(f"ell_log_divergent: {str(self.critical_divergent).lower()}")
        return "\n".join(lines)

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "beta": self.beta,
            "ell": self.ell.to_dict(),
            "critical_divergent": self.critical_divergent,
        }


class RegimeClassifier:
    """Map (alpha, beta, l) onto the fractional, critical and classical regimes"""

    def classify(self, alpha: float, beta: float, ell: Optional[SlowVaryingFn] = None) -> ScalingRegime:
        """
        Classify a parameter set

        Args:
            alpha: tail index
            beta: collision frequency exponent
            ell: slowly varying function of the equilibrium (constant 1 if omitted)

        Returns:
            ScalingRegime

        Raises:
            UnsupportedRegimeError: naming the violated inequality
        """
        ell = ell or SlowVaryingFn()
        if not alpha > 0:
            raise UnsupportedRegimeError(f"alpha > 0 violated (alpha={alpha:g})")
        if math.isclose(alpha, 1.0) and math.isclose(beta, 1.0):
            raise UnsupportedRegimeError("the corner alpha = beta = 1 is excluded")
        if beta >= min(1.0, alpha):
            raise UnsupportedRegimeError(
                f"beta < min(1, alpha) violated (beta={beta:g}, min(1, alpha)={min(1.0, alpha):g})")

        critical_beta = 2.0 - alpha
        if beta < critical_beta - CRITICAL_TOL:
            gamma = gamma_of(alpha, beta)
            return ScalingRegime(kind="fractional", gamma=gamma, alpha=alpha, beta=beta, ell=ell)

        if abs(beta - critical_beta) <= CRITICAL_TOL:
            divergent = ell.critical_divergent()
            if divergent is None:
                raise UnsupportedRegimeError(
                    "beta = 2 - alpha with a tabulated l needs critical_declared (l(r) ln r -> infinity or not)")
            if divergent:
                return ScalingRegime(kind="critical", gamma=2.0, alpha=alpha, beta=beta, ell=ell,
                                     critical_divergent=True)
            logger.warning("beta = 2 - alpha but l(r) ln r stays bounded: second moment finite, "
                           "falling back to the classical regime")
            return ScalingRegime(kind="classical", gamma=2.0, alpha=alpha, beta=beta, ell=ell,
                                 critical_divergent=False)

        return ScalingRegime(kind="classical", gamma=2.0, alpha=alpha, beta=beta, ell=ell)

    def regime_map(self, alpha_grid: Sequence[float], beta_grid: Sequence[float],
                   ell: Optional[SlowVaryingFn] = None) -> pd.DataFrame:
        """Tabulate the regime diagram, unsupported cells included"""
        rows = []
        for alpha in alpha_grid:
            for beta in beta_grid:
                try:
                    regime = self.classify(float(alpha), float(beta), ell)
                    rows.append({"alpha": alpha, "beta": beta, "kind": regime.kind, "gamma": regime.gamma})
                except UnsupportedRegimeError:
                    rows.append({"alpha": alpha, "beta": beta, "kind": "unsupported", "gamma": np.nan})
        return pd.DataFrame(rows, columns=CSV_COLUMNS["regime_map"])
