"""
Symbol Module
Laplace-Fourier symbol a^eps(p, k) of the rescaled kinetic equation and the limit coefficient kappa
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special

from config import DEFAULT_THREADS, QUAD_EPSREL, QUAD_LIMIT, REMAINDER_SLOPE_SLACK
from modules.collision import CollisionKernel
from modules.equilibria import sphere_area
from modules.errors import InvalidInputError, NumericalFailureError, UnsupportedRegimeError
from modules.scaling import RegimeClassifier, ScalingRegime

logger = logging.getLogger(__name__)

DEFAULT_LAMBDAS = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6)


@dataclass(frozen=True)
class KappaValue:
    """Limit diffusion coefficient with its provenance"""

    kappa: float
    regime: ScalingRegime
    method: str
    closed_form: Optional[float] = None
    quadrature: Optional[float] = None
    relative_difference: Optional[float] = None
    sweep: Tuple[Dict, ...] = ()
    slope_estimate: Optional[float] = None
    D: Optional[Tuple[Tuple[float, ...], ...]] = None

    def describe(self) -> str:
        lines = [f"kappa: {self.kappa:.12g}", f"method: {self.method}", f"regime: {self.regime.kind}",
                 f"gamma: {self.regime.gamma:.10g}"]
        if self.closed_form is not None:
            lines.append(f"closed_form: {self.closed_form:.12g}")
        if self.quadrature is not None:
            lines.append(f"quadrature: {self.quadrature:.12g}")
        if self.relative_difference is not None:
            lines.append(f"relative_difference: {self.relative_difference:.3e}")
        if self.slope_estimate is not None:
            lines.append(f"slope_estimate: {self.slope_estimate:.12g}")
        for row in self.sweep:
            lines.append(f"lambda {row['lambda']:.1e}: ratio {row['ratio']:.8g}")
        if self.D is not None:
            lines.append(f"D: {[list(row) for row in self.D]}")
        return "\n".join(lines)

    def to_dict(self) -> Dict:
        return {
            "kappa": self.kappa,
            "method": self.method,
            "regime": self.regime.to_dict(),
            "closed_form": self.closed_form,
            "quadrature": self.quadrature,
            "relative_difference": self.relative_difference,
            "sweep": list(self.sweep),
            "slope_estimate": self.slope_estimate,
            "D": [list(row) for row in self.D] if self.D is not None else None,
        }


@dataclass(frozen=True)
class SymbolValue:
    """Evaluated symbol and its decomposition a = drift - d"""

    p: float
    k: Tuple[float, ...]
    eps: float
    a_eps: complex
    drift_part: float
    d_eps: float
    c_remainder: float
    limit: Optional[float] = None
    abs_err: Optional[float] = None
    log_scale: float = 1.0

    @property
    def d_eps_raw(self) -> float:
        """d^eps computed with the time scale stripped of its logarithm"""
        return self.d_eps * self.log_scale

    def to_row(self) -> Dict:
        return {
            "eps": self.eps,
            "re_a": self.a_eps.real,
            "im_a": self.a_eps.imag,
            "drift": self.drift_part,
            "d_eps": self.d_eps,
            "c_remainder": self.c_remainder,
            "limit": self.limit,
            "abs_err": self.abs_err,
        }


def _sphere_power_integral(gamma: float, dim: int) -> float:
    """Integral of |mu|^gamma over S^{N-1}"""
    return 2.0 * math.pi ** ((dim - 1) / 2.0) * special.gamma((gamma + 1) / 2.0) / special.gamma((dim + gamma) / 2.0)


def _angular_quad(fn, dim: int, odd: bool = False) -> float:
    """Integral of fn(mu) over S^{N-1}, mu the cosine against a fixed axis"""
    if dim == 1:
        return fn(1.0) + fn(-1.0) if odd else 2.0 * fn(1.0)
    a = (dim - 3) / 2.0
    jac = sphere_area(dim - 1)
    if odd:
        value, _ = integrate.quad(fn, -1.0, 1.0, weight="alg", wvar=(a, a), limit=QUAD_LIMIT)
        return jac * value
    value, _ = integrate.quad(lambda mu: fn(mu) * (1.0 + mu) ** a, 0.0, 1.0,
                              weight="alg", wvar=(0.0, a), limit=QUAD_LIMIT)
    return 2.0 * jac * value


def kappa_fractional(regime: ScalingRegime, kappa0: float, nu0: float, dim: int = 1) -> KappaValue:
    """
    Fractional diffusion coefficient

    Args:
        regime: fractional regime
        kappa0: tail constant of the normalized equilibrium
        nu0: limit of |v|^-beta nu(v)
        dim: velocity dimension

    Returns:
        KappaValue carrying both the closed form and the radial-angular quadrature
    """
    gamma, beta = regime.gamma, regime.beta
    if regime.kind != "fractional" or not 0.0 < gamma < 2.0:
        raise UnsupportedRegimeError(f"kappa_fractional needs a fractional regime with 0 < gamma < 2 (gamma={gamma:g})")
    if kappa0 <= 0 or nu0 <= 0:
        raise InvalidInputError("kappa0 and nu0 must be positive")
    prefactor = kappa0 * nu0 / (1.0 - beta)

    closed = (prefactor * nu0 ** (-gamma) * math.pi / (2.0 * math.sin(math.pi * gamma / 2.0))
              * _sphere_power_integral(gamma, dim))

    near, _ = integrate.quad(lambda w: 1.0 / (nu0 ** 2 + w * w), 0.0, 1.0, weight="alg",
                             wvar=(1.0 - gamma, 0.0), epsabs=0.0, epsrel=1e-12, limit=QUAD_LIMIT)
    far, _ = integrate.quad(lambda w: w ** (1.0 - gamma) / (nu0 ** 2 + w * w), 1.0, np.inf,
                            epsabs=0.0, epsrel=1e-12, limit=QUAD_LIMIT)
    radial = near + far
    if dim == 1:
        angular = 2.0
    else:
        angular = _angular_quad(lambda mu: abs(mu) ** gamma, dim)
    quadrature = prefactor * radial * angular
    rel = abs(quadrature - closed) / closed
    return KappaValue(kappa=closed, regime=regime, method="closed-form", closed_form=closed,
                      quadrature=quadrature, relative_difference=rel)


def kappa_critical(alpha: float, beta: float, kappa0: float, nu0: float, dim: int = 1,
                   regime: Optional[ScalingRegime] = None,
                   lambdas: Sequence[float] = DEFAULT_LAMBDAS) -> KappaValue:
    """
    Critical diffusion coefficient with its lambda-sweep estimate

    Args:
        alpha, beta: exponents with beta = 2 - alpha and alpha > 1
        kappa0: tail constant of the normalized equilibrium
        nu0: limit of |v|^-beta nu(v)
        dim: velocity dimension
        lambdas: decreasing sweep of the cutoff of the defining limit

    Returns:
        KappaValue with the closed form, the sweep table and a slope estimate
    """
    if alpha <= 1.0 or not math.isclose(beta, 2.0 - alpha, abs_tol=1e-9):
        raise UnsupportedRegimeError(f"kappa_critical needs alpha > 1 and beta = 2 - alpha (alpha={alpha:g}, beta={beta:g})")
    if kappa0 <= 0 or nu0 <= 0:
        raise InvalidInputError("kappa0 and nu0 must be positive")
    closed = kappa0 / ((1.0 - beta) * nu0) * sphere_area(dim) / dim

    def psi(lam: float) -> float:
        def fn(mu):
            if mu == 0.0:
                return 0.0
            return mu * mu / (2.0 * nu0 ** 2) * math.log1p(nu0 ** 2 / (mu * mu * lam * lam))

        return kappa0 * nu0 * _angular_quad(fn, dim)

    rows = []
    for lam in lambdas:
        value = psi(lam)
        rows.append({"lambda": lam, "psi": value, "ratio": value / ((1.0 - beta) * math.log(1.0 / lam))})
    logs = np.log(1.0 / np.asarray(lambdas, dtype=float))
    slope = float(np.polyfit(logs, [row["psi"] for row in rows], 1)[0]) / (1.0 - beta)
    if regime is None:
        regime = RegimeClassifier().classify(alpha, beta)
    return KappaValue(kappa=closed, regime=regime, method="closed-form", closed_form=closed,
                      quadrature=rows[-1]["ratio"], relative_difference=abs(rows[-1]["ratio"] - closed) / closed,
                      sweep=tuple(rows), slope_estimate=slope)


def limit_symbol(regime: ScalingRegime, kappa: KappaValue, p: float, k) -> float:
    """-p - kappa |k|^gamma, or -p - k.Dk when a diffusion matrix is attached"""
    kv = np.atleast_1d(np.asarray(k, dtype=float))
    if kappa.D is not None:
        d = np.asarray(kappa.D, dtype=float)
        return float(-p - kv @ d @ kv)
    return float(-p - kappa.kappa * np.linalg.norm(kv) ** regime.gamma)


class SymbolAnalyzer:
    """Quadrature of the symbol a^eps(p, k) for one kernel and regime"""

    def __init__(self, kernel: CollisionKernel, regime: ScalingRegime):
        eq = kernel.equilibrium
        if not math.isclose(regime.alpha, eq.alpha) or not math.isclose(regime.beta, kernel.beta, abs_tol=1e-12):
            raise InvalidInputError("regime exponents do not match the kernel and equilibrium")
        self.kernel = kernel
        self.regime = regime
        self.equilibrium = eq
        self._kappa: Optional[KappaValue] = None

    # Coefficient -----------------------------------------------------------------

    def kappa(self) -> KappaValue:
        """Limit coefficient of the regime (cached)"""
        if self._kappa is None:
            eq, kernel = self.equilibrium, self.kernel
            if self.regime.kind == "fractional":
                self._kappa = kappa_fractional(self.regime, eq.tail_constant, kernel.nu0, eq.dim)
            elif self.regime.kind == "critical":
                self._kappa = kappa_critical(eq.alpha, kernel.beta, eq.tail_constant, kernel.nu0,
                                             eq.dim, regime=self.regime)
            else:
                cell = kernel.solve_cell_problem()
                d = 0.5 * (cell.D + cell.D.T)
                self._kappa = KappaValue(kappa=float(np.trace(d)) / eq.dim, regime=self.regime,
                                         method="cell-problem", D=tuple(tuple(float(x) for x in row) for row in d))
            logger.info("kappa(%s) = %.10g", self.regime.kind, self._kappa.kappa)
        return self._kappa

    def limit(self, p: float, k) -> float:
        return limit_symbol(self.regime, self.kappa(), p, k)

    # Quadrature ------------------------------------------------------------------

    def _radial(self, fn, k_eff: float, eps: float, theta: float, p: float) -> float:
        """Integral over r of r^{N-1} nu F fn(nu, A, B) with A = nu + theta p, B = eps k_eff r"""
        eq, kernel = self.equilibrium, self.kernel
        n = eq.dim

        def value(r):
            nu = float(kernel.nu_radial(r))
            return r ** (n - 1) * nu * eq.radial_density(r) * fn(nu, nu + theta * p, eps * k_eff * r)

        def log_value(s):
            if s > 700.0:
                return 0.0
            r = math.exp(s)
            return r * value(r)

        beta = kernel.beta
        breaks = [eps ** (-1.0 / (1.0 - beta))]
        if k_eff != 0.0:
            breaks.append((kernel.nu0 / (eps * abs(k_eff))) ** (1.0 / (1.0 - beta)))
        core_points = [b for b in breaks if 0.0 < b < eq.r_cut]
        tail_points = sorted({b for b in breaks if b > eq.r_cut and np.isfinite(b)})

        total, err = integrate.quad(value, 0.0, eq.r_cut, points=core_points or None,
                                    epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
        edges = [math.log(eq.r_cut)] + [math.log(b) for b in tail_points] + [np.inf]
        for lo, hi in zip(edges[:-1], edges[1:]):
            piece, piece_err = integrate.quad(log_value, lo, hi, epsabs=0.0, epsrel=QUAD_EPSREL, limit=QUAD_LIMIT)
            total += piece
            err += piece_err
        if not np.isfinite(total):
            raise NumericalFailureError("symbol quadrature failed",
                                        {"k_eff": k_eff, "eps": eps, "p": p, "segments": edges})
        return total

    def _integral(self, fn, kmag: float, eps: float, theta: float, p: float, odd: bool = False) -> float:
        if kmag == 0.0:
            return 0.0 if odd else self.equilibrium.sphere * self._radial(fn, 0.0, eps, theta, p)
        return _angular_quad(lambda mu: self._radial(fn, kmag * mu, eps, theta, p), self.equilibrium.dim, odd=odd)

    def _prepare(self, p: float, k, eps: float):
        if p < 0 or not np.isfinite(p):
            raise InvalidInputError("p must be finite and nonnegative")
        kv = np.atleast_1d(np.asarray(k, dtype=float))
        if kv.size not in (1, self.equilibrium.dim):
            raise InvalidInputError(f"wave vector must have {self.equilibrium.dim} components")
        theta = self.regime.theta(eps)
        return kv, float(np.linalg.norm(kv)), theta

    def d_eps(self, p: float, k, eps: float) -> float:
        """Quadratic part (1/theta) integral of B^2 / (A^2 + B^2) nu F"""
        _, kmag, theta = self._prepare(p, k, eps)
        return self._integral(lambda nu, a, b: b * b / (a * a + b * b) / theta, kmag, eps, theta, p)

    def drift(self, p: float, k, eps: float) -> float:
        """Signed drift part -p integral of A / (A^2 + B^2) nu F"""
        _, kmag, theta = self._prepare(p, k, eps)
        if p == 0.0:
            return 0.0
        return self._integral(lambda nu, a, b: -p * a / (a * a + b * b), kmag, eps, theta, p)

    def c_remainder(self, p: float, k, eps: float) -> float:
        """Integral of |nu / (nu + theta p + i eps v.k) - 1| nu F"""
        _, kmag, theta = self._prepare(p, k, eps)
        if p == 0.0 and kmag == 0.0:
            return 0.0
        return self._integral(lambda nu, a, b: math.hypot(theta * p, b) / math.hypot(a, b), kmag, eps, theta, p)

    def initial_datum_factor(self, p: float, k, eps: float) -> complex:
        """Integral of nu / (nu + theta p + i eps v.k) F, the weight of well-prepared data"""
        _, kmag, theta = self._prepare(p, k, eps)
        re = self._integral(lambda nu, a, b: a / (a * a + b * b), kmag, eps, theta, p)
        im = self._integral(lambda nu, a, b: -b / (a * a + b * b), kmag, eps, theta, p, odd=True)
        return complex(re, im)

    def a_eps(self, p: float, k, eps: float) -> SymbolValue:
        """
        Evaluate the symbol and fill its decomposition

        Args:
            p: Laplace variable, p >= 0
            k: wave vector (scalar for N=1)
            eps: scaling parameter in (0, 1)

        Returns:
            SymbolValue with a_eps = drift_part - d_eps and the limit error
        """
        kv, kmag, theta = self._prepare(p, k, eps)
        drift = self.drift(p, k, eps)
        d = self.d_eps(p, k, eps)
        im = self._integral(lambda nu, a, b: -b * nu / (a * a + b * b) / theta, kmag, eps, theta, p, odd=True)
        c = self.c_remainder(p, k, eps)
        a = complex(drift - d, im)
        limit = self.limit(p, kv)
        return SymbolValue(p=float(p), k=tuple(float(x) for x in kv), eps=float(eps), a_eps=a,
                           drift_part=drift, d_eps=d, c_remainder=c, limit=limit,
                           abs_err=abs(a - limit), log_scale=self.regime.log_scale(eps))

    def sweep(self, p: float, k, eps_list: Sequence[float]) -> List[SymbolValue]:
        """Independent evaluations over an eps grid, in input order"""
        with ThreadPoolExecutor(max_workers=DEFAULT_THREADS) as pool:
            return list(pool.map(lambda eps: self.a_eps(p, k, eps), eps_list))

    def remainder_probe(self, p: float, k, eps_list: Sequence[float]) -> Dict:
        """
        Log-log slope of the remainder c^eps against eps

        Args:
            p, k: symbol arguments
            eps_list: geometric grid of at least two values

        Returns:
            Dict with the values, the fitted slope, the floor min(gamma/2, 1) - slack and a pass flag
        """
        if self.regime.kind not in ("fractional", "critical"):
            raise UnsupportedRegimeError("remainder_probe needs a fractional or critical regime")
        eps = np.asarray(sorted(eps_list, reverse=True), dtype=float)
        if eps.size < 2:
            raise InvalidInputError("remainder_probe needs at least two eps values")
        values = np.array([self.c_remainder(p, k, e) for e in eps])
        floor = min(self.regime.gamma / 2.0, 1.0) - REMAINDER_SLOPE_SLACK
        report = {"eps": eps.tolist(), "c_remainder": values.tolist(), "floor": floor}
        if np.all(values == 0.0):
            report.update({"slope": None, "pass": True})
            return report
        slope = float(np.polyfit(np.log(eps), np.log(values), 1)[0])
        report.update({"slope": slope, "pass": bool(slope >= floor)})
        return report

    @staticmethod
    def bound_constant(values: Sequence[SymbolValue]) -> float:
        """Smallest C with |a| <= |p| + C (1 + |k|^2) over the values"""
        return max((abs(v.a_eps) - abs(v.p)) / (1.0 + float(np.dot(v.k, v.k))) for v in values)
