"""
Equilibria Module
Heavy-tailed equilibrium distributions, slowly varying functions and exact sampling
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

from config import (
    CORE_KINDS,
    ELL_KINDS,
    GL_NODES_NORMALIZATION,
    POTTER_SAFETY,
    QUAD_LIMIT,
)
from modules.errors import InvalidInputError, NumericalFailureError

logger = logging.getLogger(__name__)


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere S^{N-1} (2 for N=1)"""
    return 2.0 * math.pi ** (dim / 2.0) / special.gamma(dim / 2.0)


def _gauss_panels(a: float, b: float, panels: int, nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule on [a, b]"""
    x, w = np.polynomial.legendre.leggauss(nodes)
    edges = np.linspace(a, b, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    pts = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    wts = (half[:, None] * w[None, :]).ravel()
    return pts, wts


@dataclass(frozen=True)
class SlowVaryingFn:
    """Slowly varying function l(s) with a stored Potter constant"""

    kind: str = "constant"
    param: float = 1.0
    potter_delta: float = 0.5
    potter_scale: float = 1.0
    table_s: Optional[Tuple[float, ...]] = None
    table_values: Optional[Tuple[float, ...]] = None
    critical_declared: Optional[bool] = None
    potter_constant: float = field(init=False, default=float("nan"))

    # Potter constant reference range
    _REF_S_MAX = 1e8
    _REF_LAMBDA_MAX = 1e6

    def __post_init__(self):
        if self.kind not in ELL_KINDS:
            raise InvalidInputError(f"Unknown slowly varying kind: {self.kind}")
        if self.potter_delta <= 0 or self.potter_scale <= 0:
            raise InvalidInputError("potter_delta and potter_scale must be positive")
        if self.kind == "constant" and self.param <= 0:
            raise InvalidInputError("constant slowly varying function must be positive")
        if self.kind == "tabulated":
            if self.table_s is None or self.table_values is None:
                raise InvalidInputError("tabulated slowly varying function needs table_s and table_values")
            s = np.asarray(self.table_s, dtype=float)
            vals = np.asarray(self.table_values, dtype=float)
            if s.shape != vals.shape or s.size < 2:
                raise InvalidInputError("table_s and table_values must have equal length >= 2")
            if np.any(s <= 0) or np.any(np.diff(s) <= 0):
                raise InvalidInputError("table_s must be positive and strictly increasing")
            if np.any(vals <= 0):
                raise InvalidInputError("tabulated values must be positive")
        object.__setattr__(self, "potter_constant", POTTER_SAFETY * self._reference_ratio_max())

    def __call__(self, s):
        s = np.abs(np.asarray(s, dtype=float))
        if self.kind == "constant":
            out = np.full_like(s, self.param)
        elif self.kind == "power_log":
            out = np.log(np.e + s) ** self.param
        elif self.kind == "iterated_log":
            out = np.log(np.e + np.log(np.e + s))
        else:
            log_s = np.log(np.asarray(self.table_s, dtype=float))
            log_v = np.log(np.asarray(self.table_values, dtype=float))
            out = np.exp(np.interp(np.log(np.maximum(s, 1e-300)), log_s, log_v))
        return out if out.ndim else float(out)

    def at_log(self, s: float) -> float:
        """l(e^s), evaluated without forming e^s"""
        if self.kind == "constant":
            return self.param
        if self.kind == "power_log":
            return float(np.logaddexp(1.0, s) ** self.param)
        if self.kind == "iterated_log":
            return float(math.log(math.e + np.logaddexp(1.0, s)))
        log_s = np.log(np.asarray(self.table_s, dtype=float))
        log_v = np.log(np.asarray(self.table_values, dtype=float))
        return float(math.exp(np.interp(s, log_s, log_v)))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def _ratio(self, s: np.ndarray, lam: np.ndarray) -> np.ndarray:
        return self(lam * s) / self(s) / (1.0 + lam ** self.potter_delta)

    def _reference_ratio_max(self) -> float:
        """Largest Potter ratio over the reference (s, lambda) range"""
        m = self.potter_scale
        s = np.geomspace(m, max(self._REF_S_MAX, 10 * m), 49)
        t = np.linspace(0.0, 1.0, 61)
        lo = np.log(m / s)[:, None]
        hi = math.log(self._REF_LAMBDA_MAX)
        lam = np.exp(lo + (hi - lo) * t[None, :])
        return float(np.max(self._ratio(s[:, None], lam)))

    def potter_check(self, samples: Iterable[Tuple[float, float]]) -> Dict:
        """
        Check the Potter bound on a sample set

        Args:
            samples: pairs (s, lambda) with s >= potter_scale and lambda >= potter_scale / s

        Returns:
            Dict with the smallest constant making the bound hold and a pass flag
        """
        pairs = np.asarray(list(samples), dtype=float)
        if pairs.size == 0:
            raise InvalidInputError("potter_check needs at least one (s, lambda) pair")
        pairs = pairs.reshape(-1, 2)
        s, lam = pairs[:, 0], pairs[:, 1]
        m = self.potter_scale
        if np.any(s < m * (1 - 1e-12)) or np.any(lam * s < m * (1 - 1e-12)):
            raise InvalidInputError("samples must satisfy s >= M and lambda >= M/s")
        c_observed = float(np.max(self._ratio(s, lam)))
        return {
            "C_observed": c_observed,
            "C_stored": self.potter_constant,
            "delta": self.potter_delta,
            "n_samples": int(s.size),
            "pass": bool(c_observed <= self.potter_constant),
        }

    def regular_variation_check(self, zeta: float, s_max: float = 1e30) -> Dict:
        """Monotone trend of s^zeta l(s) (up) and s^-zeta l(s) (down) on the far tail"""
        if zeta <= 0:
            raise InvalidInputError("zeta must be positive")
        s = np.geomspace(max(self.potter_scale, 1e3), s_max, 200)
        log_l = np.log(self(s))
        tail = slice(2 * s.size // 3, None)
        up = zeta * np.log(s[tail]) + log_l[tail]
        down = -zeta * np.log(s[tail]) + log_l[tail]
        growing = bool(np.all(np.diff(up) > 0))
        decaying = bool(np.all(np.diff(down) < 0))
        return {"zeta": zeta, "growing": growing, "decaying": decaying, "pass": growing and decaying}

    def log_slope(self, s: Sequence[float]) -> np.ndarray:
        """log l(s) / log s along the given radii"""
        s = np.asarray(s, dtype=float)
        return np.log(self(s)) / np.log(s)

    def critical_divergent(self) -> Optional[bool]:
        """Whether l(r) ln r -> infinity, decided per kind (None if undeclared)"""
        if self.kind == "constant":
            return True
        if self.kind == "power_log":
            return self.param > -1.0
        if self.kind == "iterated_log":
            return True
        return self.critical_declared

    def log_integral_divergent(self) -> bool:
        """Whether the integral of l(r)/r diverges at infinity"""
        if self.kind == "power_log":
            return self.param >= -1.0
        return True

    def to_dict(self) -> Dict:
        out = {
            "kind": self.kind,
            "param": self.param,
            "delta": self.potter_delta,
            "scale": self.potter_scale,
        }
        if self.kind == "tabulated":
            out["table"] = [list(pair) for pair in zip(self.table_s, self.table_values)]
            out["critical_declared"] = self.critical_declared
        return out

    @classmethod
    def from_dict(cls, spec: Dict) -> "SlowVaryingFn":
        kind = spec.get("kind", "constant")
        table = spec.get("table")
        kwargs = {
            "kind": kind,
            "param": float(spec.get("param", 1.0 if kind != "power_log" else 0.0)),
            "potter_delta": float(spec.get("delta", 0.5)),
            "potter_scale": float(spec.get("scale", 1.0)),
            "critical_declared": spec.get("critical_declared"),
        }
        if table:
            kwargs["table_s"] = tuple(float(row[0]) for row in table)
            kwargs["table_values"] = tuple(float(row[1]) for row in table)
        return cls(**kwargs)


@dataclass(frozen=True)
class MomentValue:
    """Moment of order a, tagged infinite when the tail integral diverges"""

    order: float
    value: float
    is_finite: bool


class RadialSampler:
    """Tabulated inverse CDF of a radial density with a power-law extension"""

    def __init__(self, density, r_cut: float, tail_exponent: float,
                 r_max: float = 1e12, core_points: int = 400, tail_points: int = 1600):
        """
        Args:
            density: vectorized unnormalized radial density q(r), Jacobian included
            r_cut: radius where the table switches from linear to geometric spacing
            tail_exponent: a with q(r) ~ r^{-1-a} beyond r_max
        """
        if tail_exponent <= 0:
            raise InvalidInputError("radial tail exponent must be positive")
        radii = np.unique(np.concatenate([
            np.linspace(0.0, r_cut, core_points + 1),
            np.geomspace(r_cut, r_max, tail_points + 1),
        ]))
        x, w = np.polynomial.legendre.leggauss(8)
        a, b = radii[:-1], radii[1:]
        half = 0.5 * (b - a)
        pts = 0.5 * (a + b)[:, None] + half[:, None] * x[None, :]
        masses = (density(pts) * w[None, :]).sum(axis=1) * half
        tail = float(density(np.array([r_max]))[0]) * r_max / tail_exponent
        survival = np.concatenate([np.cumsum(masses[::-1])[::-1], [0.0]]) + tail
        total = survival[0]
        self.total = float(total)
        self.r_max = float(r_max)
        self.tail_exponent = float(tail_exponent)
        self._surv_max = tail / total
        x_tab = -np.log(survival / total)
        y_tab = np.arcsinh(radii)
        self._inverse = PchipInterpolator(x_tab, y_tab)
        self._forward = PchipInterpolator(y_tab, x_tab)
        self._x_max = float(x_tab[-1])

    def inverse(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        surv = 1.0 - u
        out = np.empty_like(u)
        body = surv > self._surv_max
        out[body] = np.sinh(self._inverse(-np.log(surv[body])))
        far = ~body
        out[far] = self.r_max * (np.maximum(surv[far], 1e-300) / self._surv_max) ** (-1.0 / self.tail_exponent)
        return out

    def cdf(self, r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        inside = r <= self.r_max
        out[inside] = 1.0 - np.exp(-self._forward(np.arcsinh(np.maximum(r[inside], 0.0))))
        out[~inside] = 1.0 - self._surv_max * (r[~inside] / self.r_max) ** (-self.tail_exponent)
        return out


@dataclass(frozen=True)
class HeavyTailEquilibrium:
    """Even normalized equilibrium F = F0 l with tail kappa0 |v|^{-N-alpha}"""

    dim: int = 1
    alpha: float = 1.0
    kappa0: float = 1.0
    ell: SlowVaryingFn = field(default_factory=SlowVaryingFn)
    r_cut: float = 1.0
    core: str = "uniform"
    tail_exact: bool = True

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise InvalidInputError("dim must be a positive integer")
        if not (self.alpha > 0 and self.kappa0 > 0 and self.r_cut > 0):
            raise InvalidInputError("alpha, kappa0 and r_cut must be positive")
        if self.core not in CORE_KINDS:
            raise InvalidInputError(f"Unknown core profile: {self.core}")
        if self.tail_exact and not self.ell.is_constant:
            raise InvalidInputError("tail_exact requires a constant slowly varying function")
        object.__setattr__(self, "normalization", self._compute_normalization())
        sampler = None if self.analytic_radial else self._build_sampler()
        object.__setattr__(self, "_sampler", sampler)
        logger.info("Equilibrium N=%d alpha=%.4g core=%s ell=%s normalization=%.10g",
                    self.dim, self.alpha, self.core, self.ell.kind, self.normalization)

    # Profile -----------------------------------------------------------------

    @property
    def analytic_radial(self) -> bool:
        return self.core == "uniform" and self.ell.is_constant

    @property
    def sphere(self) -> float:
        return sphere_area(self.dim)

    @property
    def tail_constant(self) -> float:
        """Tail constant of the normalized F0, used by the limit coefficients"""
        return self.kappa0 / self.normalization

    def _tail(self, r):
        r = np.asarray(r, dtype=float)
        return self.kappa0 * self.ell(r) * r ** (-self.dim - self.alpha)

    def _profile(self, r):
        """Unnormalized radial profile G(r)"""
        r = np.asarray(r, dtype=float)
        glue = float(self._tail(self.r_cut))
        inside = r < self.r_cut
        out = np.empty_like(r)
        out[~inside] = self._tail(r[~inside])
        if self.core == "uniform":
            out[inside] = glue
        else:
            out[inside] = glue * np.exp(-(r[inside] ** 2 - self.r_cut ** 2) / 2.0)
        return out

    def _core_integral(self, power: float) -> float:
        """Integral of r^power G(r) over [0, r_cut]"""
        glue = float(self._tail(self.r_cut))
        if self.core == "uniform":
            return glue * self.r_cut ** (power + 1) / (power + 1)
        panels = max(1, int(math.ceil(self.r_cut)))
        pts, wts = _gauss_panels(0.0, self.r_cut, panels, GL_NODES_NORMALIZATION)
        return float(np.sum(wts * pts ** power * self._profile(pts)))

    def _tail_integral(self, power: float, lower: Optional[float] = None) -> float:
        """Integral of r^power G(r) over [lower, infinity), finite part only"""
        lower = self.r_cut if lower is None else lower
        decay = self.dim + self.alpha - power - 1.0
        if self.ell.is_constant:
            return self.kappa0 * self.ell.param * lower ** (-decay) / decay

        def integrand(s):
            return self.kappa0 * self.ell.at_log(s) * math.exp(-decay * s)

        value, err = integrate.quad(integrand, math.log(lower), np.inf, limit=QUAD_LIMIT,
                                    epsabs=0.0, epsrel=1e-11)
        if not np.isfinite(value):
            raise NumericalFailureError("tail quadrature failed", {"power": power, "error": err})
        return value

    def _compute_normalization(self) -> float:
        n = self.dim
        return self.sphere * (self._core_integral(n - 1.0) + self._tail_integral(n - 1.0))

    def _build_sampler(self) -> RadialSampler:
        def density(r):
            r = np.asarray(r, dtype=float)
            return self.sphere * r ** (self.dim - 1) * self._profile(r) / self.normalization

        return RadialSampler(density, self.r_cut, self.alpha)

    # Operations ----------------------------------------------------------------

    def radius(self, v) -> np.ndarray:
        arr = np.asarray(v, dtype=float)
        if not np.all(np.isfinite(arr)):
            raise InvalidInputError("velocity must be finite")
        if self.dim == 1:
            # (n, 1) grids and particle arrays carry a unit trailing axis
            if arr.ndim >= 2 and arr.shape[-1] == 1:
                arr = arr[..., 0]
            return np.abs(arr)
        if arr.shape[-1] != self.dim:
            raise InvalidInputError(f"velocity must have trailing dimension {self.dim}")
        return np.linalg.norm(arr, axis=-1)

    def radial_density(self, r):
        """Normalized F at radius r"""
        out = self._profile(np.atleast_1d(np.asarray(r, dtype=float))) / self.normalization
        return out if np.ndim(r) else float(out[0])

    def eval_F(self, v):
        """
        Evaluate the equilibrium

        Args:
            v: velocity (scalar or array for N=1, trailing axis N otherwise)

        Returns:
            F(v), same leading shape as v
        """
        r = self.radius(v)
        return self.radial_density(r)

    def radial_cdf(self, r):
        """P(|v| <= r)"""
        r = np.asarray(r, dtype=float)
        if not self.analytic_radial:
            return self._sampler.cdf(r)
        n, a = self.dim, self.alpha
        p_core = (1.0 / n) / (1.0 / n + 1.0 / a)
        x = np.maximum(r, 0.0) / self.r_cut
        with np.errstate(divide="ignore"):
            return np.where(x < 1.0, p_core * x ** n, 1.0 - (1.0 - p_core) * np.maximum(x, 1.0) ** (-a))

    def tail_mass(self, radius: float) -> float:
        """P(|v| > radius)"""
        if radius < self.r_cut:
            return float(1.0 - self.radial_cdf(radius))
        if self.analytic_radial:
            return float(1.0 - self.radial_cdf(radius))
        n = self.dim
        return self.sphere * self._tail_integral(n - 1.0, lower=radius) / self.normalization

    def moment(self, a: float) -> MomentValue:
        """
        Moment of |v|^a under F

        Args:
            a: nonnegative order

        Returns:
            MomentValue, tagged infinite when the tail integral diverges
        """
        if a < 0 or not np.isfinite(a):
            raise InvalidInputError("moment order must be finite and nonnegative")
        if a > self.alpha or (a == self.alpha and (self.ell.is_constant or self.ell.log_integral_divergent())):
            return MomentValue(order=a, value=float("inf"), is_finite=False)
        power = self.dim - 1.0 + a
        if a == self.alpha:
            def integrand(s):
                return self.kappa0 * self.ell.at_log(s)

            tail, _ = integrate.quad(integrand, math.log(self.r_cut), np.inf, limit=QUAD_LIMIT)
        else:
            tail = self._tail_integral(power)
        value = self.sphere * (self._core_integral(power) + tail) / self.normalization
        return MomentValue(order=a, value=float(value), is_finite=True)

    def expectation(self, fn, upper: Optional[float] = None) -> float:
        """
        Integral of fn(|v|) F(v) dv

        Args:
            fn: vectorized radial function growing slower than r^alpha
            upper: optional truncation radius (must exceed r_cut)

        Returns:
            The expectation under F, over |v| <= upper when given
        """
        n = self.dim
        panels = max(1, int(math.ceil(self.r_cut)))
        pts, wts = _gauss_panels(0.0, self.r_cut, panels, GL_NODES_NORMALIZATION)
        core = float(np.sum(wts * pts ** (n - 1) * fn(pts) * self._profile(pts)))

        def integrand(s):
            if s > 700.0:
                return 0.0
            r = math.exp(s)
            return float(fn(np.array([r]))[0]) * self.kappa0 * self.ell.at_log(s) * math.exp(-self.alpha * s)

        end = np.inf if upper is None else math.log(max(upper, self.r_cut))
        tail, err = integrate.quad(integrand, math.log(self.r_cut), end, limit=QUAD_LIMIT)
        if not np.isfinite(tail):
            raise NumericalFailureError("expectation tail quadrature failed", {"error": err})
        return self.sphere * (core + tail) / self.normalization

    def max_density(self) -> float:
        r = np.concatenate([[0.0], np.linspace(0.0, self.r_cut, 65)[1:], np.geomspace(self.r_cut, 1e6, 200)])
        return float(np.max(self.radial_density(r)))

    def draw_radii(self, rng: np.random.Generator, n: int) -> np.ndarray:
        u = rng.random(n)
        if not self.analytic_radial:
            return self._sampler.inverse(u)
        d, a = self.dim, self.alpha
        p_core = (1.0 / d) / (1.0 / d + 1.0 / a)
        out = np.empty(n)
        core = u < p_core
        out[core] = self.r_cut * (u[core] / p_core) ** (1.0 / d)
        out[~core] = self.r_cut * ((1.0 - u[~core]) / (1.0 - p_core)) ** (-1.0 / a)
        return out

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """n velocities from F using the given generator, shape (n, dim)"""
        radii = self.draw_radii(rng, n)
        return radii[:, None] * random_directions(rng, n, self.dim)

    def sample(self, seed: int, n: int) -> np.ndarray:
        """
        Draw i.i.d. velocities from F

        Args:
            seed: integer seed of a counter-based generator
            n: number of draws

        Returns:
            Array of shape (n, dim)
        """
        if n < 1:
            raise InvalidInputError("n must be at least 1")
        rng = np.random.Generator(np.random.Philox(seed))
        return self.draw(rng, int(n))

    def tilted_sampler(self, beta: float) -> RadialSampler:
        """Radial sampler of the law proportional to <v>^beta F"""
        if beta >= self.alpha:
            raise InvalidInputError("tilted law needs beta < alpha")

        def density(r):
            r = np.asarray(r, dtype=float)
            return r ** (self.dim - 1) * (1.0 + r * r) ** (beta / 2.0) * self._profile(r)

        return RadialSampler(density, self.r_cut, self.alpha - beta)

    def to_dict(self) -> Dict:
        return {
            "dim": self.dim,
            "alpha": self.alpha,
            "kappa0": self.kappa0,
            "ell": self.ell.to_dict(),
            "r_cut": self.r_cut,
            "core": {"kind": self.core},
            "tail_exact": self.tail_exact,
        }

    @classmethod
    def from_dict(cls, spec: Dict) -> "HeavyTailEquilibrium":
        core = spec.get("core", {"kind": "uniform"})
        core_kind = core.get("kind", "uniform") if isinstance(core, dict) else str(core)
        return cls(
            dim=int(spec.get("dim", 1)),
            alpha=float(spec["alpha"]),
            kappa0=float(spec.get("kappa0", 1.0)),
            ell=SlowVaryingFn.from_dict(spec.get("ell", {"kind": "constant", "param": 1.0})),
            r_cut=float(spec.get("r_cut", 1.0)),
            core=core_kind,
            tail_exact=bool(spec.get("tail_exact", True)),
        )


def random_directions(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    """Uniform directions on S^{dim-1}, shape (n, dim)"""
    if dim == 1:
        return (2.0 * rng.integers(0, 2, size=n) - 1.0)[:, None]
    g = rng.standard_normal((n, dim))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def hill_estimator(samples, tail_fraction: float = 0.01) -> float:
    """
    Hill estimate of the tail index from the largest order statistics

    Args:
        samples: velocities (any shape with trailing dim) or radii
        tail_fraction: share of the sample treated as the tail

    Returns:
        Estimated tail index
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim > 1:
        x = np.linalg.norm(x, axis=-1)
    x = np.sort(np.abs(x).ravel())[::-1]
    k = int(x.size * tail_fraction)
    if k < 2:
        raise InvalidInputError("tail_fraction leaves fewer than two order statistics")
    logs = np.log(x[:k]) - math.log(x[k])
    return float(1.0 / np.mean(logs))
