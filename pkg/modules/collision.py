"""
Collision Module
Collision kernels, the velocity grid and the discrete operator L = K - nu with its bound checks
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy import integrate, linalg, special
from scipy.interpolate import PchipInterpolator
from scipy.spatial.distance import cdist

from config import (
    B3_CUTOFFS,
    B3_DIVERGENCE_RATIO,
    B3_GROWTH_SLOPE,
    B3_RELATIVE_SLACK,
    BALANCE_RESCALE_TOL,
    CELL_CONDITION_MAX,
    DEFAULT_THREADS,
    GRID_DEFAULTS,
    GRID_MASS_TOL,
    KERNEL_KINDS,
    NU0_RADII,
    QUAD_LIMIT,
)
from modules.equilibria import HeavyTailEquilibrium, sphere_area
from modules.errors import (
    InvalidInputError,
    NumericalFailureError,
    PreconditionError,
    UnsupportedRegimeError,
)

logger = logging.getLogger(__name__)

DEFAULT_PROBE_RADII = (0.0, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0, 100.0, 300.0, 1000.0)
NU_TABLE_MAX = 1e6


@dataclass(frozen=True, eq=False)
class VelocityGrid:
    """Symmetric radial-angular quadrature inside |v| <= r_cut_outer"""

    nodes: np.ndarray
    weights: np.ndarray
    radii: np.ndarray
    r_cut_outer: float
    tail_rule: Dict

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def size(self) -> int:
        return self.weights.size

    def integrate(self, f):
        """Grid quadrature over the last axis"""
        return np.asarray(f) @ self.weights

    @classmethod
    def build(cls, equilibrium: HeavyTailEquilibrium, r_cut_outer: Optional[float] = None,
              core_panels: Optional[int] = None, panels: Optional[int] = None,
              nodes_per_panel: Optional[int] = None, angular_nodes: Optional[int] = None,
              core_grading: float = 1.0) -> "VelocityGrid":
        """
        Build the grid for an equilibrium

        Args:
            equilibrium: the equilibrium whose core radius splits the panels
            r_cut_outer: truncation radius R
            core_panels: panels on [0, r_cut], graded towards 0 when core_grading > 1
            panels: geometric panels on [r_cut, R]
            nodes_per_panel: Gauss-Legendre nodes per radial panel
            angular_nodes: phi nodes (2-D, even) or cos(theta) nodes (3-D)

        Returns:
            VelocityGrid with the analytic tail mass recorded in tail_rule
        """
        dim = equilibrium.dim
        defaults = GRID_DEFAULTS.get(dim, GRID_DEFAULTS[3])
        big_r = float(r_cut_outer or defaults["r_cut_outer"])
        core_panels = int(core_panels or defaults["core_panels"])
        panels = int(panels or defaults["panels"])
        nodes_per_panel = int(nodes_per_panel or defaults["nodes_per_panel"])
        angular_nodes = int(angular_nodes or defaults["angular_nodes"])
        if big_r <= 0 or core_panels < 1 or panels < 1 or nodes_per_panel < 1:
            raise InvalidInputError("grid sizes must be positive")

        r_core = min(equilibrium.r_cut, big_r)
        edges = r_core * np.linspace(0.0, 1.0, core_panels + 1) ** core_grading
        if big_r > r_core:
            edges = np.concatenate([edges, np.geomspace(r_core, big_r, panels + 1)[1:]])
        x, w = np.polynomial.legendre.leggauss(nodes_per_panel)
        half = 0.5 * np.diff(edges)
        mid = 0.5 * (edges[1:] + edges[:-1])
        r = (mid[:, None] + half[:, None] * x[None, :]).ravel()
        wr = (half[:, None] * w[None, :]).ravel()

        if dim == 1:
            nodes = np.concatenate([-r[::-1], r])[:, None]
            weights = np.concatenate([wr[::-1], wr])
        elif dim == 2:
            if angular_nodes % 2:
                raise InvalidInputError("angular_nodes must be even in 2-D")
            phi = 2.0 * math.pi * (np.arange(angular_nodes) + 0.5) / angular_nodes
            dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
            nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
            weights = np.repeat(wr * r, angular_nodes) * (2.0 * math.pi / angular_nodes)
        elif dim == 3:
            mu, wmu = np.polynomial.legendre.leggauss(angular_nodes)
            n_phi = 2 * angular_nodes
            phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
            sin_t = np.sqrt(1.0 - mu ** 2)
            dirs = np.stack([
                (sin_t[:, None] * np.cos(phi)[None, :]).ravel(),
                (sin_t[:, None] * np.sin(phi)[None, :]).ravel(),
                np.repeat(mu, n_phi),
            ], axis=1)
            wdir = np.repeat(wmu, n_phi) * (2.0 * math.pi / n_phi)
            nodes = (r[:, None, None] * dirs[None, :, :]).reshape(-1, 3)
            weights = ((wr * r * r)[:, None] * wdir[None, :]).ravel()
        else:
            raise InvalidInputError("velocity grids are provided for N <= 3")

        tail = equilibrium.tail_mass(big_r) if big_r > r_core else equilibrium.tail_mass(r_core)
        radii = np.linalg.norm(nodes, axis=1)
        grid = cls(nodes=nodes, weights=weights, radii=radii, r_cut_outer=big_r,
                   tail_rule={"kind": "power_tail", "radius": big_r, "mass": float(tail)})
        defect = abs(float(grid.integrate(equilibrium.eval_F(nodes))) + tail - 1.0)
        if defect > GRID_MASS_TOL:
            raise NumericalFailureError("grid quadrature of F misses unit mass",
                                        {"defect": defect, "r_cut_outer": big_r, "size": grid.size})
        logger.info("Velocity grid N=%d size=%d R=%.3g tail mass=%.3e", dim, grid.size, big_r, tail)
        return grid


@dataclass(frozen=True, eq=False)
class CellProblemSolution:
    """Solution of L(chi) = -v F with zero mean"""

    chi: np.ndarray
    D: np.ndarray
    residual: float
    condition: float


def _direction_rule(dim: int, nodes: int = 16):
    """Cosines mu against a fixed axis with weights summing to |S^{N-1}|"""
    if dim == 1:
        return np.array([1.0, -1.0]), np.array([1.0, 1.0])
    a = (dim - 3) / 2.0
    mu, w = special.roots_jacobi(nodes, a, a)
    return mu, sphere_area(dim - 1) * w


def _kinks(r: float, mu: float, r_cut: float) -> List[float]:
    """Displacements rho > 0 along direction mu at which |v + rho e| crosses r_cut"""
    disc = r * r * mu * mu - r * r + r_cut * r_cut
    kinks = []
    if disc >= 0:
        for root in (-r * mu - math.sqrt(disc), -r * mu + math.sqrt(disc)):
            if root > 1e-12:
                kinks.append(root)
    return sorted(kinks)


def _radial_growth(radii: np.ndarray, values: Sequence[float]) -> float:
    """Log-log slope of the B3 values between the two largest radii beyond |v| = 10"""
    far = [(r, v) for r, v in zip(radii, values) if r >= 10.0]
    if len(far) < 2:
        return 0.0
    (r1, v1), (r2, v2) = far[-2], far[-1]
    if r2 <= r1:
        return 0.0
    return float(math.log(v2 / v1) / math.log(r2 / r1))


class CollisionKernel:
    """Collision kernel sigma(v, v') = b(v, v') F(v) balanced against an equilibrium"""

    def __init__(self, equilibrium: HeavyTailEquilibrium, kind: str = "bgk", beta: float = 0.0,
                 nu0: Optional[float] = None, M_b3: Optional[float] = None, unchecked: bool = False,
                 grid: Optional[Dict] = None, velocity_grid: Optional[VelocityGrid] = None):
        if kind not in KERNEL_KINDS:
            raise InvalidInputError(f"Unknown kernel kind: {kind}")
        self.equilibrium = equilibrium
        self.kind = kind
        self.beta = 0.0 if kind == "bgk" else float(beta)
        self.unchecked = bool(unchecked)
        self.M_b3 = M_b3
        self._check_windows()

        self.grid_params = dict(grid or {})
        self.grid = velocity_grid or VelocityGrid.build(equilibrium, **self.grid_params)
        self._setup_frequency()
        self.nu0 = float(nu0) if nu0 is not None else self._measure_nu0()
        self._build_operator()
        logger.info("Kernel %s beta=%.3g nu0=%.6g balance rescale=%.2e truncated mass=%.2e",
                    self.kind, self.beta, self.nu0, self.balance_rescale, self.truncated_mass)

    # Windows -------------------------------------------------------------------

    def nu_window(self):
        """Open interval of beta for which nu is finite"""
        a, n = self.equilibrium.alpha, self.equilibrium.dim
        if self.kind == "bgk":
            return (-np.inf, np.inf)
        if self.kind == "separable":
            return (-a, a)
        if self.kind == "shifted":
            return (-np.inf, a)
        return (-float(n), a)

    def b3_window(self):
        """Open interval of beta for which the B3 functional is bounded"""
        a, n = self.equilibrium.alpha, self.equilibrium.dim
        if self.kind == "bgk":
            return (-np.inf, np.inf)
        if self.kind in ("separable", "shifted"):
            return (-a, a)
        return (-min(a, n / 2.0), min(a, float(n)))

    def _check_windows(self):
        lo, hi = self.nu_window()
        if not lo < self.beta < hi:
            raise InvalidInputError(
                f"{self.kind} kernel needs {lo:g} < beta < {hi:g} for a finite collision frequency")
        lo, hi = self.b3_window()
        if not self.unchecked and not lo < self.beta < hi:
            raise InvalidInputError(
                f"{self.kind} kernel needs {lo:g} < beta < {hi:g}; construct with unchecked=True to probe divergence")

    # Frequency -----------------------------------------------------------------

    def b(self, v, w):
        """Symmetric kernel b(v, w) for matching arrays of velocities"""
        eq = self.equilibrium
        if self.kind == "bgk":
            return np.ones(np.broadcast(eq.radius(v), eq.radius(w)).shape)
        if self.kind == "separable":
            rv, rw = eq.radius(v), eq.radius(w)
            return (1.0 + rv * rv) ** (self.beta / 2.0) * (1.0 + rw * rw) ** (self.beta / 2.0)
        d = eq.radius(np.asarray(v, dtype=float) - np.asarray(w, dtype=float))
        if self.kind == "shifted":
            return (1.0 + d * d) ** (self.beta / 2.0)
        return d ** self.beta

    def _setup_frequency(self):
        eq = self.equilibrium
        self.m_beta = 1.0
        self._nu_interp = None
        if self.kind == "separable":
            self.m_beta = eq.expectation(lambda r: (1.0 + r * r) ** (self.beta / 2.0))
        elif self.kind in ("shifted", "physical"):
            radii = np.concatenate([[0.0], np.geomspace(1e-2, NU_TABLE_MAX, 97)])
            with ThreadPoolExecutor(max_workers=DEFAULT_THREADS) as pool:
                values = list(pool.map(lambda r: self.centered_integral(r, self.beta, eq.radial_density), radii))
            values = np.asarray(values)
            if np.any(~np.isfinite(values)) or np.any(values <= 0):
                raise NumericalFailureError("collision frequency quadrature failed",
                                            {"radii": radii[~(values > 0)].tolist()})
            self._nu_interp = PchipInterpolator(np.arcsinh(radii), np.log(values))
            self._nu_table_end = float(values[-1])

    def nu_radial(self, r):
        """Continuous collision frequency at radius r"""
        r = np.abs(np.asarray(r, dtype=float))
        if self.kind == "bgk":
            out = np.ones_like(r)
        elif self.kind == "separable":
            out = self.m_beta * (1.0 + r * r) ** (self.beta / 2.0)
        else:
            inside = r <= NU_TABLE_MAX
            out = np.empty_like(r)
            out[inside] = np.exp(self._nu_interp(np.arcsinh(r[inside])))
            out[~inside] = self._nu_table_end * (r[~inside] / NU_TABLE_MAX) ** self.beta
        return out if out.ndim else float(out)

    def nu(self, v):
        """
        Collision frequency nu(v) = integral of sigma(v', v) dv'

        Args:
            v: velocity (scalar or array for N=1, trailing axis N otherwise)

        Returns:
            nu(v); exactly 1 for bgk
        """
        return self.nu_radial(self.equilibrium.radius(v))

    def _measure_nu0(self) -> float:
        if self.kind == "bgk":
            return 1.0
        r = np.geomspace(NU0_RADII[0], NU0_RADII[1], 21)
        return float(np.median(self.nu_radial(r) / r ** self.beta))

    def nu_log_slope(self, r_lo: float = NU0_RADII[0], r_hi: float = NU0_RADII[1], points: int = 9) -> float:
        """Least-squares slope of log nu against log |v|"""
        r = np.geomspace(r_lo, r_hi, points)
        return float(np.polyfit(np.log(r), np.log(self.nu_radial(r)), 1)[0])

    def nu_comparability(self, radii: Sequence[float]) -> Dict:
        """Smallest C with C^-1 <v>^beta <= nu <= C <v>^beta on the radii"""
        r = np.asarray(radii, dtype=float)
        ratio = self.nu_radial(r) / (1.0 + r * r) ** (self.beta / 2.0)
        c = float(max(ratio.max(), 1.0 / ratio.min()))
        return {"C": c, "pass": bool(np.isfinite(c))}

    def centered_integral(self, r: float, power: float, g) -> float:
        """
        Integral of g(|v'|) dist(v - v')^power dv' for |v| = r

        dist is |.| for the physical kernel and <.> for the shifted one.
        The displacement rho = |v' - v| is integrated per direction with an
        algebraic weight near rho = 0, kink points where |v'| crosses r_cut,
        and a logarithmic variable on the far tail.
        """
        eq = self.equilibrium
        n = eq.dim
        r_cut = eq.r_cut
        physical = self.kind == "physical"
        mus, wts = _direction_rule(n)
        total = 0.0
        for mu, wdir in zip(mus, wts):
            def radius_of(rho, mu=mu):
                return math.sqrt(max(r * r + rho * rho + 2.0 * r * rho * mu, 0.0))

            def dist(rho):
                return rho ** power if physical else (1.0 + rho * rho) ** (power / 2.0)

            kinks = _kinks(r, float(mu), r_cut)
            h = min(1.0, 0.5 * kinks[0]) if kinks else 1.0
            upper = max(4.0 * (r + r_cut), 10.0)

            if physical:
                near, err1 = integrate.quad(lambda rho: float(g(radius_of(rho))), 0.0, h,
                                            weight="alg", wvar=(power + n - 1.0, 0.0), limit=QUAD_LIMIT)
            else:
                near, err1 = integrate.quad(lambda rho: rho ** (n - 1) * dist(rho) * float(g(radius_of(rho))),
                                            0.0, h, limit=QUAD_LIMIT)
            inner = [k for k in kinks if h < k < upper]
            mid, err2 = integrate.quad(lambda rho: rho ** (n - 1) * dist(rho) * float(g(radius_of(rho))),
                                       h, upper, points=inner or None, limit=QUAD_LIMIT)

            def far_integrand(s):
                if s > 700.0:
                    return 0.0
                rho = math.exp(s)
                return rho ** n * dist(rho) * float(g(radius_of(rho)))

            far, err3 = integrate.quad(far_integrand, math.log(upper), np.inf, limit=QUAD_LIMIT)
            value = near + mid + far
            if not np.isfinite(value):
                raise NumericalFailureError("centered quadrature failed",
                                            {"radius": r, "mu": float(mu), "power": power,
                                             "errors": [err1, err2, err3]})
            total += wdir * value
        return float(total)

    def truncated_centered_integral(self, r: float, power: float, g, cutoff: float) -> float:
        """centered_integral restricted to 1/cutoff <= rho <= cutoff (1 + r + r_cut), in log rho"""
        eq = self.equilibrium
        n = eq.dim
        physical = self.kind == "physical"
        lo = -math.log(cutoff)
        hi = math.log(cutoff * (1.0 + r + eq.r_cut))
        mus, wts = _direction_rule(n)
        total = 0.0
        for mu, wdir in zip(mus, wts):
            def integrand(s, mu=mu):
                rho = math.exp(s)
                dist = rho ** power if physical else (1.0 + rho * rho) ** (power / 2.0)
                radius = math.sqrt(max(r * r + rho * rho + 2.0 * r * rho * mu, 0.0))
                return rho ** n * dist * float(g(radius))

            points = [math.log(k) for k in _kinks(r, float(mu), eq.r_cut) if lo < math.log(k) < hi]
            value, _ = integrate.quad(integrand, lo, hi, points=points or None, limit=QUAD_LIMIT)
            total += wdir * value
        return float(total)

    # Discrete operator -----------------------------------------------------------

    def _pair_matrix(self) -> np.ndarray:
        nodes, r = self.grid.nodes, self.grid.radii
        if self.kind == "bgk":
            return np.ones((r.size, r.size))
        if self.kind == "separable":
            t = (1.0 + r * r) ** (self.beta / 2.0)
            return np.outer(t, t)
        d = cdist(nodes, nodes)
        if self.kind == "shifted":
            return (1.0 + d * d) ** (self.beta / 2.0)
        with np.errstate(divide="ignore"):
            b = d ** self.beta
        if self.beta < 0:
            np.fill_diagonal(b, 0.0)
        return b

    def _build_operator(self):
        grid = self.grid
        w = grid.weights
        f_raw = self.equilibrium.eval_F(grid.nodes)
        # renormalized so that L annihilates F_grid; the mass beyond R is kept as truncated_mass
        self.grid_mass = float(f_raw @ w)
        self.truncated_mass = 1.0 - self.grid_mass
        self.F_grid = f_raw / self.grid_mass
        if self.kind == "bgk":
            self._K = None
            self.nu_grid = np.full(grid.size, float(self.F_grid @ w))
        else:
            b = self._pair_matrix()
            self.nu_grid = b @ (w * self.F_grid)
            self._K = self.F_grid[:, None] * b * w[None, :]
        probes = np.unique(np.linspace(0, grid.size - 1, 16).astype(int))
        probes = probes[grid.radii[probes] <= NU0_RADII[1]]
        continuous = self.nu_radial(grid.radii[probes])
        self.balance_rescale = float(np.max(np.abs(self.nu_grid[probes] / continuous - 1.0))) if probes.size else 0.0
        if self.balance_rescale > BALANCE_RESCALE_TOL:
            logger.warning("Discrete balance rescales nu by %.3e (tolerance %.1e)",
                           self.balance_rescale, BALANCE_RESCALE_TOL)

    def _grid_function(self, f) -> np.ndarray:
        f = np.asarray(f)
        if f.shape[-1] != self.grid.size:
            raise InvalidInputError(f"grid function has {f.shape[-1]} values, grid has {self.grid.size}")
        return f

    def gain(self, f):
        """K(f) on the grid"""
        f = self._grid_function(f)
        if self._K is None:
            return (f @ self.grid.weights)[..., None] * self.F_grid
        return f @ self._K.T

    def apply_L(self, f):
        """
        Apply L = K - nu on the grid

        Args:
            f: grid function, or a stack of them along leading axes

        Returns:
            K(f) - nu f; for bgk the relaxation <f> F - f
        """
        f = self._grid_function(f)
        return self.gain(f) - self.nu_grid * f

    def matrix(self) -> np.ndarray:
        """Dense matrix of L on the grid"""
        if self._K is None:
            k = np.outer(self.F_grid, self.grid.weights)
        else:
            k = self._K.copy()
        k[np.diag_indices_from(k)] -= self.nu_grid
        return k

    def norm_F_inv(self, f) -> float:
        f = self._grid_function(f)
        return float(np.sqrt(np.sum(self.grid.weights * np.abs(f) ** 2 / self.F_grid, axis=-1)))

    def norm_nu_F_inv(self, f) -> float:
        f = self._grid_function(f)
        return float(np.sqrt(np.sum(self.grid.weights * self.nu_grid * np.abs(f) ** 2 / self.F_grid, axis=-1)))

    def mass_defect(self, f) -> float:
        """|integral of L(f)| on the grid"""
        return float(np.abs(self.grid.integrate(self.apply_L(f))))

    # Checks ----------------------------------------------------------------------

    def symmetry_check(self, f, g, tol: float = 1e-8) -> Dict:
        """Compare the integrals of L(f) g / F and L(g) f / F"""
        w = self.grid.weights
        lhs = float(np.real(np.sum(w * self.apply_L(f) * np.conj(g) / self.F_grid)))
        rhs = float(np.real(np.sum(w * self.apply_L(g) * np.conj(f) / self.F_grid)))
        scale = max(1.0, abs(lhs), abs(rhs))
        return {"lhs": lhs, "rhs": rhs, "pass": bool(abs(lhs - rhs) <= tol * scale)}

    def coercivity_check(self, f) -> Dict:
        """
        Check the coercivity estimate for one grid function

        Args:
            f: real or complex grid function

        Returns:
            Dict with lhs = integral of L(f) f / F, rhs = -(1/2M) |f - <f>F|^2 nu / F, and a pass flag
        """
        if self.M_b3 is None:
            raise PreconditionError("M_b3 is unknown; run b3_check first or supply M_b3")
        f = self._grid_function(f)
        w = self.grid.weights
        lhs = float(np.real(np.sum(w * self.apply_L(f) * np.conj(f) / self.F_grid)))
        fluct = f - (f @ w) * self.F_grid
        dissipation = float(np.sum(w * self.nu_grid * np.abs(fluct) ** 2 / self.F_grid))
        m_eff = self.M_b3 * (1.0 + B3_RELATIVE_SLACK)
        rhs = -dissipation / (2.0 * m_eff)
        tol = 1e-10 * float(np.sum(w * self.nu_grid * np.abs(f) ** 2 / self.F_grid))
        return {"lhs": lhs, "rhs": rhs, "M_b3": self.M_b3, "pass": bool(lhs <= rhs + tol)}

    def k_boundedness_check(self) -> Dict:
        """Operator norm of nu^-1 K in L^2(nu F^-1) on the grid"""
        w = self.grid.weights
        scale = np.sqrt(w * self.nu_grid / self.F_grid)
        gain = np.outer(self.F_grid, w) if self._K is None else self._K
        t = scale[:, None] * (gain / self.nu_grid[:, None]) / scale[None, :]
        norm = float(np.linalg.norm(t, 2))
        frobenius = float(np.linalg.norm(t))
        return {"norm": norm, "frobenius": frobenius,
                "pass": bool(np.isfinite(norm) and norm <= frobenius * (1.0 + 1e-12))}

    def _continuous_b3(self, r: float, mode: str) -> float:
        eq = self.equilibrium
        nu_r = float(self.nu_radial(r))
        if self.kind == "bgk":
            first = 1.0
        elif self.kind == "separable":
            first = self.m_beta * eq.expectation(lambda s: (1.0 + s * s) ** (-self.beta / 2.0))
        else:
            first = nu_r * self.centered_integral(r, -self.beta, eq.radial_density)
        if mode == "classical":
            return first + self._second_moment_over_nu()
        if self.kind == "bgk":
            return first + 1.0
        if self.kind == "separable":
            return first + 1.0 / self.m_beta

        def weighted(s):
            return eq.radial_density(s) / self.nu_radial(s)

        second = math.sqrt(self.centered_integral(r, 2.0 * self.beta, weighted)) / nu_r
        return first + second

    def _second_moment_over_nu(self) -> float:
        eq = self.equilibrium
        if eq.alpha <= 2.0 - self.beta:
            return float("inf")
        return eq.expectation(lambda s: s * s / self.nu_radial(s))

    def _b3_terms(self, r: float, mode: str, cutoff: float) -> Dict[str, float]:
        """The integrals entering B3 at radius r, truncated at the cutoff"""
        eq = self.equilibrium
        upper = cutoff * (1.0 + eq.r_cut)
        terms = {}
        if self.kind == "separable":
            terms["first"] = eq.expectation(lambda s: (1.0 + s * s) ** (-self.beta / 2.0), upper=upper)
        elif self.kind != "bgk":
            terms["first"] = self.truncated_centered_integral(r, -self.beta, eq.radial_density, cutoff)
        if mode == "classical":
            terms["classical"] = eq.expectation(lambda s: s * s / self.nu_radial(s), upper=upper)
        elif self.kind in ("shifted", "physical"):
            terms["second"] = self.truncated_centered_integral(
                r, 2.0 * self.beta, lambda s: eq.radial_density(s) / self.nu_radial(s), cutoff)
        return terms

    def divergence_scan(self, r: float, mode: str = "b3") -> Dict:
        """
        Follow the B3 integrals at one radius through growing cutoffs

        A term diverges when its increments between successive cutoffs stop
        shrinking geometrically while still being resolvable against its value.

        Returns:
            Dict with the truncated values per term, the last increment ratios and
            the name of the first diverging term (or None)
        """
        sequences: Dict[str, List[float]] = {}
        for cutoff in B3_CUTOFFS:
            for name, value in self._b3_terms(r, mode, cutoff).items():
                sequences.setdefault(name, []).append(value)
        ratios = {}
        diverged = None
        for name, values in sequences.items():
            v = np.asarray(values, dtype=float)
            if not np.all(np.isfinite(v)):
                ratios[name] = float("inf")
                diverged = diverged or name
                continue
            inc = np.diff(v)
            ratio = float(inc[-1] / inc[-2]) if inc[-2] > 0 else float("inf")
            ratios[name] = ratio
            if inc[-1] > 1e-6 * abs(v[-1]) and ratio >= B3_DIVERGENCE_RATIO:
                diverged = diverged or name
        return {"radius": r, "sequences": sequences, "ratios": ratios, "diverged": diverged}

    def _grid_b3(self) -> float:
        w, f, nu = self.grid.weights, self.F_grid, self.nu_grid
        b = self._pair_matrix()
        off = ~np.eye(b.shape[0], dtype=bool)
        with np.errstate(divide="ignore"):
            inv_b = np.where(off, 1.0 / b, 0.0)
        first = nu * (inv_b @ (w * f))
        second = np.sqrt(((b * b) * off) @ (w * f / nu)) / nu
        return float(np.max(first + second))

    def b3_check(self, probe_velocities: Optional[Sequence] = None, mode: str = "b3") -> Dict:
        """
        Measure the B3 bound over probe velocities

        Every radius is first run through divergence_scan; radii whose integrals
        converge are then evaluated exactly. The bound also fails when the values
        keep growing with |v|.

        Args:
            probe_velocities: velocities (or radii for N=1) to probe
            mode: "b3" for the coercivity constant, "classical" for the diffusion-limit bound

        Returns:
            Dict with per_probe values, M_observed, the pass flag and, on failure,
            the failing integral and probe radius
        """
        if mode not in ("b3", "classical"):
            raise InvalidInputError("mode must be 'b3' or 'classical'")
        probes = DEFAULT_PROBE_RADII if probe_velocities is None else probe_velocities
        eq = self.equilibrium
        arr = np.asarray(probes, dtype=float)
        # scalars are radii in any dimension
        radii = np.abs(arr).ravel() if (eq.dim == 1 or arr.ndim == 1) else eq.radius(arr)
        radii = np.sort(radii)

        def measure(r):
            scan = self.divergence_scan(float(r), mode)
            value = float("inf") if scan["diverged"] else self._continuous_b3(float(r), mode)
            return scan, value

        with ThreadPoolExecutor(max_workers=DEFAULT_THREADS) as pool:
            results = list(pool.map(measure, radii))
        per_probe = [value for _, value in results]
        report = {"mode": mode, "kind": self.kind, "beta": self.beta, "probes": radii.tolist(),
                  "per_probe": per_probe, "ratios": [scan["ratios"] for scan, _ in results],
                  "failed_integral": None, "probe": None}

        for (scan, value), r in zip(results, radii):
            if scan["diverged"] or not np.isfinite(value):
                failed = scan["diverged"] or ("classical" if mode == "classical" else "second")
                logger.warning("B3 %s integral diverges for %s beta=%.3g at |v|=%.3g",
                               failed, self.kind, self.beta, r)
                report.update({"M_observed": float("inf"), "failed_integral": failed,
                               "probe": float(r), "pass": False})
                return report

        growth = _radial_growth(radii, per_probe)
        report["radial_slope"] = growth
        if growth > B3_GROWTH_SLOPE:
            logger.warning("B3 values grow like |v|^%.3g for %s beta=%.3g", growth, self.kind, self.beta)
            report.update({"M_observed": float("inf"), "failed_integral": "growth",
                           "probe": float(radii[-1]), "pass": False})
            return report

        continuous = float(max(per_probe))
        grid_sup = self._grid_b3() if mode == "b3" else 0.0
        m_observed = max(continuous, grid_sup)
        passed = bool(np.isfinite(m_observed))
        if passed and mode == "b3" and self.M_b3 is not None:
            passed = m_observed <= self.M_b3 * (1.0 + B3_RELATIVE_SLACK)
        report.update({"M_observed": m_observed, "continuous_sup": continuous, "grid_sup": grid_sup,
                       "pass": passed})
        return report

    def calibrate_b3(self, probe_velocities: Optional[Sequence] = None) -> Dict:
        """Run b3_check and adopt M_observed as the coercivity constant when none is set"""
        report = self.b3_check(probe_velocities)
        if report["pass"] and self.M_b3 is None:
            self.M_b3 = report["M_observed"]
        return report

    def solve_cell_problem(self) -> CellProblemSolution:
        """
        Solve L(chi) = -v F with a zero-mean constraint

        Returns:
            CellProblemSolution with chi (grid x N), D = integral of v (x) chi and the residual
        """
        eq = self.equilibrium
        if eq.alpha <= 2.0 - self.beta:
            raise UnsupportedRegimeError(
                f"cell problem needs alpha > 2 - beta ({eq.alpha:g} <= {2.0 - self.beta:g})")
        w, f = self.grid.weights, self.F_grid
        n = self.grid.size
        lmat = self.matrix()
        system = np.zeros((n + 1, n + 1))
        system[:n, :n] = lmat
        system[:n, n] = f
        system[n, :n] = w
        condition = float(np.linalg.cond(system))
        if not np.isfinite(condition) or condition > CELL_CONDITION_MAX:
            raise NumericalFailureError("cell problem is ill-conditioned", {"condition": condition})
        rhs = np.zeros((n + 1, eq.dim))
        rhs[:n] = -self.grid.nodes * f[:, None]
        solution = linalg.lu_solve(linalg.lu_factor(system), rhs)
        chi = solution[:n]
        residual = float(np.max(np.abs(lmat @ chi + self.grid.nodes * f[:, None])))
        d = (self.grid.nodes * w[:, None]).T @ chi
        if np.min(np.linalg.eigvalsh(0.5 * (d + d.T))) < -1e-10:
            raise NumericalFailureError("diffusion matrix is not positive semidefinite", {"D": d.tolist()})
        logger.info("Cell problem solved: residual=%.2e condition=%.2e", residual, condition)
        return CellProblemSolution(chi=chi, D=d, residual=residual, condition=condition)

    # Serialization ---------------------------------------------------------------

    def to_dict(self) -> Dict:
        return {
            "kind": self.kind,
            "beta": self.beta,
            "nu0": self.nu0,
            "M_b3": self.M_b3,
            "unchecked": self.unchecked,
            "grid": self.grid_params | {"r_cut_outer": self.grid.r_cut_outer},
            "grid_size": self.grid.size,
            "truncated_mass": self.truncated_mass,
        }

    @classmethod
    def from_dict(cls, equilibrium: HeavyTailEquilibrium, spec: Dict) -> "CollisionKernel":
        return cls(
            equilibrium,
            kind=spec.get("kind", "bgk"),
            beta=float(spec.get("beta", 0.0)),
            nu0=spec.get("nu0"),
            M_b3=spec.get("M_b3"),
            unchecked=bool(spec.get("unchecked", False)),
            grid=dict(spec.get("grid") or {}),
        )


def random_grid_functions(kernel: CollisionKernel, count: int, seed: int) -> List[np.ndarray]:
    """Random grid functions F (1 + xi) with xi bounded, deterministic in seed"""
    rng = np.random.Generator(np.random.Philox(seed))
    out = []
    for _ in range(count):
        xi = rng.uniform(-1.0, 1.0, kernel.grid.size)
        out.append(kernel.F_grid * (1.0 + xi))
    return out
