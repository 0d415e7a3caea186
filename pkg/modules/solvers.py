"""
Solvers Module
Spectral kinetic solver for the rescaled equation and multiplier solvers for the limit equations
"""
import logging
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import integrate, linalg, special

from config import DEFAULT_THREADS, NORM_GROWTH_TOL, SUBITERATION_MAX, SUBITERATION_TOL
from modules.collision import CollisionKernel
from modules.errors import InstabilityError, InvalidInputError, ResolutionError
from modules.scaling import ScalingRegime
from modules.symbol import KappaValue

logger = logging.getLogger(__name__)

MODE_CHUNK = 16
DEFAULT_STEPS = 2048


def box_modes(box_length: float, n: int, dim: int = 1) -> np.ndarray:
    """Wave vectors of a periodic box in FFT order, shape (n^dim, dim)"""
    if box_length <= 0 or n < 1:
        raise InvalidInputError("box_length and mode count must be positive")
    k1 = 2.0 * math.pi * np.fft.fftfreq(n, d=box_length / n)
    if dim == 1:
        return k1[:, None]
    grids = np.meshgrid(*([k1] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


@dataclass(frozen=True, eq=False)
class DensityField:
    """Fourier amplitudes of a spatial density on a periodic box"""

    modes: np.ndarray
    amplitudes: np.ndarray
    time: float = 0.0
    source: str = "initial"
    box_length: float = 40.0

    @property
    def zero_mode(self) -> int:
        return int(np.argmin(np.linalg.norm(self.modes, axis=1)))

    @property
    def mass(self) -> float:
        return float(self.amplitudes[self.zero_mode].real)

    def evolve(self, multiplier: np.ndarray, time: float, source: str) -> "DensityField":
        return replace(self, amplitudes=self.amplitudes * multiplier, time=time, source=source)


def gaussian_initial_density(box_length: float, n: int, sigma: float, dim: int = 1) -> DensityField:
    """Unit-mass Gaussian of standard deviation sigma centred at the origin"""
    modes = box_modes(box_length, n, dim)
    amps = np.exp(-0.5 * sigma * sigma * np.sum(modes * modes, axis=1)).astype(complex)
    return DensityField(modes=modes, amplitudes=amps, box_length=box_length)


def point_mass_density(box_length: float, n: int, dim: int = 1) -> DensityField:
    modes = box_modes(box_length, n, dim)
    return DensityField(modes=modes, amplitudes=np.ones(len(modes), dtype=complex), box_length=box_length)


def density_profile(field: DensityField) -> Tuple[np.ndarray, np.ndarray]:
    """Real-space density on the centred box grid (N=1)"""
    if field.modes.shape[1] != 1:
        raise InvalidInputError("density_profile is provided for N=1")
    n, length = len(field.amplitudes), field.box_length
    values = np.fft.ifft(field.amplitudes).real * n / length
    x = (np.arange(n) - n // 2) * (length / n)
    return x, np.fft.fftshift(values)


def relative_l2_distance(a: DensityField, b: DensityField) -> float:
    """L2 distance in x relative to b, through Parseval"""
    if a.amplitudes.shape != b.amplitudes.shape:
        raise InvalidInputError("densities live on different mode sets")
    return float(np.linalg.norm(a.amplitudes - b.amplitudes) / np.linalg.norm(b.amplitudes))


def periodic_bin_masses(field: DensityField, edges: Sequence[float]) -> np.ndarray:
    """Mass of the density in each bin [edges[i], edges[i+1]) (N=1)"""
    edges = np.asarray(edges, dtype=float)
    k = field.modes[:, 0]
    amps = field.amplitudes
    lo, hi = edges[:-1], edges[1:]
    zero = k == 0.0
    kk = np.where(zero, 1.0, k)
    kernel = (np.exp(1j * kk[None, :] * hi[:, None]) - np.exp(1j * kk[None, :] * lo[:, None])) / (1j * kk[None, :])
    kernel[:, zero] = (hi - lo)[:, None]
    return (kernel @ amps).real / field.box_length


@dataclass(frozen=True, eq=False)
class PhaseSpaceField:
    """Fourier amplitudes f(t, k, v) on the velocity grid, one row per mode"""

    modes: np.ndarray
    values: np.ndarray
    time: float
    eps: float
    regime: ScalingRegime
    box_length: float = 40.0
    well_prepared: bool = True

    @classmethod
    def from_density(cls, rho0: DensityField, kernel: CollisionKernel, eps: float,
                     regime: ScalingRegime) -> "PhaseSpaceField":
        """Well-prepared datum rho0(x) F(v)"""
        values = rho0.amplitudes[:, None] * kernel.F_grid[None, :]
        return cls(modes=rho0.modes, values=values.astype(complex), time=rho0.time, eps=eps,
                   regime=regime, box_length=rho0.box_length)


@dataclass(frozen=True, eq=False)
class KineticTrajectory:
    """Sampled kinetic solution with per-step diagnostics"""

    snapshots: List[PhaseSpaceField]
    dt: float
    n_steps: int
    norms: np.ndarray
    masses: np.ndarray
    dissipation: np.ndarray

    @property
    def final(self) -> PhaseSpaceField:
        return self.snapshots[-1]

    @property
    def fluctuation_integral(self) -> float:
        """Time integral of the L2(nu F^-1) norm of g, squared, summed over modes"""
        return float(integrate.trapezoid(self.dissipation, dx=self.dt))

    def summary(self) -> Dict:
        return {
            "dt": self.dt,
            "n_steps": self.n_steps,
            "norm_initial": float(self.norms[0]),
            "norm_final": float(self.norms[-1]),
            "mass_initial": float(self.masses[0]),
            "mass_final": float(self.masses[-1]),
            "fluctuation_integral": self.fluctuation_integral,
        }


class KineticSolver:
    """Lie splitting per Fourier mode: exact transport phase, then implicit collision"""

    def __init__(self, kernel: CollisionKernel, regime: ScalingRegime, threads: Optional[int] = None):
        self.kernel = kernel
        self.regime = regime
        self.threads = threads or DEFAULT_THREADS
        self._lu_cache: Dict[float, Tuple] = {}
        self._lock = threading.Lock()
        self._fallback_logged = False

    def step_parameters(self, eps: float, T: float, dt: Optional[float] = None,
                        dt_over_theta: Optional[float] = None) -> Tuple[float, int]:
        """Step size and count; dt_over_theta takes precedence over dt"""
        if T <= 0:
            raise InvalidInputError("T must be positive")
        if dt_over_theta is not None:
            dt = dt_over_theta * self.regime.theta(eps)
        dt = dt or T / DEFAULT_STEPS
        n_steps = max(1, int(round(T / dt)))
        return T / n_steps, n_steps

    # Collision step ------------------------------------------------------------------

    def _lu(self, h: float):
        with self._lock:
            if h not in self._lu_cache:
                k = self.kernel
                system = np.diag(1.0 + h * k.nu_grid) - h * k.gain(np.eye(k.grid.size)).T
                self._lu_cache[h] = linalg.lu_factor(system)
            return self._lu_cache[h]

    def _collide(self, f: np.ndarray, h: float) -> np.ndarray:
        """Backward Euler for theta df/dt = L(f) over one step, h = dt / theta"""
        k = self.kernel
        if k.kind == "bgk":
            rho = f @ k.grid.weights
            return (f + h * rho[:, None] * k.F_grid[None, :]) / (1.0 + h)
        denom = 1.0 + h * k.nu_grid
        g = f / denom
        for _ in range(SUBITERATION_MAX):
            g_new = (f + h * k.gain(g)) / denom
            change = np.max(np.abs(g_new - g))
            g = g_new
            if change <= SUBITERATION_TOL * max(np.max(np.abs(g)), 1e-300):
                return g
        if not self._fallback_logged:
            logger.warning("Collision sub-iteration did not contract within %d steps, using LU", SUBITERATION_MAX)
            self._fallback_logged = True
        lu = self._lu(h)
        return linalg.lu_solve(lu, f.real.T).T + 1j * linalg.lu_solve(lu, f.imag.T).T

    def _run_chunk(self, values: np.ndarray, modes: np.ndarray, speed: float, h: float, dt: float,
                   n_steps: int, sample_steps: Sequence[int]):
        k = self.kernel
        w, f_eq = k.grid.weights, k.F_grid
        w_norm = w / f_eq
        w_diss = w * k.nu_grid / f_eq
        zero = np.linalg.norm(modes, axis=1) == 0.0
        phase = np.exp(-1j * speed * dt * (modes @ k.grid.nodes.T))

        def diagnostics(f):
            rho = f @ w
            g = f - rho[:, None] * f_eq[None, :]
            return (float(np.sum((np.abs(f) ** 2) @ w_norm)), float(np.sum(rho[zero].real)),
                    float(np.sum((np.abs(g) ** 2) @ w_diss)))

        norms, masses, diss = np.empty(n_steps + 1), np.empty(n_steps + 1), np.empty(n_steps + 1)
        f = values.copy()
        norms[0], masses[0], diss[0] = diagnostics(f)
        wanted = set(sample_steps)
        samples = {0: f.copy()} if 0 in wanted else {}
        for step in range(1, n_steps + 1):
            f = self._collide(phase * f, h)
            norms[step], masses[step], diss[step] = diagnostics(f)
            if norms[step] > norms[step - 1] * (1.0 + NORM_GROWTH_TOL):
                raise InstabilityError("weighted norm grew during a step",
                                       {"step": step, "before": norms[step - 1], "after": norms[step]})
            if step in wanted:
                samples[step] = f.copy()
        return samples, norms, masses, diss

    # Operations -------------------------------------------------------------------------

    def solve_kinetic(self, f0: PhaseSpaceField, T: float, dt: Optional[float] = None,
                      dt_over_theta: Optional[float] = None,
                      sample_times: Optional[Sequence[float]] = None) -> KineticTrajectory:
        """
        Advance every mode of f0 to time T

        Args:
            f0: initial field on the kernel's velocity grid
            T: horizon
            dt: time step (default T/2048)
            dt_over_theta: step as a multiple of theta(eps), overriding dt
            sample_times: extra times to snapshot; T is always included

        Returns:
            KineticTrajectory with snapshots in time order
        """
        if f0.values.shape[1] != self.kernel.grid.size:
            raise InvalidInputError("initial field does not live on the kernel's velocity grid")
        eps = f0.eps
        theta = self.regime.theta(eps)
        dt, n_steps = self.step_parameters(eps, T, dt, dt_over_theta)
        h = dt / theta
        speed = eps / theta
        steps = sorted({min(n_steps, max(0, int(round(t / dt)))) for t in (sample_times or [])} | {n_steps})

        index = np.arange(len(f0.modes))
        chunks = [index[i:i + MODE_CHUNK] for i in range(0, index.size, MODE_CHUNK)]
        logger.info("Kinetic solve: eps=%.3g theta=%.3e dt=%.3e steps=%d modes=%d h=%.3e",
                    eps, theta, dt, n_steps, index.size, h)

        def run(idx):
            return self._run_chunk(f0.values[idx], f0.modes[idx], speed, h, dt, n_steps, steps)

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(run, chunks))

        norms = np.zeros(n_steps + 1)
        masses = np.zeros(n_steps + 1)
        diss = np.zeros(n_steps + 1)
        for _, n_c, m_c, d_c in results:
            norms += n_c
            masses += m_c
            diss += d_c
        snapshots = []
        for step in steps:
            values = np.concatenate([r[0][step] for r in results], axis=0)
            snapshots.append(replace(f0, values=values, time=f0.time + step * dt))
        logger.debug("Kinetic norms: initial %.6e final %.6e", norms[0], norms[-1])
        return KineticTrajectory(snapshots=snapshots, dt=dt, n_steps=n_steps, norms=norms,
                                 masses=masses, dissipation=diss)

    def decompose(self, field: PhaseSpaceField) -> Tuple[DensityField, np.ndarray]:
        """
        Split f into rho F + g

        Returns:
            (DensityField rho = integral of f dv, fluctuation g with zero velocity integral)
        """
        k = self.kernel
        rho = field.values @ k.grid.weights
        g = field.values - rho[:, None] * k.F_grid[None, :]
        density = DensityField(modes=field.modes, amplitudes=rho, time=field.time, source="kinetic",
                               box_length=field.box_length)
        return density, g

    def time_order_check(self, f0: PhaseSpaceField, T: float, dt: float) -> Dict:
        """Richardson estimate of the splitting order from dt, dt/2, dt/4"""
        finals = [self.decompose(self.solve_kinetic(f0, T, dt=d).final)[0] for d in (dt, dt / 2.0, dt / 4.0)]
        e1 = np.linalg.norm(finals[0].amplitudes - finals[1].amplitudes)
        e2 = np.linalg.norm(finals[1].amplitudes - finals[2].amplitudes)
        slope = float(math.log2(e1 / e2))
        return {"errors": [float(e1), float(e2)], "slope": slope, "pass": bool(abs(slope - 1.0) <= 0.1)}


class DiffusionSolver:
    """Exact Fourier multipliers of the limit equations"""

    @staticmethod
    def _kappa(kappa: Union[float, KappaValue]) -> float:
        value = kappa.kappa if isinstance(kappa, KappaValue) else float(kappa)
        if value <= 0:
            raise InvalidInputError("kappa must be positive")
        return value

    def solve_fractional_heat(self, kappa: Union[float, KappaValue], gamma: float, rho0: DensityField,
                              T: float) -> DensityField:
        """
        Solve d_t rho + kappa (-Laplacian)^{gamma/2} rho = 0

        Returns:
            DensityField with amplitudes exp(-kappa |k|^gamma T) rho0
        """
        if not 0.0 < gamma <= 2.0:
            raise InvalidInputError("gamma must lie in (0, 2]")
        kap = self._kappa(kappa)
        kmag = np.linalg.norm(rho0.modes, axis=1)
        return rho0.evolve(np.exp(-kap * kmag ** gamma * T), rho0.time + T, "fractional_heat")

    def solve_classical_heat(self, D, rho0: DensityField, T: float) -> DensityField:
        """
        Solve d_t rho - div(D grad rho) = 0

        Returns:
            DensityField with amplitudes exp(-k.Dk T) rho0
        """
        d = np.atleast_2d(np.asarray(D, dtype=float))
        dim = rho0.modes.shape[1]
        if d.shape != (dim, dim):
            raise InvalidInputError(f"D must be {dim}x{dim}")
        if np.max(np.abs(d - d.T)) > 1e-12 * max(1.0, np.max(np.abs(d))):
            raise InvalidInputError("D must be symmetric")
        if np.min(np.linalg.eigvalsh(d)) < -1e-12:
            raise InvalidInputError("D must be positive semidefinite")
        quad_form = np.einsum("mi,ij,mj->m", rho0.modes, d, rho0.modes)
        return rho0.evolve(np.exp(-quad_form * T), rho0.time + T, "classical_heat")

    def solve_limit(self, kappa: KappaValue, rho0: DensityField, T: float) -> DensityField:
        """Limit equation of the regime carried by kappa"""
        if kappa.D is not None:
            return self.solve_classical_heat(kappa.D, rho0, T)
        return self.solve_fractional_heat(kappa, kappa.regime.gamma, rho0, T)

    def stable_profile(self, kappa: Union[float, KappaValue], gamma: float, t: float,
                       x_grid: Sequence[float]) -> np.ndarray:
        """
        Fundamental solution of the fractional heat equation, N=1 only

        The profile is the cosine inversion of exp(-kappa |k|^gamma t), whose
        value 1 at k=0 fixes unit mass; no renormalization is applied.

        Args:
            kappa: diffusion coefficient
            gamma: order in (0, 2]
            t: time > 0
            x_grid: evaluation points

        Returns:
            Density values at x_grid

        Raises:
            ResolutionError: when QUADPACK does not converge at a point or the profile goes negative
        """
        if not 0.0 < gamma <= 2.0 or t <= 0:
            raise InvalidInputError("stable_profile needs gamma in (0, 2] and t > 0")
        scale = self._kappa(kappa) * t

        def transform(k):
            return math.exp(-scale * k ** gamma)

        out = np.empty(len(x_grid))
        for i, x in enumerate(np.asarray(x_grid, dtype=float)):
            if x == 0.0:
                result = integrate.quad(transform, 0.0, np.inf, limit=200, full_output=1)
            else:
                result = integrate.quad(transform, 0.0, np.inf, weight="cos", wvar=abs(x), full_output=1)
            # quad appends a message only when QUADPACK reports ier != 0
            if len(result) > 3:
                raise ResolutionError("stable profile quadrature did not converge",
                                      {"x": float(x), "gamma": gamma, "message": result[3]})
            out[i] = result[0] / math.pi
        if np.min(out) < -1e-6:
            raise ResolutionError("stable profile went negative", {"min": float(np.min(out))})
        return out


def gaussian_profile(x, variance: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.exp(-x * x / (2.0 * variance)) / math.sqrt(2.0 * math.pi * variance)


def cauchy_profile(x, scale: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return scale / (math.pi * (scale * scale + x * x))


def stable_tail_constant(kappa: float, gamma: float, t: float) -> float:
    """Limit of p(x) |x|^{1+gamma} for the symmetric stable law exp(-kappa t |k|^gamma)"""
    return special.gamma(1.0 + gamma) * math.sin(math.pi * gamma / 2.0) / math.pi * kappa * t
