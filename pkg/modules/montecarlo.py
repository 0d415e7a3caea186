"""
Monte Carlo Module
Velocity-jump process behind the rescaled kinetic equation and its ensemble statistics

A particle at velocity v flies at (eps / theta) v, jumps at rate nu(v) / theta
and lands at v' drawn from sigma(v', v) / nu(v) = b(v, v') F(v') / nu(v).
For bgk the landing law is F itself and the rate is 1 / theta.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from config import DEFAULT_THREADS, QUANTILE_MAX_REL_SE, REJECTION_MIN_ACCEPTANCE
from modules.collision import CollisionKernel
from modules.equilibria import HeavyTailEquilibrium, random_directions
from modules.errors import (
    InvalidInputError,
    KernelUnsamplableError,
    StatisticsError,
)
from modules.scaling import ScalingRegime
from modules.solvers import DensityField, periodic_bin_masses

logger = logging.getLogger(__name__)

JACKKNIFE_GROUPS = 20
MIN_PROPOSALS = 1000


@dataclass(frozen=True, eq=False)
class JumpProcessParams:
    """Parameters of one simulation"""

    kernel: CollisionKernel
    regime: ScalingRegime
    eps: float
    horizon: float
    n_particles: int
    seed: int
    snapshots: Tuple[float, ...] = ()
    block_size: int = 65536
    no_jumps: bool = False

    def __post_init__(self):
        if self.horizon <= 0 or self.n_particles < 1 or self.block_size < 1:
            raise InvalidInputError("horizon, n_particles and block_size must be positive")
        if any(not 0.0 <= s <= self.horizon for s in self.snapshots):
            raise InvalidInputError("snapshot times must lie in [0, horizon]")
        self.regime.theta(self.eps)

    @property
    def theta(self) -> float:
        return self.regime.theta(self.eps)

    @property
    def speed(self) -> float:
        return self.eps / self.theta

    @property
    def times(self) -> List[float]:
        return sorted(set(float(s) for s in self.snapshots) | {float(self.horizon)})


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """Positions and velocities of all particles at one time"""

    positions: np.ndarray
    velocities: np.ndarray
    time: float
    seed: int
    block_size: int
    jumps: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return self.positions.shape[0]


@dataclass(frozen=True, eq=False)
class EnsembleHistory:
    """Ensembles at every snapshot time, the horizon last"""

    ensembles: List[ParticleEnsemble]
    acceptance: float

    @property
    def final(self) -> ParticleEnsemble:
        return self.ensembles[-1]

    def at(self, time: float) -> ParticleEnsemble:
        for ensemble in self.ensembles:
            if math.isclose(ensemble.time, time, rel_tol=1e-12, abs_tol=1e-15):
                return ensemble
        raise InvalidInputError(f"no snapshot at t={time}")


class PostCollisionSampler:
    """Draws v' from b(v, v') F(v') / nu(v), by rejection where the law depends on v"""

    def __init__(self, kernel: CollisionKernel):
        self.kernel = kernel
        eq = kernel.equilibrium
        self.equilibrium = eq
        beta = kernel.beta
        self.mode = "equilibrium"
        if kernel.kind == "separable":
            self.mode = "tilted"
        elif kernel.kind in ("shifted", "physical") and beta > 0:
            self.mode = "mixture"
        elif kernel.kind == "shifted" and beta < 0:
            self.mode = "damped"
        elif kernel.kind == "physical" and beta < 0:
            self.mode = "ball"
        if self.mode in ("tilted", "mixture"):
            self._tilted = eq.tilted_sampler(beta)
            self.m_beta = eq.expectation(lambda r: (1.0 + r * r) ** (beta / 2.0))
            self.c_beta = max(1.0, 2.0 ** (beta - 1.0))
        if self.mode == "ball":
            self.ball_bound = max(2.0, 2.0 * eq.max_density() * eq.sphere / (eq.dim + beta))

    def _draw_tilted(self, rng: np.random.Generator, n: int) -> np.ndarray:
        radii = self._tilted.inverse(rng.random(n))
        return radii[:, None] * random_directions(rng, n, self.equilibrium.dim)

    def _propose(self, rng: np.random.Generator, v: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Candidates and their acceptance probabilities"""
        eq, kernel, beta = self.equilibrium, self.kernel, self.kernel.beta
        n = v.shape[0]
        if self.mode == "damped":
            cand = eq.draw(rng, n)
            return cand, kernel.b(v, cand).reshape(n)
        if self.mode == "mixture":
            tv = (1.0 + np.sum(v * v, axis=1)) ** (beta / 2.0)
            from_f = rng.random(n) < tv / (tv + self.m_beta)
            cand = np.empty_like(v)
            cand[from_f] = eq.draw(rng, int(from_f.sum()))
            cand[~from_f] = self._draw_tilted(rng, int((~from_f).sum()))
            tc = (1.0 + np.sum(cand * cand, axis=1)) ** (beta / 2.0)
            return cand, kernel.b(v, cand).reshape(n) / (self.c_beta * (tv + tc))
        # ball: half F, half |d|^beta on the unit ball around v
        from_f = rng.random(n) < 0.5
        cand = np.empty_like(v)
        cand[from_f] = eq.draw(rng, int(from_f.sum()))
        m = int((~from_f).sum())
        rho = rng.random(m) ** (1.0 / (eq.dim + beta))
        cand[~from_f] = v[~from_f] + rho[:, None] * random_directions(rng, m, eq.dim)
        d = np.linalg.norm(cand - v, axis=1)
        f_cand = eq.radial_density(np.linalg.norm(cand, axis=1))
        with np.errstate(divide="ignore"):
            dist = d ** beta
            ball = np.where(d <= 1.0, (eq.dim + beta) / eq.sphere * dist, 0.0)
        proposal = 0.5 * f_cand + 0.5 * ball
        return cand, dist * f_cand / (self.ball_bound * proposal)

    def draw(self, rng: np.random.Generator, v: np.ndarray) -> Tuple[np.ndarray, int, int]:
        """
        Post-collision velocities for the rows of v

        Returns:
            (new velocities, proposals made, proposals accepted)
        """
        n = v.shape[0]
        if self.mode == "equilibrium":
            return self.equilibrium.draw(rng, n), n, n
        if self.mode == "tilted":
            return self._draw_tilted(rng, n), n, n
        out = np.empty_like(v)
        pending = np.arange(n)
        proposed = accepted = 0
        while pending.size:
            cand, prob = self._propose(rng, v[pending])
            ok = rng.random(pending.size) < prob
            out[pending[ok]] = cand[ok]
            proposed += pending.size
            accepted += int(ok.sum())
            pending = pending[~ok]
            if proposed >= MIN_PROPOSALS and accepted < REJECTION_MIN_ACCEPTANCE * proposed:
                raise KernelUnsamplableError(
                    f"post-collision acceptance {accepted / proposed:.2e} below {REJECTION_MIN_ACCEPTANCE:g}")
        return out, proposed, accepted


class JumpProcessSimulator:
    """Exact-event simulation of the velocity-jump process in particle blocks"""

    def __init__(self, params: JumpProcessParams, threads: Optional[int] = None):
        self.params = params
        self.threads = threads or DEFAULT_THREADS
        self.sampler = PostCollisionSampler(params.kernel)

    def _simulate_block(self, block: int, count: int):
        p = self.params
        kernel, eq = p.kernel, p.kernel.equilibrium
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([p.seed, block])))
        times = p.times
        horizon = times[-1]
        theta, speed = p.theta, p.speed

        v = eq.draw(rng, count)
        x = np.zeros_like(v)
        t = np.zeros(count)
        jumps = np.zeros(count, dtype=np.int64)
        pos = np.empty((len(times), count, eq.dim))
        vel = np.empty_like(pos)
        jump_snap = np.zeros((len(times), count), dtype=np.int64)
        proposed = accepted = 0

        active = np.arange(count)
        while active.size:
            va, ta = v[active], t[active]
            if p.no_jumps:
                tau = np.full(active.size, np.inf)
            else:
                rate = kernel.nu_radial(np.linalg.norm(va, axis=1)) / theta
                tau = rng.exponential(1.0 / rate)
            nxt = ta + tau
            for j, s in enumerate(times):
                hit = (ta <= s) & (s < nxt)
                if hit.any():
                    idx = active[hit]
                    pos[j, idx] = x[idx] + speed * va[hit] * (s - ta[hit])[:, None]
                    vel[j, idx] = va[hit]
                    jump_snap[j, idx] = jumps[idx]
            go = nxt < horizon
            idx = active[go]
            x[idx] += speed * v[idx] * tau[go][:, None]
            t[idx] = nxt[go]
            if idx.size:
                new_v, prop, acc = self.sampler.draw(rng, v[idx])
                v[idx] = new_v
                proposed += prop
                accepted += acc
                jumps[idx] += 1
            active = idx
        return pos, vel, jump_snap, proposed, accepted

    def simulate(self) -> EnsembleHistory:
        """
        Run all particle blocks

        Returns:
            EnsembleHistory with one ensemble per snapshot time, bit-reproducible for any thread count
        """
        p = self.params
        counts = [min(p.block_size, p.n_particles - start) for start in range(0, p.n_particles, p.block_size)]
        logger.info("Monte Carlo: %d particles in %d blocks, eps=%.3g theta=%.3e, sampler=%s",
                    p.n_particles, len(counts), p.eps, p.theta, self.sampler.mode)
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            results = list(pool.map(lambda item: self._simulate_block(*item), enumerate(counts)))
        proposed = sum(r[3] for r in results)
        accepted = sum(r[4] for r in results)
        ensembles = []
        for j, time in enumerate(p.times):
            ensembles.append(ParticleEnsemble(
                positions=np.concatenate([r[0][j] for r in results], axis=0),
                velocities=np.concatenate([r[1][j] for r in results], axis=0),
                time=time, seed=p.seed, block_size=p.block_size,
                jumps=np.concatenate([r[2][j] for r in results]),
            ))
        return EnsembleHistory(ensembles=ensembles, acceptance=accepted / proposed if proposed else 1.0)


def simulate(params: JumpProcessParams, threads: Optional[int] = None) -> EnsembleHistory:
    return JumpProcessSimulator(params, threads).simulate()


# Statistics --------------------------------------------------------------------------


def _jackknife_se(estimates: np.ndarray) -> float:
    g = estimates.size
    return float(math.sqrt((g - 1) / g * np.sum((estimates - estimates.mean()) ** 2)))


def _group_bounds(n: int, groups: int) -> np.ndarray:
    if n < 2 * groups:
        raise StatisticsError(f"{n} particles are too few for {groups} jackknife groups")
    return np.linspace(0, n, groups + 1).astype(int)


def empirical_cf(ensemble: ParticleEnsemble, k_list: Sequence, groups: int = JACKKNIFE_GROUPS) -> List[Dict]:
    """
    Empirical characteristic function (1/n) sum exp(-i k.x_j)

    Args:
        ensemble: particles at a common time
        k_list: wave numbers (N=1) or wave vectors
        groups: jackknife groups

    Returns:
        One dict per k with the value and jackknife standard errors of its real part, imaginary part and modulus
    """
    x = ensemble.positions
    n = x.shape[0]
    bounds = _group_bounds(n, groups)
    out = []
    for k in k_list:
        kv = np.atleast_1d(np.asarray(k, dtype=float))
        phase = x @ kv
        c, s = np.cos(phase), -np.sin(phase)
        c_groups = np.add.reduceat(c, bounds[:-1])
        s_groups = np.add.reduceat(s, bounds[:-1])
        sizes = np.diff(bounds)
        c_loo = (c.sum() - c_groups) / (n - sizes)
        s_loo = (s.sum() - s_groups) / (n - sizes)
        value = complex(c.mean(), s.mean())
        out.append({
            "k": kv.tolist() if kv.size > 1 else float(kv[0]),
            "value": value,
            "re": value.real,
            "im": value.imag,
            "abs": abs(value),
            "se_re": _jackknife_se(c_loo),
            "se_im": _jackknife_se(s_loo),
            "se_abs": _jackknife_se(np.hypot(c_loo, s_loo)),
        })
    return out


def _quantile_with_se(values: np.ndarray, q: float, groups: int) -> Tuple[float, float]:
    bounds = _group_bounds(values.size, groups)
    full = float(np.quantile(values, q))
    loo = np.array([np.quantile(np.concatenate([values[:bounds[g]], values[bounds[g + 1]:]]), q)
                    for g in range(groups)])
    return full, _jackknife_se(loo)


def coordinate_quantile(ensemble: ParticleEnsemble, q: float, coord: int = 0,
                        groups: int = JACKKNIFE_GROUPS) -> Dict:
    """q-quantile of one position coordinate with a jackknife standard error"""
    if not 0.0 < q < 1.0:
        raise InvalidInputError("q must lie in (0, 1)")
    value, se = _quantile_with_se(ensemble.positions[:, coord], q, groups)
    return {"quantile": q, "value": value, "se": se}


def displacement_scaling(ensembles: Sequence[ParticleEnsemble], q: float = 0.5, gamma: Optional[float] = None,
                         groups: int = JACKKNIFE_GROUPS, tolerance: float = 0.05) -> Dict:
    """
    Fit log(q-quantile of |x|) against log t

    Args:
        ensembles: snapshots at four or more positive times
        q: quantile level
        gamma: order of the limit law; the expected slope is 1/gamma
        tolerance: allowed slope deviation

    Returns:
        Dict with times, quantiles, relative standard errors, slope and pass flag
    """
    snaps = [e for e in ensembles if e.time > 0]
    if len(snaps) < 4:
        raise InvalidInputError("displacement_scaling needs at least four positive snapshot times")
    times, values, rel_se = [], [], []
    for e in snaps:
        value, se = _quantile_with_se(np.linalg.norm(e.positions, axis=1), q, groups)
        if value <= 0 or se / value > QUANTILE_MAX_REL_SE:
            raise StatisticsError(f"quantile at t={e.time:g} has relative SE {se / max(value, 1e-300):.3f}")
        times.append(e.time)
        values.append(value)
        rel_se.append(se / value)
    slope, intercept = np.polyfit(np.log(times), np.log(values), 1)
    report = {"times": times, "quantiles": values, "rel_se": rel_se, "slope": float(slope),
              "intercept": float(intercept), "expected": None, "pass": None}
    if gamma is not None:
        report["expected"] = 1.0 / gamma
        report["pass"] = bool(abs(slope - 1.0 / gamma) <= tolerance)
    return report


def velocity_ks_statistic(ensemble: ParticleEnsemble, equilibrium: HeavyTailEquilibrium) -> float:
    """Kolmogorov-Smirnov distance between the speeds and the radial law of F"""
    radii = np.linalg.norm(ensemble.velocities, axis=1)
    return float(stats.kstest(radii, equilibrium.radial_cdf).statistic)


def binned_chi2(ensemble: ParticleEnsemble, density: DensityField, edges: Sequence[float],
                min_expected: float = 5.0) -> Dict:
    """Chi-square of the periodized particle histogram against a Fourier density (N=1)"""
    length = density.box_length
    x = (ensemble.positions[:, 0] + 0.5 * length) % length - 0.5 * length
    counts, _ = np.histogram(x, bins=np.asarray(edges, dtype=float))
    expected = ensemble.size * periodic_bin_masses(density, edges)
    keep = expected >= min_expected
    chi2 = float(np.sum((counts[keep] - expected[keep]) ** 2 / expected[keep]))
    dof = int(keep.sum())
    return {"chi2": chi2, "dof": dof, "reduced": chi2 / dof if dof else float("nan"),
            "pass": bool(dof and chi2 <= dof + 5.0 * math.sqrt(2.0 * dof))}


def telegraph_msd_over_time(diffusion: float, theta: float, T: float) -> float:
    """MSD(T)/T of the one-dimensional bgk walk started from equilibrium velocities"""
    return 2.0 * diffusion * (1.0 - theta / T * (1.0 - math.exp(-T / theta)))
