"""
Sweep Runner Module
Cross-product sweeps over (eps, k, p) and the single-run pipelines they are made of
"""
import itertools
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional

import numpy as np

from config import DEFAULT_THREADS
from modules.errors import FracDiffError, InvalidInputError
from modules.experiment_config import ExperimentConfig
from modules.montecarlo import JumpProcessParams, empirical_cf, simulate
from modules.report_generator import ReportGenerator, ResultRecord
from modules.solvers import (
    DiffusionSolver,
    KineticSolver,
    PhaseSpaceField,
    gaussian_initial_density,
    relative_l2_distance,
)
from modules.symbol import SymbolAnalyzer

logger = logging.getLogger(__name__)

OPERATIONS = ("symbol", "remainder", "kinetic", "mc")
DEFAULT_AXIS = {"k": 1.0, "p": 1.0}


class ExperimentPipeline:
    """Equilibrium, kernel, regime and analyzer built once from a config"""

    def __init__(self, config: ExperimentConfig, threads: Optional[int] = None):
        self.config = config
        self.threads = threads or DEFAULT_THREADS
        self.regime = config.validate()
        self.equilibrium = config.build_equilibrium()
        self.kernel = config.build_kernel(self.equilibrium)
        self.analyzer = SymbolAnalyzer(self.kernel, self.regime)
        self.diffusion = DiffusionSolver()

    def kappa(self):
        return self.analyzer.kappa()

    def initial_density(self):
        s = self.config.solver
        return gaussian_initial_density(float(s["box_length"]), int(s["modes"]), float(s["sigma0"]),
                                       self.equilibrium.dim)

    def kinetic_comparison(self, eps: float, sample_times: Optional[List[float]] = None) -> Dict:
        """
        Solve the kinetic equation at eps and compare its density with the limit equation

        Returns:
            Dict with the kinetic and limit densities, the relative L2 distance and the trajectory summary
        """
        s = self.config.solver
        T = float(s["T"])
        rho0 = self.initial_density()
        solver = KineticSolver(self.kernel, self.regime, self.threads)
        f0 = PhaseSpaceField.from_density(rho0, self.kernel, eps, self.regime)
        trajectory = solver.solve_kinetic(f0, T, dt=s.get("dt"), dt_over_theta=s.get("dt_over_theta"),
                                          sample_times=sample_times)
        rho_kinetic, _ = solver.decompose(trajectory.final)
        rho_limit = self.diffusion.solve_limit(self.kappa(), rho0, T)
        return {
            "eps": eps,
            "theta": self.regime.theta(eps),
            "kinetic": rho_kinetic,
            "limit": rho_limit,
            "trajectory": trajectory,
            "densities": [solver.decompose(snap)[0] for snap in trajectory.snapshots],
            "relative_l2": relative_l2_distance(rho_kinetic, rho_limit),
            "summary": trajectory.summary(),
        }

    def mc_params(self, eps: Optional[float] = None, n_particles: Optional[int] = None,
                  seed: Optional[int] = None, snapshots: Optional[List[float]] = None) -> JumpProcessParams:
        m = self.config.mc
        return JumpProcessParams(
            kernel=self.kernel, regime=self.regime,
            eps=float(eps if eps is not None else m["eps"]),
            horizon=float(m["horizon"]),
            n_particles=int(n_particles or m["particles"]),
            seed=int(seed if seed is not None else m["seed"]),
            snapshots=tuple(float(t) for t in (snapshots if snapshots is not None else m.get("snapshots") or [])),
            block_size=int(m.get("block_size", 65536)),
        )

    def limit_cf(self, k: float, t: float) -> float:
        """Characteristic function of the limit law started from a point mass"""
        return math.exp(self.limit_exponent(k) * t)

    def limit_exponent(self, k) -> float:
        return self.analyzer.limit(0.0, k)

    # Cells ------------------------------------------------------------------------------

    def run_cell(self, operation: str, eps: float, k: float, p: float) -> Dict:
        """One sweep cell; returns value, limit and absolute error"""
        if operation == "symbol":
            sv = self.analyzer.a_eps(p, k, eps)
            return {"value": sv.a_eps.real, "limit": sv.limit, "abs_err": sv.abs_err, "im": sv.a_eps.imag,
                    "d_eps": sv.d_eps, "c_remainder": sv.c_remainder}
        if operation == "remainder":
            value = self.analyzer.c_remainder(p, k, eps)
            return {"value": value, "limit": 0.0, "abs_err": value}
        if operation == "kinetic":
            result = self.kinetic_comparison(eps)
            return {"value": result["relative_l2"], "limit": 0.0, "abs_err": result["relative_l2"],
                    "mass_final": result["summary"]["mass_final"]}
        if operation == "mc":
            history = simulate(self.mc_params(eps=eps), self.threads)
            cf = empirical_cf(history.final, [k])[0]
            limit = self.limit_cf(k, history.final.time)
            return {"value": cf["abs"], "limit": limit, "abs_err": abs(cf["abs"] - limit), "se_abs": cf["se_abs"]}
        raise InvalidInputError(f"Unknown sweep operation: {operation}")


class SweepRunner:
    """Execute the cross-product of the sweep axes, one record per cell"""

    def __init__(self, reporter: Optional[ReportGenerator] = None, threads: Optional[int] = None):
        self.reporter = reporter
        self.threads = threads or DEFAULT_THREADS

    @staticmethod
    def cells(config: ExperimentConfig) -> List[Dict]:
        axes = config.sweep_axes()
        eps_axis = axes["eps"] or [float(config.solver["eps"])]
        k_axis = axes["k"] or [DEFAULT_AXIS["k"]]
        p_axis = axes["p"] or [DEFAULT_AXIS["p"]]
        return [{"cell": i, "eps": float(e), "k": float(k), "p": float(p)}
                for i, (e, k, p) in enumerate(itertools.product(eps_axis, k_axis, p_axis))]

    def run_sweep(self, config: ExperimentConfig) -> List[ResultRecord]:
        """
        Run every cell of the sweep

        Args:
            config: validated experiment config

        Returns:
            ResultRecords in cell order; failed cells carry status "failed" and the error text
        """
        operation = config.sweep.get("operation", "symbol")
        if operation not in OPERATIONS:
            raise InvalidInputError(f"Unknown sweep operation: {operation}")
        pipeline = ExperimentPipeline(config, self.threads)
        if operation in ("symbol", "kinetic", "mc"):
            pipeline.kappa()
        config_hash = config.config_hash()
        cells = self.cells(config)
        logger.info("Sweep %s: %d cells (%s)", operation, len(cells), config_hash[:12])

        def run(cell: Dict) -> ResultRecord:
            start = time.perf_counter()
            inputs = {"eps": cell["eps"], "k": cell["k"], "p": cell["p"]}
            try:
                outputs = pipeline.run_cell(operation, cell["eps"], cell["k"], cell["p"])
                status, error = "ok", None
            except FracDiffError as e:
                logger.warning("Sweep cell %d failed: %s", cell["cell"], e)
                outputs, status, error = {}, "failed", f"{type(e).__name__}: {e}"
            return ResultRecord(config_hash=config_hash, module="sweep", operation=operation,
                                inputs=inputs | {"cell": cell["cell"]}, outputs=outputs, status=status,
                                error=error, wall_time=time.perf_counter() - start)

        # kinetic and mc cells parallelize internally
        workers = 1 if operation in ("kinetic", "mc") else self.threads
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(run, cells))

        if self.reporter is not None:
            self.write(config, records)
        return records

    def write(self, config: ExperimentConfig, records: List[ResultRecord]) -> Dict[str, str]:
        config_hash = config.config_hash()
        rows = []
        for r in records:
            rows.append({
                "cell": r.inputs["cell"], "operation": r.operation, "eps": r.inputs["eps"],
                "k": r.inputs["k"], "p": r.inputs["p"], "status": r.status,
                "value": r.outputs.get("value", np.nan), "limit": r.outputs.get("limit", np.nan),
                "abs_err": r.outputs.get("abs_err", np.nan), "error": r.error or "",
            })
        paths = {"csv": self.reporter.export_to_csv(rows, "sweep",
                                                    self.reporter.stamped_name("sweep", config_hash, "csv"))}
        summary = {
            "config": config.to_dict(),
            "config_hash": config_hash,
            "cells": [{k: v for k, v in r.to_dict().items() if k != "wall_time"} for r in records],
            "failed": sum(r.failed for r in records),
        }
        paths["json"] = self.reporter.export_to_json(summary, self.reporter.stamped_name("sweep", config_hash, "json"))
        self.reporter.append_records(records)
        return paths


def monotone_errors_per_k(records: List[ResultRecord]) -> Dict[float, bool]:
    """For each k: is abs_err non-increasing as eps decreases"""
    out = {}
    by_k: Dict[float, List] = {}
    for r in records:
        if not r.failed:
            by_k.setdefault(r.inputs["k"], []).append((r.inputs["eps"], r.outputs["abs_err"]))
    for k, pairs in by_k.items():
        errs = [e for _, e in sorted(pairs, reverse=True)]
        out[k] = all(b <= a for a, b in zip(errs[:-1], errs[1:]))
    return out
