"""
Fractional Diffusion Limits of Kinetic Equations
Command-line entry point
"""
import argparse
import logging
import sys
import time
from typing import Dict, List, Optional

import numpy as np

import config
from modules.errors import ConfigError, FracDiffError, InvalidInputError, UnsupportedRegimeError

logger = logging.getLogger("fracdiff")

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_INVALID = 2


def parse_floats(text: Optional[str]) -> List[float]:
    if not text:
        return []
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise InvalidInputError(f"expected comma-separated numbers, got {text!r}") from e


def parse_ell(text: str) -> Dict:
    """'constant', 'constant:2', 'power_log:1.5', 'iterated_log'"""
    kind, _, param = text.partition(":")
    spec = {"kind": kind}
    if param:
        spec["param"] = float(param)
    return spec


def load_config(args):
    from modules.experiment_config import ExperimentConfig

    cfg = ExperimentConfig.load(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_overrides("mc", seed=args.seed)
    return cfg


def make_reporter(args, cfg=None):
    from modules.report_generator import ReportGenerator

    directory = args.out or (cfg.output.get("directory") if cfg is not None else None)
    return ReportGenerator(directory)


def record(reporter, cfg, module: str, operation: str, inputs: Dict, outputs: Dict, start: float,
           status: str = "ok", error: Optional[str] = None):
    from modules.report_generator import ResultRecord

    reporter.append_record(ResultRecord(
        config_hash=cfg.config_hash() if cfg is not None else "", module=module, operation=operation,
        inputs=inputs, outputs=outputs, status=status, error=error, wall_time=time.perf_counter() - start))


# Subcommands -----------------------------------------------------------------------------


def cmd_classify(args) -> int:
    from modules.equilibria import SlowVaryingFn
    from modules.scaling import RegimeClassifier

    ell = SlowVaryingFn.from_dict(parse_ell(args.ell))
    classifier = RegimeClassifier()
    if args.map:
        alphas = parse_floats(args.alpha_grid) or list(np.round(np.linspace(0.1, 3.0, 30), 4))
        betas = parse_floats(args.beta_grid) or list(np.round(np.linspace(-2.0, 0.95, 60), 4))
        reporter = make_reporter(args)
        frame = classifier.regime_map(alphas, betas, ell)
        print(reporter.export_frame(frame, "regime_map", "regime_map.csv"))
        return EXIT_OK
    if args.alpha is None or args.beta is None:
        raise InvalidInputError("classify needs --alpha and --beta (or --map)")
    print(classifier.classify(args.alpha, args.beta, ell).describe())
    return EXIT_OK


def cmd_kappa(args) -> int:
    from modules.sweep_runner import ExperimentPipeline

    start = time.perf_counter()
    cfg = load_config(args)
    pipeline = ExperimentPipeline(cfg, args.threads)
    kappa = pipeline.kappa()
    print(kappa.describe())
    reporter = make_reporter(args, cfg)
    reporter.export_to_json({"config": cfg.to_dict(), "kappa": kappa.to_dict()},
                            reporter.stamped_name("kappa", cfg.config_hash(), "json"))
    record(reporter, cfg, "symbol", "kappa", {}, {"kappa": kappa.kappa}, start)
    return EXIT_OK


def cmd_symbol_sweep(args) -> int:
    from modules.sweep_runner import ExperimentPipeline

    start = time.perf_counter()
    cfg = load_config(args)
    pipeline = ExperimentPipeline(cfg, args.threads)
    eps_grid = parse_floats(args.eps_grid) or list(cfg.sweep.get("eps") or [1e-1, 1e-2, 1e-3, 1e-4])
    k = parse_floats(args.k) or [1.0]
    values = pipeline.analyzer.sweep(args.p, k if len(k) > 1 else k[0], eps_grid)
    rows = [v.to_row() for v in values]
    reporter = make_reporter(args, cfg)
    print(reporter.export_to_csv(rows, "symbol_sweep", reporter.stamped_name("symbol_sweep", cfg.config_hash(), "csv")))
    record(reporter, cfg, "symbol", "a_eps", {"p": args.p, "k": k, "eps": eps_grid},
           {"abs_err": [r["abs_err"] for r in rows]}, start)
    return EXIT_OK


def cmd_solve(args) -> int:
    from modules.sweep_runner import ExperimentPipeline
    from modules.solvers import relative_l2_distance

    start = time.perf_counter()
    cfg = load_config(args)
    pipeline = ExperimentPipeline(cfg, args.threads)
    s = cfg.solver
    T = float(s["T"])
    eps = float(args.eps or s["eps"])
    sample_times = parse_floats(args.times) or [T]
    rho0 = pipeline.initial_density()
    summary = {"config": cfg.to_dict(), "equation": args.equation, "eps": eps}

    densities = []
    if args.equation == "kinetic" or args.compare:
        result = pipeline.kinetic_comparison(eps, sample_times)
        summary["kinetic"] = result["summary"]
        summary["theta"] = result["theta"]
        if args.compare:
            summary["relative_l2_vs_limit"] = result["relative_l2"]
        if args.equation == "kinetic":
            densities = result["densities"]
    if args.equation in ("frac", "heat"):
        kappa = pipeline.kappa()
        if args.equation == "frac":
            densities = [pipeline.diffusion.solve_fractional_heat(kappa, pipeline.regime.gamma, rho0, t)
                         for t in sample_times]
        else:
            D = kappa.D if kappa.D is not None else kappa.kappa * np.eye(pipeline.equilibrium.dim)
            densities = [pipeline.diffusion.solve_classical_heat(D, rho0, t) for t in sample_times]
        summary["mass"] = [d.mass for d in densities]
        if args.compare:
            summary["relative_l2_vs_kinetic"] = relative_l2_distance(densities[-1], result["kinetic"])

    rows = []
    for d in densities:
        for k, amp in zip(d.modes[:, 0], d.amplitudes):
            rows.append({"time": d.time, "k": k, "re_rho": amp.real, "im_rho": amp.imag})
    reporter = make_reporter(args, cfg)
    tag = cfg.config_hash()
    print(reporter.export_to_csv(rows, "density", reporter.stamped_name(f"density_{args.equation}", tag, "csv")))
    print(reporter.export_to_json(summary, reporter.stamped_name(f"solve_{args.equation}", tag, "json")))
    record(reporter, cfg, "solvers", f"solve_{args.equation}", {"eps": eps, "T": T},
           {k: v for k, v in summary.items() if k.startswith("relative")}, start)
    return EXIT_OK


def cmd_mc(args) -> int:
    from modules.montecarlo import (
        coordinate_quantile,
        displacement_scaling,
        empirical_cf,
        simulate,
        velocity_ks_statistic,
    )
    from modules.sweep_runner import ExperimentPipeline

    start = time.perf_counter()
    cfg = load_config(args)
    pipeline = ExperimentPipeline(cfg, args.threads)
    snapshots = parse_floats(args.snapshots) or None
    params = pipeline.mc_params(eps=args.eps, n_particles=args.particles, snapshots=snapshots)
    history = simulate(params, args.threads)
    k_list = parse_floats(args.k) or [0.5, 1.0, 2.0]

    cf_rows, q_rows, ks = [], [], {}
    for ensemble in history.ensembles:
        for row in empirical_cf(ensemble, k_list):
            limit = pipeline.limit_cf(row["k"], ensemble.time)
            cf_rows.append({"time": ensemble.time, "k": row["k"], "re_cf": row["re"], "im_cf": row["im"],
                            "abs_cf": row["abs"], "se_abs": row["se_abs"], "limit": limit})
        if ensemble.time > 0:
            for q in (0.25, 0.5, 0.75, 0.9):
                est = coordinate_quantile(ensemble, q)
                q_rows.append({"time": ensemble.time, "quantile": q, "value": est["value"],
                               "rel_se": est["se"] / abs(est["value"]) if est["value"] else np.nan})
        ks[ensemble.time] = velocity_ks_statistic(ensemble, pipeline.equilibrium)

    summary = {"config": cfg.to_dict(), "eps": params.eps, "theta": params.theta,
               "particles": params.n_particles, "acceptance": history.acceptance, "ks": ks}
    positive = [e for e in history.ensembles if e.time > 0]
    if len(positive) >= 4:
        try:
            summary["displacement_scaling"] = displacement_scaling(positive, gamma=pipeline.regime.gamma)
        except FracDiffError as e:
            summary["displacement_scaling"] = {"error": str(e)}

    reporter = make_reporter(args, cfg)
    tag = cfg.config_hash()
    print(reporter.export_to_csv(cf_rows, "mc_cf", reporter.stamped_name("mc_cf", tag, "csv")))
    print(reporter.export_to_csv(q_rows, "mc_quantiles", reporter.stamped_name("mc_quantiles", tag, "csv")))
    if args.positions or cfg.output.get("positions"):
        for ensemble in history.ensembles:
            name = reporter.stamped_name(f"positions_t{ensemble.time:g}", tag, "npy")
            np.save(reporter.output_dir / name, ensemble.positions)
    print(reporter.export_to_json(summary, reporter.stamped_name("mc", tag, "json")))
    record(reporter, cfg, "montecarlo", "simulate", {"eps": params.eps, "particles": params.n_particles,
                                                     "seed": params.seed}, {"ks": ks}, start)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from modules.sweep_runner import SweepRunner

    cfg = load_config(args)
    records = SweepRunner(make_reporter(args, cfg), args.threads).run_sweep(cfg)
    failed = sum(r.failed for r in records)
    print(f"{len(records)} cells, {failed} failed")
    return EXIT_FAILURES if failed else EXIT_OK


def cmd_accept(args) -> int:
    from modules.acceptance import AcceptanceRunner

    runner = AcceptanceRunner(kappa_perturbation=args.kappa_perturbation, threads=args.threads,
                              mc_particles=args.particles)
    only = [c.strip() for c in args.only.split(",")] if args.only else None
    report = runner.run_acceptance(only)
    reporter = make_reporter(args)
    rows = [{k: r[k] for k in ("criterion", "measured", "target", "tolerance", "passed", "runtime_s")}
            for r in report["criteria"]]
    print(reporter.export_to_csv(rows, "acceptance", "acceptance.csv"))
    print(reporter.export_to_json(report, "acceptance.json"))
    for r in rows:
        print(f"{r['criterion']:>4}  {'PASS' if r['passed'] else 'FAIL'}  measured={r['measured']}")
    return EXIT_OK if report["passed"] else EXIT_FAILURES


# Parser ------------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracdiff",
                                     description="Fractional diffusion limits of linear kinetic equations")
    parser.add_argument("--config", help="experiment JSON (path or template name)")
    parser.add_argument("--out", help="output directory (default: FRACDIFF_RESULTS_DIR)")
    parser.add_argument("--seed", type=int, help="Monte Carlo seed override")
    parser.add_argument("--threads", type=int, default=None,
                        help=f"worker threads (default: {config.THREADS_ENV_VAR} or all cores)")
    parser.add_argument("--log-level", default=config.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify (alpha, beta, l)")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--ell", default="constant", help="kind[:param], e.g. power_log:1")
    p.add_argument("--map", action="store_true", help="write the regime map CSV")
    p.add_argument("--alpha-grid", help="comma-separated alphas")
    p.add_argument("--beta-grid", help="comma-separated betas; negative lists may also be written --beta-grid=-0.5,0.5")
    p.set_defaults(handler=cmd_classify)

    p = sub.add_parser("kappa", help="limit coefficient of the configured regime")
    p.set_defaults(handler=cmd_kappa)

    p = sub.add_parser("symbol-sweep", help="a_eps(p, k) over an eps grid")
    p.add_argument("--p", type=float, default=1.0)
    p.add_argument("--k", default="1.0", help="wave number, or comma-separated wave vector")
    p.add_argument("--eps-grid")
    p.set_defaults(handler=cmd_symbol_sweep)

    p = sub.add_parser("solve", help="kinetic or limit equation on the periodic box")
    p.add_argument("--equation", choices=("kinetic", "frac", "heat"), default="kinetic")
    p.add_argument("--compare", action="store_true", help="co-run the kinetic and limit equations")
    p.add_argument("--eps", type=float)
    p.add_argument("--times", help="comma-separated sample times")
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("mc", help="Monte Carlo velocity-jump process")
    p.add_argument("--snapshots", help="comma-separated snapshot times")
    p.add_argument("--positions", action="store_true", help="also write particle positions (.npy)")
    p.add_argument("--particles", type=int)
    p.add_argument("--eps", type=float)
    p.add_argument("--k", help="comma-separated wave numbers")
    p.set_defaults(handler=cmd_mc)

    p = sub.add_parser("sweep", help="cross-product sweep from the config")
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("accept", help="run the acceptance suite")
    p.add_argument("--only", help="comma-separated criterion ids")
    p.add_argument("--kappa-perturbation", type=float, default=0.0)
    p.add_argument("--particles", type=int, help="override the Monte Carlo particle count")
    p.set_defaults(handler=cmd_accept)
    return parser


LIST_OPTIONS = ("--alpha-grid", "--beta-grid", "--eps-grid", "--k", "--times", "--snapshots")


def attach_list_values(argv: List[str]) -> List[str]:
    """Rewrite '--beta-grid -0.5,0.5' as '--beta-grid=-0.5,0.5' so argparse accepts negative lists"""
    out: List[str] = []
    i = 0
    while i < len(argv):
        token = argv[i]
        if token in LIST_OPTIONS and i + 1 < len(argv) and argv[i + 1].startswith("-") and "," in argv[i + 1]:
            out.append(f"{token}={argv[i + 1]}")
            i += 2
            continue
        out.append(token)
        i += 1
    return out


def main(argv: Optional[List[str]] = None) -> int:
    """Main application"""
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(attach_list_values(argv))
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except (ConfigError, UnsupportedRegimeError, InvalidInputError) as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_INVALID
    except FracDiffError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_FAILURES


if __name__ == "__main__":
    sys.exit(main())
