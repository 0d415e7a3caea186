"""
Configuration file for the fractional diffusion toolkit
"""
import os
from pathlib import Path
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

# Project Paths
BASE_DIR = Path(__file__).parent
DATA_DIR = BASE_DIR / "data"
RESULTS_DIR = Path(os.getenv("FRACDIFF_RESULTS_DIR", str(DATA_DIR / "results")))
AUDIT_DIR = DATA_DIR / "audit_logs"
TEMPLATES_DIR = BASE_DIR / "templates"

# Create directories if they don't exist
for directory in [DATA_DIR, RESULTS_DIR, AUDIT_DIR]:
    directory.mkdir(parents=True, exist_ok=True)

# Runtime
THREADS_ENV_VAR = "FRACDIFF_THREADS"
DEFAULT_THREADS = int(os.getenv(THREADS_ENV_VAR, "0")) or (os.cpu_count() or 1)
LOG_LEVEL = os.getenv("FRACDIFF_LOG_LEVEL", "INFO")
CODE_VERSION = "0.3.0"

# Slowly varying function kinds
ELL_KINDS = {
    "constant": "Constant c",
    "power_log": "(ln(e+s))^p",
    "iterated_log": "ln(e+ln(e+s))",
    "tabulated": "User table, log-log interpolated",
}

# Core profiles below the cut radius
CORE_KINDS = {
    "uniform": "Radially uniform, glued continuously to the tail",
    "maxwellian": "Gaussian bump glued continuously to the tail",
}

# Collision kernels, b(v, v') with sigma = b F
KERNEL_KINDS = {
    "bgk": {"label": "Linear relaxation", "b": "1"},
    "separable": {"label": "Separable", "b": "<v>^beta <v'>^beta"},
    "shifted": {"label": "Shifted", "b": "<v-v'>^beta"},
    "physical": {"label": "Physical", "b": "|v-v'|^beta"},
}

# Scaling regimes
REGIME_KINDS = {
    "fractional": {"label": "Fractional diffusion", "theta": "phi(eps) * eps^gamma"},
    "critical": {"label": "Critical, anomalous time scale", "theta": "eps^2 * phi(eps) * ln(1/eps)"},
    "classical": {"label": "Classical diffusion", "theta": "eps^2"},
}

# Numerical tolerances
POTTER_SAFETY = 1.1
NORMALIZATION_TOL = 1e-8
GRID_MASS_TOL = 1e-6
BALANCE_RESCALE_TOL = 1e-6
B3_RELATIVE_SLACK = 1e-6
B3_CUTOFFS = (1e1, 1e2, 1e3, 1e4)
B3_DIVERGENCE_RATIO = 0.9
B3_GROWTH_SLOPE = 0.05
QUAD_EPSREL = 1e-9
QUAD_LIMIT = 500
SUBITERATION_TOL = 1e-10
SUBITERATION_MAX = 500
NORM_GROWTH_TOL = 1e-6
CELL_CONDITION_MAX = 1e12
REMAINDER_SLOPE_SLACK = 0.02
REJECTION_MIN_ACCEPTANCE = 1e-3
QUANTILE_MAX_REL_SE = 0.1
NU0_RADII = (1e2, 1e4)
GL_NODES_NORMALIZATION = 64

# Grid defaults per velocity dimension
GRID_DEFAULTS = {
    1: {"r_cut_outer": 1e3, "core_panels": 4, "panels": 28, "nodes_per_panel": 8, "angular_nodes": 1},
    2: {"r_cut_outer": 1e2, "core_panels": 2, "panels": 10, "nodes_per_panel": 6, "angular_nodes": 16},
    3: {"r_cut_outer": 1e2, "core_panels": 2, "panels": 6, "nodes_per_panel": 4, "angular_nodes": 4},
}

# Experiment defaults, merged under every config file
DEFAULTS = {
    "equilibrium": {
        "dim": 1,
        "alpha": 1.0,
        "kappa0": 1.0,
        "ell": {"kind": "constant", "param": 1.0},
        "r_cut": 1.0,
        "core": {"kind": "uniform"},
        "tail_exact": True,
    },
    "kernel": {
        "kind": "bgk",
        "beta": 0.0,
        "nu0": None,
        "unchecked": False,
        "grid": {},
    },
    "regime": {"critical_declared": None},
    "solver": {
        "box_length": 40.0,
        "modes": 256,
        "T": 1.0,
        "dt": None,
        "dt_over_theta": None,
        "sigma0": 0.5,
        "eps": 0.02,
    },
    "mc": {
        "particles": 100000,
        "seed": 20240601,
        "snapshots": [1.0],
        "block_size": 65536,
        "eps": 0.02,
        "horizon": 1.0,
    },
    "sweep": {"operation": "symbol", "eps": [], "k": [], "p": []},
    "output": {"directory": None, "formats": ["csv", "json"], "positions": False},
}

# Column orders of the emitted CSV tables
CSV_COLUMNS = {
    "symbol_sweep": ["eps", "re_a", "im_a", "drift", "d_eps", "c_remainder", "limit", "abs_err"],
    "density": ["time", "k", "re_rho", "im_rho"],
    "mc_cf": ["time", "k", "re_cf", "im_cf", "abs_cf", "se_abs", "limit"],
    "mc_quantiles": ["time", "quantile", "value", "rel_se"],
    "sweep": ["cell", "operation", "eps", "k", "p", "status", "value", "limit", "abs_err", "error"],
    "regime_map": ["alpha", "beta", "kind", "gamma"],
    "acceptance": ["criterion", "measured", "target", "tolerance", "passed", "runtime_s"],
}
