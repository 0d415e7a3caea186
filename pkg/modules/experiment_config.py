"""
Experiment Config Module
One JSON key/value tree per experiment, merged over the defaults and validated before any run
"""
import copy
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Union

from config import DEFAULTS, TEMPLATES_DIR
from modules.collision import CollisionKernel
from modules.equilibria import HeavyTailEquilibrium, SlowVaryingFn
from modules.errors import ConfigError, FracDiffError, InvalidInputError, UnsupportedRegimeError
from modules.scaling import RegimeClassifier, ScalingRegime

logger = logging.getLogger(__name__)

SECTIONS = ("equilibrium", "kernel", "regime", "solver", "mc", "sweep", "output")


def _merge(base: Dict, override: Dict) -> Dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict) and out[key]:
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


@dataclass
class ExperimentConfig:
    """Fully defaulted experiment description"""

    equilibrium: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["equilibrium"]))
    kernel: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["kernel"]))
    regime: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["regime"]))
    solver: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["solver"]))
    mc: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["mc"]))
    sweep: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["sweep"]))
    output: Dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS["output"]))
    name: str = "experiment"

    @classmethod
    def from_dict(cls, spec: Dict) -> "ExperimentConfig":
        """Merge a (partial) tree over the defaults"""
        unknown = set(spec) - set(SECTIONS) - {"name"}
        if unknown:
            raise ConfigError(f"Unknown config sections: {sorted(unknown)}")
        merged = _merge(DEFAULTS, {k: v for k, v in spec.items() if k in SECTIONS})
        return cls(name=str(spec.get("name", "experiment")), **{s: merged[s] for s in SECTIONS})

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """
        Load a JSON config file

        Args:
            path: file path, or the stem of a file under templates/

        Returns:
            ExperimentConfig
        """
        path = Path(path)
        if not path.exists() and (TEMPLATES_DIR / f"{path.stem}.json").exists():
            path = TEMPLATES_DIR / f"{path.stem}.json"
        try:
            with open(path, "r", encoding="utf-8") as f:
                spec = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"Cannot read config {path}: {e}") from e
        config = cls.from_dict(spec)
        logger.info("Loaded config %s (%s)", path, config.config_hash()[:12])
        return config

    def to_dict(self) -> Dict:
        out = {"name": self.name}
        for section in SECTIONS:
            out[section] = copy.deepcopy(getattr(self, section))
        return out

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of the defaulted tree"""
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def with_overrides(self, section: str, **values) -> "ExperimentConfig":
        spec = self.to_dict()
        spec[section] = _merge(spec[section], values)
        return ExperimentConfig.from_dict(spec)

    # Builders -------------------------------------------------------------------------

    def _ell_spec(self) -> Dict:
        spec = dict(self.equilibrium.get("ell") or {})
        declared = self.regime.get("critical_declared")
        if declared is not None:
            spec["critical_declared"] = declared
        return spec

    def _ell(self) -> SlowVaryingFn:
        try:
            return SlowVaryingFn.from_dict(self._ell_spec())
        except FracDiffError as e:
            raise ConfigError(f"equilibrium.ell: {e}") from e

    def build_equilibrium(self) -> HeavyTailEquilibrium:
        spec = dict(self.equilibrium)
        spec["ell"] = self._ell_spec()
        try:
            return HeavyTailEquilibrium.from_dict(spec)
        except FracDiffError as e:
            raise ConfigError(f"equilibrium: {e}") from e

    def build_regime(self) -> ScalingRegime:
        """Classify the configured exponents; violations become ConfigError naming the inequality"""
        beta = 0.0 if self.kernel.get("kind", "bgk") == "bgk" else float(self.kernel.get("beta", 0.0))
        try:
            return RegimeClassifier().classify(float(self.equilibrium["alpha"]), beta, self._ell())
        except FracDiffError as e:
            raise ConfigError(str(e)) from e

    def build_kernel(self, equilibrium: Optional[HeavyTailEquilibrium] = None) -> CollisionKernel:
        equilibrium = equilibrium or self.build_equilibrium()
        try:
            return CollisionKernel.from_dict(equilibrium, self.kernel)
        except (InvalidInputError, UnsupportedRegimeError) as e:
            raise ConfigError(f"kernel: {e}") from e

    def validate(self) -> ScalingRegime:
        """Build the equilibrium and regime without touching the velocity grid"""
        self.build_equilibrium()
        return self.build_regime()

    def sweep_axes(self) -> Dict[str, List]:
        return {axis: list(self.sweep.get(axis) or []) for axis in ("eps", "k", "p")}
