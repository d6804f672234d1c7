"""
Run configuration: one JSON file describing paths, data generation,
preprocessing, protection, evaluation and reporting.

Precedence is defaults < config file < command-line flags;
``EEGSHIELD_OUTPUT_ROOT`` (environment or ``.env``) overrides only
``paths.output_root``.
"""

import json
import logging
import os
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

from dotenv import find_dotenv, load_dotenv

from .eeg_synth import SyntheticConfig
from .error_handler import ConfigError
from .evaluation import EvaluationConfig
from .perturbation import ProtectionConfig
from .preprocess import PreprocessConfig
from .reporting import FIGURES

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "EEGSHIELD_OUTPUT_ROOT"


def _reject_unknown(section: str, data: Dict[str, Any], known) -> None:
    unknown = set(data) - set(known)
    if unknown:
        raise ConfigError(f"unknown {section} config key(s): {sorted(unknown)}")


@dataclass
class PathsConfig:
    output_root: str = "."
    source: Optional[str] = None
    subjects_file: Optional[str] = None
    montage_file: Optional[str] = None

    def resolve(self, path: Union[str, Path]) -> Path:
        """Relative output paths land under ``output_root``."""
        p = Path(path)
        return p if p.is_absolute() else Path(self.output_root) / p


@dataclass
class ReportingConfig:
    figures: Tuple[str, ...] = FIGURES
    magnify: float = 10.0
    overlay_channels: Optional[List[str]] = None
    overlay_trial: int = 0
    spectrogram_channel: str = "Cz"
    spectrogram_task: Optional[str] = "SSVEP"
    topoplot_task: Optional[str] = "MI"

    def __post_init__(self):
        self.figures = tuple(self.figures)
        unknown = [f for f in self.figures if f not in FIGURES]
        if unknown:
            raise ConfigError(f"reporting.figures accepts {FIGURES}, got {unknown}")
        if self.magnify <= 0:
            raise ConfigError(f"reporting.magnify must be positive, got {self.magnify}")
        if self.overlay_trial < 0:
            raise ConfigError(f"reporting.overlay_trial must be >= 0, got {self.overlay_trial}")


@dataclass
class RunConfig:
    paths: PathsConfig = field(default_factory=PathsConfig)
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    protection: ProtectionConfig = field(default_factory=ProtectionConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    reporting: ReportingConfig = field(default_factory=ReportingConfig)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        _reject_unknown("run", data, cls.__dataclass_fields__)
        paths = data.get("paths", {})
        reporting = data.get("reporting", {})
        _reject_unknown("paths", paths, PathsConfig.__dataclass_fields__)
        _reject_unknown("reporting", reporting, ReportingConfig.__dataclass_fields__)
        try:
            return cls(
                paths=PathsConfig(**paths),
                synthetic=SyntheticConfig.from_dict(data.get("synthetic", {})),
                preprocess=PreprocessConfig.from_dict(data.get("preprocess", {})),
                protection=ProtectionConfig.from_dict(data.get("protection", {})),
                evaluation=EvaluationConfig.from_dict(data.get("evaluation", {})),
                reporting=ReportingConfig(**reporting),
            )
        except TypeError as e:
            raise ConfigError(f"invalid run config: {e}")

    def to_dict(self) -> Dict[str, Any]:
        reporting = asdict(self.reporting)
        reporting["figures"] = list(self.reporting.figures)
        return {
            "paths": asdict(self.paths),
            "synthetic": self.synthetic.to_dict(),
            "preprocess": self.preprocess.to_dict(),
            "protection": self.protection.to_dict(),
            "evaluation": self.evaluation.to_dict(),
            "reporting": reporting,
        }

    def with_seed(self, seed: int) -> "RunConfig":
        """Same config with every seed derived from ``seed``."""
        data = self.to_dict()
        data["synthetic"]["seed"] = seed
        data["preprocess"]["seed"] = seed
        data["protection"]["seed"] = seed
        data["evaluation"]["seeds"] = [seed + r for r in range(self.evaluation.repeats)]
        return RunConfig.from_dict(data)

    def with_overrides(self, section: str, **values) -> "RunConfig":
        """Replace keys of one section; ``None`` values are ignored."""
        data = self.to_dict()
        if section not in data:
            raise ConfigError(f"unknown config section '{section}'")
        data[section].update({k: v for k, v in values.items() if v is not None})
        return RunConfig.from_dict(data)


def load_config(path: Optional[Union[str, Path]] = None) -> RunConfig:
    """Load ``path`` (or defaults) and apply the output-root environment override.

    Raises:
        ConfigError: file missing, not JSON, or invalid
    """
    load_dotenv(find_dotenv(usecwd=True))
    if path is None:
        cfg = RunConfig()
    else:
        config_path = Path(path)
        if not config_path.is_file():
            raise ConfigError(f"config file not found: {config_path}")
        try:
            data = json.loads(config_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}")
        cfg = RunConfig.from_dict(data)
        logger.info(f"Loaded run config from {config_path}")

    root = os.getenv(OUTPUT_ROOT_ENV)
    if root:
        cfg.paths.output_root = root
        logger.info(f"Output root overridden by {OUTPUT_ROOT_ENV}: {root}")
    return cfg
