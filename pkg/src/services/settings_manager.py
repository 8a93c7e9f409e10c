import logging
import os
from typing import Any, Callable, Dict

import yaml

from src.core.errors import DocumentFormatError
from src.interfaces.settings import ISettingsManager

logger = logging.getLogger(__name__)

JOBS_ENV = "STAINKIT_JOBS"
SOLVER_MODES = ["pinv", "nnls"]
SNMF_INITS = ["reference", "random"]


def _jobs_from_env() -> int:
    raw = os.environ.get(JOBS_ENV, "").strip()
    if not raw:
        return 1
    try:
        jobs = int(raw)
    except ValueError:
        raise ValueError(f"Invalid {JOBS_ENV} value '{raw}'. Must be a positive integer")
    if jobs < 1:
        raise ValueError(f"Invalid {JOBS_ENV} value '{raw}'. Must be a positive integer")
    return jobs


def _positive_int(value: Any) -> bool:
    return isinstance(value, int) and not isinstance(value, bool) and value >= 1


def _non_negative(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool) and value >= 0


def _positive(value: Any) -> bool:
    return _non_negative(value) and value > 0


def _odd_window(value: Any) -> bool:
    return _positive_int(value) and value % 2 == 1


_VALIDATORS: Dict[str, Callable[[Any], bool]] = {
    "illuminant": lambda v: _positive_int(v) and v <= 255,
    "tissue_threshold": _non_negative,
    "snmf_lambda": _non_negative,
    "snmf_max_iters": _positive_int,
    "snmf_tol": _positive,
    "snmf_init": lambda v: v in SNMF_INITS,
    "sample_size": _positive_int,
    "solver_mode": lambda v: v in SOLVER_MODES,
    "epsilon": _non_negative,
    "compare_normalized": lambda v: isinstance(v, bool),
    "feature_window": _odd_window,
    "angle_range": _non_negative,
    "angle_step": _positive,
    "pyramid_levels": _positive_int,
    "affine_max_iters": _positive_int,
    "saffron_threshold": _non_negative,
    "region_grid": _positive_int,
    "seed": lambda v: isinstance(v, int) and not isinstance(v, bool),
    "jobs": _positive_int,
}


class SettingsManager(ISettingsManager):
    """In-memory settings with validated setters; no persistence"""

    def __init__(self):
        self._settings = {
            "illuminant": 255,
            "tissue_threshold": 0.15,
            "snmf_lambda": 0.1,
            "snmf_max_iters": 200,
            "snmf_tol": 1e-5,
            "snmf_init": "reference",
            "sample_size": 100_000,
            "solver_mode": "pinv",
            "epsilon": 0.1,
            "compare_normalized": True,
            "feature_window": 9,
            "angle_range": 10.0,
            "angle_step": 0.5,
            "pyramid_levels": 3,
            "affine_max_iters": 100,
            "saffron_threshold": 0.05,
            "region_grid": 2,
            "seed": 0,
            "jobs": _jobs_from_env(),
        }

    def get(self, key: str) -> Any:
        if key not in self._settings:
            raise ValueError(f"Unknown setting '{key}'. Must be one of: {sorted(self._settings)}")
        return self._settings[key]

    def set(self, key: str, value: Any) -> None:
        if key not in self._settings:
            raise ValueError(f"Unknown setting '{key}'. Must be one of: {sorted(self._settings)}")
        if isinstance(self._settings[key], float) and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not _VALIDATORS[key](value):
            if key == "solver_mode":
                raise ValueError(f"Invalid solver mode '{value}'. Must be one of: {SOLVER_MODES}")
            if key == "snmf_init":
                raise ValueError(f"Invalid SNMF init '{value}'. Must be one of: {SNMF_INITS}")
            raise ValueError(f"Invalid value {value!r} for setting '{key}'")
        self._settings[key] = value
        logger.debug("Setting %s updated to %r", key, value)

    def load_overrides(self, path: str) -> None:
        """Merge a YAML mapping of setting names to values"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                overrides = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise DocumentFormatError(f"Malformed settings file {path}: {e}") from e
        if not isinstance(overrides, dict):
            raise DocumentFormatError(f"Settings file {path} must be a mapping")
        for key, value in overrides.items():
            self.set(str(key), value)
        logger.info("Loaded %d setting overrides from %s", len(overrides), path)

    def get_all(self) -> dict:
        return self._settings.copy()
