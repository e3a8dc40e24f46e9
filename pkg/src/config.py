"""Configuration loading and validation.

Priority: command-line flags > environment variables > config.yaml > hardcoded defaults.
(Flags are applied by ``cli``; this module handles the rest.)

Environment variables (all optional; fall back to config.yaml then defaults):
    UNDID_HC              "HC0" or "HC1"
    UNDID_COVARIATES      Comma-separated covariate names, e.g. "age,female"
    UNDID_BASE_RULE       "VARYING"
    UNDID_CONTROL_GROUP   "NOT_YET_TREATED" or "NEVER_TREATED"
    UNDID_MODE            "AUTO", "COMMON" or "STAGGERED"
    UNDID_WEIGHTING       "BY_N" or "UNWEIGHTED"
    UNDID_SCHEME          "simple", "group" or "weighted"
    UNDID_JACKKNIFE       "true" or "false"
    UNDID_RI              Randomization-inference draws (0 disables)
    UNDID_SEED            Integer seed; required whenever UNDID_RI > 0
    UNDID_REPLICATIONS    Monte Carlo replications
    UNDID_WORKERS         Worker processes for simulations
    UNDID_TRUE_SE         "RESIDUALIZED", "CENTERED" or "PRINTED"
    LOG_LEVEL             "DEBUG", "INFO", "WARNING", "ERROR"
    LOG_FILE              Path or empty to disable
"""

import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import yaml

from .models import (
    AdoptionMode,
    AggregationKind,
    BasePeriodRule,
    ControlGroup,
    HcVariant,
    Weighting,
)
from .montecarlo import TrueSeForm

logger = logging.getLogger(__name__)

SCHEME_NAMES = {
    "simple": AggregationKind.SIMPLE,
    "group": AggregationKind.GROUP,
    "weighted": AggregationKind.POPULATION_WEIGHTED,
}


# ---------------------------------------------------------------------------
# .env file loader
# ---------------------------------------------------------------------------

def load_env_file(env_path: Optional[Path] = None) -> None:
    """Load a .env file if it exists (simple key=value parser).

    Variables already present in the environment win.
    """
    env_path = env_path or Path(__file__).parent.parent / ".env"
    if not env_path.exists():
        return

    try:
        with open(env_path, "r") as f:
            for line in f:
                line = line.strip()
                if not line or line.startswith("#") or "=" not in line:
                    continue
                key, value = line.split("=", 1)
                key = key.strip()
                value = value.strip()
                if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                    value = value[1:-1]
                if key and key not in os.environ:
                    os.environ[key] = value
    except OSError as e:
        logger.debug("Failed to load .env file: %s", e)


# ---------------------------------------------------------------------------
# Config dataclasses
# ---------------------------------------------------------------------------

@dataclass
class EstimationConfig:
    hc: HcVariant = HcVariant.HC1
    covariates: list[str] = field(default_factory=list)
    base_period_rule: BasePeriodRule = BasePeriodRule.VARYING
    control_group: ControlGroup = ControlGroup.NOT_YET_TREATED
    adoption_mode: AdoptionMode = AdoptionMode.AUTO
    weighting: Weighting = Weighting.BY_N


@dataclass
class InferenceConfig:
    scheme: str = "simple"
    jackknife: bool = False
    n_permutations: int = 0
    seed: Optional[int] = None

    @property
    def aggregation_kind(self) -> AggregationKind:
        return SCHEME_NAMES[self.scheme]


@dataclass
class SimulationConfig:
    replications: int = 1000
    workers: int = 1
    true_se_form: TrueSeForm = TrueSeForm.RESIDUALIZED


@dataclass
class LoggingConfig:
    level: str = "INFO"
    file: Optional[str] = None


@dataclass
class AppConfig:
    """Top-level configuration."""
    estimation: EstimationConfig
    inference: InferenceConfig
    simulation: SimulationConfig
    logging: LoggingConfig


# ---------------------------------------------------------------------------
# Env-var helpers
# ---------------------------------------------------------------------------

def _env_bool(key: str, default: bool) -> bool:
    """Read a boolean from an environment variable."""
    val = os.environ.get(key)
    if val is None:
        return default
    return val.lower() in ("true", "1", "yes")


def _env(key: str, fallback):
    """Return env var *key* if set, otherwise *fallback*."""
    val = os.environ.get(key)
    return val if val is not None else fallback


def _enum(cls: type[Enum], raw, key: str, errors: list[str]):
    try:
        return cls(str(raw).upper())
    except ValueError:
        errors.append(f"{key} must be one of {[m.value for m in cls]}, got {raw!r}")
        return next(iter(cls))


def _int(raw, key: str, errors: list[str], default: Optional[int] = 0) -> Optional[int]:
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except (TypeError, ValueError):
        errors.append(f"{key} must be an integer, got {raw!r}")
        return default


def _covariates(raw) -> list[str]:
    if raw is None:
        return []
    if isinstance(raw, str):
        return [c.strip() for c in raw.split(",") if c.strip()]
    return [str(c) for c in raw]


# ---------------------------------------------------------------------------
# Loading & Validation
# ---------------------------------------------------------------------------

def load_config(config_path: str = "config.yaml") -> AppConfig:
    """Load and validate configuration.

    The config file is optional; env vars and defaults are enough.

    Raises:
        ValueError: If validation fails.
    """
    load_env_file()
    raw: dict = {}
    path = Path(config_path)
    if path.exists():
        with open(path, "r", encoding="utf-8") as f:
            raw = yaml.safe_load(f) or {}
    else:
        logger.debug("Config file %s not found, using env vars / defaults", config_path)

    errors: list[str] = []

    # --- Estimation ---
    est = raw.get("estimation", {})
    estimation = EstimationConfig(
        hc=_enum(HcVariant, _env("UNDID_HC", est.get("hc", "HC1")), "hc", errors),
        covariates=_covariates(_env("UNDID_COVARIATES", est.get("covariates"))),
        base_period_rule=_enum(
            BasePeriodRule, _env("UNDID_BASE_RULE", est.get("base_period_rule", "VARYING")),
            "base_period_rule", errors,
        ),
        control_group=_enum(
            ControlGroup, _env("UNDID_CONTROL_GROUP", est.get("control_group", "NOT_YET_TREATED")),
            "control_group", errors,
        ),
        adoption_mode=_enum(
            AdoptionMode, _env("UNDID_MODE", est.get("adoption_mode", "AUTO")),
            "adoption_mode", errors,
        ),
        weighting=_enum(
            Weighting, _env("UNDID_WEIGHTING", est.get("weighting", "BY_N")), "weighting", errors,
        ),
    )

    # --- Inference ---
    inf = raw.get("inference", {})
    inference = InferenceConfig(
        scheme=str(_env("UNDID_SCHEME", inf.get("scheme", "simple"))).lower(),
        jackknife=_env_bool("UNDID_JACKKNIFE", bool(inf.get("jackknife", False))),
        n_permutations=_int(_env("UNDID_RI", inf.get("n_permutations", 0)), "n_permutations", errors),
        seed=_int(_env("UNDID_SEED", inf.get("seed")), "seed", errors, default=None),
    )

    # --- Simulation ---
    sim = raw.get("simulation", {})
    simulation = SimulationConfig(
        replications=_int(
            _env("UNDID_REPLICATIONS", sim.get("replications", 1000)), "replications", errors
        ),
        workers=_int(_env("UNDID_WORKERS", sim.get("workers", 1)), "workers", errors),
        true_se_form=_enum(
            TrueSeForm, _env("UNDID_TRUE_SE", sim.get("true_se_form", "RESIDUALIZED")),
            "true_se_form", errors,
        ),
    )

    # --- Logging ---
    lg = raw.get("logging", {})
    logging_cfg = LoggingConfig(
        level=str(_env("LOG_LEVEL", lg.get("level", "INFO"))).upper(),
        file=_env("LOG_FILE", lg.get("file")) or None,
    )

    config = AppConfig(
        estimation=estimation,
        inference=inference,
        simulation=simulation,
        logging=logging_cfg,
    )
    _validate_config(config, errors)
    return config


def _validate_config(config: AppConfig, errors: Optional[list[str]] = None) -> None:
    """Collect every problem, log each one, then raise once."""
    errors = list(errors or [])

    if config.inference.scheme not in SCHEME_NAMES:
        errors.append(f"scheme must be one of {sorted(SCHEME_NAMES)}, got {config.inference.scheme!r}")
    if config.inference.n_permutations < 0:
        errors.append("n_permutations must be >= 0")
    if config.inference.n_permutations > 0 and config.inference.seed is None:
        errors.append("randomization inference needs an explicit seed (UNDID_SEED)")
    if config.simulation.replications < 1:
        errors.append("replications must be >= 1")
    if config.simulation.workers < 1:
        errors.append("workers must be >= 1")
    if config.logging.level not in ("DEBUG", "INFO", "WARNING", "ERROR"):
        errors.append(f"Unknown log level: {config.logging.level}")
    if len(set(config.estimation.covariates)) != len(config.estimation.covariates):
        errors.append(f"covariates contain duplicates: {config.estimation.covariates}")

    if errors:
        for e in errors:
            logger.error("Config validation error: %s", e)
        raise ValueError(f"Config validation failed: {'; '.join(errors)}")

    logger.debug(
        "Config loaded: hc=%s, covariates=%s, scheme=%s, jackknife=%s, ri=%d",
        config.estimation.hc.value,
        config.estimation.covariates or "none",
        config.inference.scheme,
        config.inference.jackknife,
        config.inference.n_permutations,
    )
