"""
Run configuration

Config files are JSON objects with optional sections `simulation`, `tuning`
and `bench` plus top-level `out_dir`, `seed` and `threads`, validated by the
strict pydantic model RunConfig; its JSON Schema is CONFIG_SCHEMA. Unknown
fields, wrong types and constraint violations raise ConfigError naming the
dotted field path, and JSON syntax errors report line and column.
Command-line flags override file values.
"""

import json
import logging
import os
from pathlib import Path
from typing import Annotated, Any, Dict, List, Literal, Mapping, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError

from errors import ArtifactIOError, ConfigError
from model_select import DEFAULT_K_MAX, DEFAULT_TAU_GRID, TuningPolicy
from simgen import SimConfig


logger = logging.getLogger(__name__)

THREADS_ENV = "GAMPI_THREADS"


PositiveFloat = Annotated[float, Field(gt=0)]
NonNegativeInt = Annotated[int, Field(ge=0)]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", strict=True)


class SimulationSection(_Section):
    p: int = Field(20, ge=2, description="number of primary variables")
    q: Optional[int] = Field(None, ge=1, description="number of instruments (defaults to p)")
    n: int = Field(500, ge=1, description="sample size")
    graph: Literal["hub", "chain", "random"] = Field("hub", description="graph structure")
    outcome: Literal["binary", "count", "gaussian"] = Field("binary", description="outcome type")
    alpha0: Optional[float] = Field(None, description="root instrument strength")
    beta1: Optional[float] = Field(None, description="parent effect strength")
    alpha1: Optional[float] = Field(None, description="child instrument strength")
    confounded: bool = Field(True, description="draw equicorrelated confounders")
    confounder_corr: float = Field(0.95, description="confounder equicorrelation")
    poisson_rate: float = Field(5.0, gt=0, description="copula target Poisson mean")
    noise_sd: float = Field(1.0, gt=0, description="latent noise standard deviation")
    segment_len: int = Field(4, ge=2, description="chain segment length")
    expected_edges: Optional[float] = Field(None, ge=0,
                                            description="random-graph expected edge count (defaults to 0.73 p)")


class TuningSection(_Section):
    method: Literal["ebic", "cv"] = Field("ebic", description="selection criterion")
    ebic_gamma: float = Field(0.5, ge=0, le=1, description="EBIC extra log-dimension weight")
    folds: int = Field(5, ge=2, description="cross-validation folds")
    tau_grid: List[PositiveFloat] = Field(default_factory=lambda: list(DEFAULT_TAU_GRID), min_length=1,
                                          description="truncation thresholds")
    k_grid: Optional[List[NonNegativeInt]] = Field(
        None, min_length=1, description="l0 budgets (defaults to 1..k_max, 0..|an| for children)")
    kprime_grid: Optional[List[NonNegativeInt]] = Field(
        None, min_length=1, description="residual-block budgets (defaults to k_grid)")
    k_max: int = Field(DEFAULT_K_MAX, ge=1, description="largest budget in the default grid")


class BenchSection(_Section):
    reps: int = Field(10, ge=1, description="replicates")
    methods: List[Literal["dri", "dps", "none"]] = Field(default_factory=lambda: ["dri"], min_length=1,
                                                         description="deconfounding methods to compare")


class RunConfig(_Section):
    out_dir: str = Field("out", description="directory for artifacts")
    seed: int = Field(0, ge=0, description="master random seed")
    threads: Optional[int] = Field(None, ge=1,
                                   description=f"worker pool size (falls back to {THREADS_ENV}, then 1)")
    simulation: SimulationSection = Field(default_factory=SimulationSection)
    tuning: TuningSection = Field(default_factory=TuningSection)
    bench: BenchSection = Field(default_factory=BenchSection)


CONFIG_SCHEMA: Dict[str, Any] = RunConfig.model_json_schema()


def _config_error(e: ValidationError) -> ConfigError:
    first = e.errors()[0]
    path = ".".join(str(part) for part in first["loc"] if isinstance(part, str))
    return ConfigError(first["msg"], path or None)


def validate_config(raw: Mapping[str, Any]) -> Dict[str, Any]:
    """Check a raw config object against RunConfig and fill defaults."""
    if not isinstance(raw, Mapping):
        raise ConfigError("config must be a JSON object")
    try:
        # strict JSON mode: sections arrive as plain objects, bools are not ints
        return RunConfig.model_validate_json(json.dumps(dict(raw))).model_dump()
    except ValidationError as e:
        raise _config_error(e) from None


def parse_config_text(text: str, source: str = "<config>") -> Dict[str, Any]:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{source}:{e.lineno}:{e.colno}: {e.msg}") from None
    return validate_config(raw)


def load_config(path: Union[str, Path, None]) -> Dict[str, Any]:
    """
    Read and validate a config file; None gives the defaults.

    Raises:
        ArtifactIOError: if the file cannot be read
        ConfigError: on syntax or schema errors
    """
    if path is None:
        return validate_config({})
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ArtifactIOError(f"cannot read config {path}: {e}") from e
    config = parse_config_text(text, str(path))
    logger.info(f"Loaded config from {path}")
    return config


def apply_overrides(config: Dict[str, Any], overrides: Mapping[str, Any]) -> Dict[str, Any]:
    """Apply dotted-path overrides (e.g. "tuning.method"); None values are skipped."""
    raw = {k: (dict(v) if isinstance(v, dict) else v) for k, v in config.items()}
    for path, value in overrides.items():
        if value is None:
            continue
        section, _, key = path.rpartition(".")
        target = raw.setdefault(section, {}) if section else raw
        target[key] = value
    return validate_config(raw)


def sim_config_from_dict(section: Mapping[str, Any], seed: int) -> SimConfig:
    values = {k: v for k, v in section.items() if v is not None}
    values.setdefault("q", values.get("p"))
    try:
        return SimConfig(seed=seed, **values)
    except ConfigError as e:
        raise ConfigError(e.detail, f"simulation.{e.field}" if e.field else "simulation") from None


def tuning_policy_from_dict(section: Mapping[str, Any], seed: int) -> TuningPolicy:
    values = {k: v for k, v in section.items() if v is not None}
    for key in ("tau_grid", "k_grid", "kprime_grid"):
        if key in values:
            values[key] = tuple(values[key])
    try:
        return TuningPolicy(seed=seed, **values)
    except ValueError as e:
        raise ConfigError(str(e), "tuning") from None


def resolve_threads(flag: Optional[int], configured: Optional[int] = None) -> int:
    """--threads, then the config file, then GAMPI_THREADS, then 1."""
    for value in (flag, configured):
        if value is not None:
            if value < 1:
                raise ConfigError(f"must be >= 1, got {value}", "threads")
            return int(value)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            threads = int(env)
        except ValueError:
            raise ConfigError(f"{THREADS_ENV}={env!r} is not an integer", "threads") from None
        if threads < 1:
            raise ConfigError(f"{THREADS_ENV} must be >= 1, got {threads}", "threads")
        return threads
    return 1
