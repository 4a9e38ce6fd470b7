"""
Run configuration

Precedence: CLI flags > INI file > CLV_* environment variables (config/.env
included) > defaults. Nested fields use a double underscore in the
environment, e.g. CLV_SIMULATION__N_PATHS=20000.
"""
import configparser
import hashlib
import json
from datetime import date
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, Field, ValidationError, field_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from commodity_lv.exceptions import ConfigError
from commodity_lv.models import (
    AccumulatorKind,
    CalibrationConfig,
    G1ppParams,
    RateMode,
    SimConfig,
)

CALIBRATION_SEED_OFFSET = 1_000_003
MARKET_FILES = ("futures", "vols", "discount", "returns")
CALIBRATION_SECTIONS = ("market", "backbone", "tiv", "rates", "calibration")
ARTIFACT_VERSION = 1


class MarketSection(BaseModel):
    futures: str = "data/futures.csv"
    vols: str = "data/vols.csv"
    discount: str = "data/discount.csv"
    returns: Optional[str] = None
    valuation_date: Optional[date] = None  # needed when futures.csv carries delivery_date


class BackboneSection(BaseModel):
    """Backbone parameters: calibrate them, or take them as given"""
    calibrate: bool = True
    kappa: Optional[float] = None
    h1: Optional[float] = None
    h2: Optional[float] = None
    h_inf: Optional[float] = None
    rho_inf: Optional[float] = Field(default=None, gt=-1.0, lt=1.0)
    rho_source: str = "given"  # given | estimate

    @field_validator("rho_source")
    @classmethod
    def _check_source(cls, v: str) -> str:
        if v not in ("given", "estimate"):
            raise ValueError("rho_source must be 'given' or 'estimate'")
        return v


class TivSection(BaseModel):
    accumulator: AccumulatorKind = AccumulatorKind.LINEAR
    mixture: Dict[AccumulatorKind, float] = Field(
        default_factory=lambda: {AccumulatorKind.LINEAR: 0.5, AccumulatorKind.QUADRATIC: 0.5}
    )

    @field_validator("mixture", mode="before")
    @classmethod
    def _parse_mixture(cls, v):
        # "linear:0.5, quadratic:0.5" from INI files
        if isinstance(v, str):
            v = [v]
        if isinstance(v, list):
            pairs = {}
            for item in v:
                kind, _, weight = str(item).partition(":")
                pairs[kind.strip()] = float(weight)
            return pairs
        return v


class RatesSection(BaseModel):
    mode: RateMode = RateMode.DETERMINISTIC
    a: float = Field(default=0.02, gt=0.0)
    sigma: float = Field(default=0.01, ge=0.0)
    rho_1r: float = -0.2
    rho_2r: float = -0.2

    def g1pp(self) -> G1ppParams:
        return G1ppParams(a=self.a, sigma=self.sigma, rho_1r=self.rho_1r, rho_2r=self.rho_2r)


class ValidationSection(BaseModel):
    threshold: float = Field(default=0.95, ge=0.0, le=1.0)
    se_multiple: float = Field(default=2.0, gt=0.0)
    moneyness: List[float] = Field(default_factory=lambda: [0.6 + 0.1 * k for k in range(9)])
    maturities: Optional[List[float]] = None  # defaults to every delivery


class OutputSection(BaseModel):
    directory: str = "out"
    deterministic: bool = False
    dump_paths: bool = False
    max_dump_paths: int = Field(default=100, ge=1)


class RunConfig(BaseSettings):
    """Everything a calibrate / validate / simulate run needs"""
    model_config = SettingsConfigDict(
        env_prefix="CLV_",
        env_nested_delimiter="__",
        env_file="config/.env",
        extra="ignore",
    )

    market: MarketSection = Field(default_factory=MarketSection)
    backbone: BackboneSection = Field(default_factory=BackboneSection)
    tiv: TivSection = Field(default_factory=TivSection)
    rates: RatesSection = Field(default_factory=RatesSection)
    calibration: CalibrationConfig = Field(default_factory=CalibrationConfig)
    simulation: SimConfig = Field(default_factory=SimConfig)
    validation: ValidationSection = Field(default_factory=ValidationSection)
    output: OutputSection = Field(default_factory=OutputSection)

    def canonical(self, sections=None) -> Dict[str, Any]:
        data = self.model_dump(mode="json")
        data["output"].pop("directory", None)
        data["output"].pop("deterministic", None)
        if sections is not None:
            data = {k: v for k, v in data.items() if k in sections}
        return data

    def config_hash(self) -> str:
        """SHA-256 of the effective config (output location excluded)"""
        payload = json.dumps(self.canonical(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    def calibration_hash(self) -> str:
        """Hash of the sections that determine the calibrated model"""
        payload = json.dumps(self.canonical(CALIBRATION_SECTIONS), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()

    @property
    def output_dir(self) -> Path:
        return Path(self.output.directory)


def _coerce(raw: str) -> Union[str, List[str], Any]:
    value = raw.strip()
    if value.startswith("["):
        return json.loads(value)
    if "," in value:
        return [item.strip() for item in value.split(",") if item.strip()]
    return value


def read_ini(path: Union[str, Path]) -> Dict[str, Dict[str, Any]]:
    """INI sections as nested dicts; relative market paths resolve against the file's directory"""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.read(path, encoding="utf-8")
    values: Dict[str, Dict[str, Any]] = {}
    for section in parser.sections():
        values[section] = {key: _coerce(raw) for key, raw in parser.items(section)}
    for key, raw in values.get("market", {}).items():
        if key in MARKET_FILES and isinstance(raw, str) and raw and not Path(raw).is_absolute():
            values["market"][key] = str((path.parent / raw).resolve())
    return values


def _merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = dict(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def load_config(path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """
    Build the effective run config

    Args:
        path: Optional INI file
        overrides: Nested values from CLI flags, applied last

    Raises:
        ConfigError: unreadable file or invalid values
    """
    values = read_ini(path) if path else {}
    values = _merge(values, overrides or {})
    try:
        return RunConfig(**values)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {e.errors()[0]['loc']}: {e.errors()[0]['msg']}") from e


def cli_overrides(seed: Optional[int] = None, paths: Optional[int] = None, accumulator: Optional[str] = None,
                  rate_mode: Optional[str] = None, out: Optional[str] = None,
                  deterministic: bool = False) -> Dict[str, Any]:
    """Nested override dict from the shared CLI flags"""
    overrides: Dict[str, Any] = {}
    if seed is not None:
        overrides.setdefault("simulation", {})["seed"] = seed
        overrides.setdefault("calibration", {})["seed"] = seed + CALIBRATION_SEED_OFFSET
    if paths is not None:
        overrides.setdefault("simulation", {})["n_paths"] = paths
    if accumulator is not None:
        overrides.setdefault("tiv", {})["accumulator"] = accumulator
    if rate_mode is not None:
        overrides.setdefault("rates", {})["mode"] = rate_mode
    if out is not None:
        overrides.setdefault("output", {})["directory"] = out
    if deterministic:
        overrides.setdefault("output", {})["deterministic"] = True
    return overrides
