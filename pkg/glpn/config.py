import json
import logging
import os
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any, Dict, Mapping, Optional

from glpn.json_utils import PathLike, json_dump, json_load
from glpn.models import GlpnError, JsObject, PromptStyle, VerdictSource

log = logging.getLogger(__name__)

ENV_API_KEY = "LLM_API_KEY"
ENV_BASE_URL = "LLM_BASE_URL"
ENV_MODEL = "LLM_MODEL"


class ConfigError(GlpnError):
    def __init__(self, field_name: str, reason: str) -> None:
        super().__init__(f"invalid configuration '{field_name}': {reason}")
        self.field_name = field_name
        self.reason = reason


class Mode(Enum):
    """The ablation tier a run evaluates."""

    fcn = "fcn"
    fcn_lp = "fcn-lp"
    fcn_lp_llm = "fcn-lp-llm"
    glpn = "glpn"
    glpn_llm = "glpn-llm"
    llm = "llm"
    lp = "lp"

    @property
    def uses_pseudo_labels(self) -> bool:
        return self in (Mode.fcn_lp_llm, Mode.glpn_llm, Mode.llm)


@dataclass
class EndpointConfig:
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key: Optional[str] = None
    temperature: float = 0.0
    max_retries: int = 3
    backoff_factor: float = 1.0
    backoff_max: float = 30.0
    timeout_seconds: float = 60.0
    concurrency: int = 4
    # extra requests for a record whose response does not parse
    parse_retries: int = 1
    custom_ca_cert_path: Optional[str] = None

    @staticmethod
    def from_env(environ: Optional[Mapping[str, str]] = None) -> "EndpointConfig":
        env = os.environ if environ is None else environ
        cfg = EndpointConfig(api_key=env.get(ENV_API_KEY) or None)
        if env.get(ENV_BASE_URL):
            cfg.base_url = env[ENV_BASE_URL]
        if env.get(ENV_MODEL):
            cfg.model = env[ENV_MODEL]
        return cfg

    def validate(self) -> None:
        if not self.base_url.startswith(("http://", "https://")):
            raise ConfigError("endpoint.base_url", "must be an http(s) url")
        if not self.model:
            raise ConfigError("endpoint.model", "must not be empty")
        if self.max_retries < 0:
            raise ConfigError("endpoint.max_retries", "must be >= 0")
        if self.parse_retries < 0:
            raise ConfigError("endpoint.parse_retries", "must be >= 0")
        if self.backoff_factor < 0 or self.backoff_max < 0:
            raise ConfigError("endpoint.backoff_factor", "backoff values must be >= 0")
        if self.timeout_seconds <= 0:
            raise ConfigError("endpoint.timeout_seconds", "must be > 0")
        if self.concurrency < 1:
            raise ConfigError("endpoint.concurrency", "must be >= 1")


@dataclass
class RunConfig:
    """
    Everything a `run` or `sweep` needs. Defaults are the reference hyperparameters.
    """

    dataset: Optional[str] = None
    out: str = "out"
    mode: Mode = Mode.glpn_llm
    theta: float = 0.95
    rho: float = 0.5
    pseudo_fraction: float = 0.05
    hidden: int = 512
    learning_rate: float = 1e-3
    epochs: int = 200
    runs: int = 5
    seed: int = 0
    pseudo_source: VerdictSource = VerdictSource.Oracle
    oracle_accuracy: float = 0.85
    oracle_sharpness: float = 4.0
    template: PromptStyle = PromptStyle.Detailed
    fixtures: Optional[str] = None
    pseudo_labels: Optional[str] = None
    graph: Optional[str] = None
    lp_iterations: int = 10
    lp_clamp: bool = True
    threads: int = 1
    deterministic: bool = False
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)

    def validate(self) -> None:
        if self.dataset is None:
            raise ConfigError("dataset", "a dataset file is required")
        if not -1.0 < self.theta <= 1.0:
            raise ConfigError("theta", "must be in (-1, 1]")
        if not 0.0 <= self.rho <= 1.0:
            raise ConfigError("rho", "must be in [0, 1]")
        if not 0.0 <= self.pseudo_fraction <= 1.0:
            raise ConfigError("pseudo_fraction", "must be in [0, 1]")
        for name in ("hidden", "epochs", "runs", "lp_iterations", "threads"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be > 0")
        if not 0.0 <= self.oracle_accuracy <= 1.0:
            raise ConfigError("oracle_accuracy", "must be in [0, 1]")
        if not self.oracle_sharpness > 0:
            raise ConfigError("oracle_sharpness", "must be > 0")
        if self.mode.uses_pseudo_labels:
            if self.pseudo_source == VerdictSource.Fixture and self.fixtures is None:
                raise ConfigError("fixtures", "fixture source needs a fixture file")
            if self.pseudo_source == VerdictSource.File and self.pseudo_labels is None:
                raise ConfigError("pseudo_labels", "file source needs a pseudo-label file")
            if self.pseudo_source == VerdictSource.Live:
                self.endpoint.validate()

    def to_json(self, redact: bool = True) -> JsObject:
        js: JsObject = json_dump(self, RunConfig)  # type: ignore
        if redact and isinstance(js.get("endpoint"), dict) and js["endpoint"].get("api_key"):  # type: ignore
            js["endpoint"]["api_key"] = "***"  # type: ignore
        return js


_known_keys = {f.name for f in fields(RunConfig)}
_endpoint_keys = {f.name for f in fields(EndpointConfig)}


def _overlay(base: Dict[str, Any], overrides: Mapping[str, Any], origin: str) -> None:
    for key, value in overrides.items():
        if key not in _known_keys:
            raise ConfigError(key, f"unknown key in {origin}")
        if key == "endpoint":
            if not isinstance(value, dict):
                raise ConfigError("endpoint", f"must be an object in {origin}")
            for ek in value:  # type: ignore
                if ek not in _endpoint_keys:
                    raise ConfigError(f"endpoint.{ek}", f"unknown key in {origin}")
            base["endpoint"].update(value)
        else:
            base[key] = value


def merge_config(
    file_values: Optional[Mapping[str, Any]] = None,
    flag_values: Optional[Mapping[str, Any]] = None,
    environ: Optional[Mapping[str, str]] = None,
) -> RunConfig:
    """
    Merge the configuration sources on their JSON form: flags over config file over defaults.
    The endpoint defaults are read from the environment.
    """
    defaults = RunConfig(endpoint=EndpointConfig.from_env(environ))
    merged: Dict[str, Any] = defaults.to_json(redact=False)
    _overlay(merged, file_values or {}, "config file")
    _overlay(merged, {k: v for k, v in (flag_values or {}).items() if v is not None}, "flags")
    try:
        cfg = json_load(merged, RunConfig)
    except Exception as e:
        raise ConfigError("config", str(e)) from e
    return cfg


def load_config_file(path: PathLike) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            values = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError("config", f"cannot read {path}: {e}") from e
    if not isinstance(values, dict):
        raise ConfigError("config", f"{path} must contain a JSON object")
    return values  # type: ignore
