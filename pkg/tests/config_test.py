import json
from pathlib import Path

from pytest import raises

from glpn.config import (
    ENV_API_KEY,
    ENV_BASE_URL,
    ConfigError,
    EndpointConfig,
    Mode,
    RunConfig,
    load_config_file,
    merge_config,
)
from glpn.models import PromptStyle, VerdictSource


def test_defaults() -> None:
    cfg = RunConfig()
    assert (cfg.theta, cfg.rho, cfg.pseudo_fraction) == (0.95, 0.5, 0.05)
    assert (cfg.learning_rate, cfg.hidden, cfg.epochs, cfg.runs) == (1e-3, 512, 200, 5)
    assert cfg.mode == Mode.glpn_llm
    assert cfg.endpoint.temperature == 0.0


def test_precedence() -> None:
    file_values = {"theta": 0.9, "rho": 0.3, "endpoint": {"model": "from-file"}}
    flags = {"rho": 0.7, "mode": "fcn-lp", "endpoint": {"max_retries": 5}, "hidden": None}
    cfg = merge_config(file_values, flags, environ={ENV_API_KEY: "k", ENV_BASE_URL: "http://localhost:1234/v1"})
    assert cfg.theta == 0.9
    assert cfg.rho == 0.7
    assert cfg.hidden == 512
    assert cfg.mode == Mode.fcn_lp
    assert cfg.endpoint.model == "from-file"
    assert cfg.endpoint.max_retries == 5
    assert cfg.endpoint.api_key == "k"
    assert cfg.endpoint.base_url == "http://localhost:1234/v1"


def test_enum_values_load() -> None:
    cfg = merge_config({"pseudo_source": "fixture", "template": "simple", "fixtures": "f.jsonl"}, environ={})
    assert cfg.pseudo_source == VerdictSource.Fixture
    assert cfg.template == PromptStyle.Simple


def test_unknown_keys() -> None:
    with raises(ConfigError, match="unknown key"):
        merge_config({"thetta": 0.5}, environ={})
    with raises(ConfigError, match="endpoint.colour"):
        merge_config(None, {"endpoint": {"colour": "red"}}, environ={})


def test_validation() -> None:
    with raises(ConfigError) as e:
        RunConfig().validate()
    assert e.value.field_name == "dataset"
    for field, value in [("theta", 1.5), ("rho", -0.1), ("pseudo_fraction", 2.0), ("hidden", 0), ("runs", 0)]:
        with raises(ConfigError) as e:
            merge_config({"dataset": "d.jsonl", field: value}, environ={}).validate()
        assert e.value.field_name == field
    with raises(ConfigError, match="fixture"):
        RunConfig(dataset="d.jsonl", pseudo_source=VerdictSource.Fixture).validate()
    # no pseudo labels needed, no fixture file needed
    RunConfig(dataset="d.jsonl", mode=Mode.glpn, pseudo_source=VerdictSource.Fixture).validate()
    with raises(ConfigError, match="base_url"):
        RunConfig(
            dataset="d.jsonl", pseudo_source=VerdictSource.Live, endpoint=EndpointConfig(base_url="ftp://x")
        ).validate()


def test_mode_uses_pseudo_labels() -> None:
    assert {m for m in Mode if m.uses_pseudo_labels} == {Mode.fcn_lp_llm, Mode.glpn_llm, Mode.llm}


def test_to_json_redacts_the_key() -> None:
    cfg = RunConfig(endpoint=EndpointConfig(api_key="secret"))
    js = cfg.to_json()
    assert js["endpoint"]["api_key"] == "***"  # type: ignore
    assert js["mode"] == "glpn-llm"
    assert cfg.to_json(redact=False)["endpoint"]["api_key"] == "secret"  # type: ignore
    assert "secret" not in json.dumps(js)


def test_load_config_file(tmp_path: Path) -> None:
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"epochs": 10}))
    assert load_config_file(path) == {"epochs": 10}
    path.write_text("[1, 2]")
    with raises(ConfigError):
        load_config_file(path)
    with raises(ConfigError):
        load_config_file(tmp_path / "missing.json")
