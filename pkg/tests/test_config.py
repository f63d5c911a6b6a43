import json

import pytest

from docql.config import Config, load_config, save_config
from docql.errors import ValidationError


def _write(tmp_path, payload):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(payload))
    return path


def test_load_minimal_mock_config(tmp_path):
    path = _write(tmp_path, {"corpus": "c.jsonl", "schema": "t.json", "sidecar": "s.jsonl"})
    config = load_config(path)
    assert config.provider == "mock"
    assert config.sample_rate == 0.05
    assert config.evidence_k == 3
    assert config.initial_tau == 1.2


def test_round_trip(tmp_path):
    config = Config(corpus="c.jsonl", schema="t.json", sidecar="s.jsonl", seed=7, dim=64)
    path = tmp_path / "saved.json"
    save_config(config, path)
    again = load_config(path)
    assert again.seed == 7 and again.dim == 64


def test_unknown_keys_rejected(tmp_path):
    path = _write(tmp_path, {"sidecar": "s", "bogus_knob": 1})
    with pytest.raises(ValidationError):
        load_config(path)


def test_invalid_json_rejected(tmp_path):
    path = tmp_path / "config.json"
    path.write_text("{nope")
    with pytest.raises(ValidationError):
        load_config(path)


@pytest.mark.parametrize(
    "overrides",
    [
        {"sample_rate": 0.0},
        {"sample_rate": 1.5},
        {"evidence_k": 0},
        {"dim": 4},
        {"provider": "carrier-pigeon"},
        {"provider": "mock", "sidecar": None},
        {"workers": 0},
    ],
)
def test_validation_failures(tmp_path, overrides, monkeypatch):
    monkeypatch.delenv("DOCQL_PROVIDER_URL", raising=False)
    payload = {"sidecar": "s.jsonl"}
    payload.update(overrides)
    path = _write(tmp_path, payload)
    with pytest.raises(ValidationError):
        load_config(path)


def test_http_provider_env_fallback(tmp_path, monkeypatch):
    monkeypatch.setenv("DOCQL_PROVIDER_URL", "http://llm.example")
    monkeypatch.setenv("DOCQL_MODEL", "m-1")
    path = _write(tmp_path, {"provider": "http"})
    config = load_config(path)
    assert config.provider_url == "http://llm.example"
    assert config.model == "m-1"


def test_http_provider_requires_url(tmp_path, monkeypatch):
    monkeypatch.delenv("DOCQL_PROVIDER_URL", raising=False)
    path = _write(tmp_path, {"provider": "http"})
    with pytest.raises(ValidationError):
        load_config(path)
