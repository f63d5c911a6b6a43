"""Engine configuration: JSON file plus environment-variable overrides.

Secrets (API keys) never live in the file; they come from DOCQL_API_KEY.
Provider and embedder URLs may come from DOCQL_PROVIDER_URL / DOCQL_MODEL /
DOCQL_EMBEDDER_URL when not set explicitly.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ValidationError


@dataclass
class Config:
    corpus: str = "corpus.jsonl"
    schema: str = "tables.json"
    sidecar: str | None = None  # mock provider truth file
    provider: str = "mock"  # mock | http
    provider_url: str | None = None
    model: str | None = None
    embedder: str = "hash"  # hash | http
    embedder_url: str | None = None
    dim: int = 256
    sample_rate: float = 0.05
    evidence_k: int = 3
    initial_tau: float = 1.2
    default_gamma: float = 0.5
    merge_threshold: float = 0.75
    seed: int = 0
    budget: int | None = None
    workers: int = 1
    out_dir: str = "out"

    def validate(self) -> None:
        if not (0.0 < self.sample_rate <= 1.0):
            raise ValidationError(f"sample_rate {self.sample_rate} outside (0, 1]")
        if self.evidence_k < 1:
            raise ValidationError("evidence_k must be >= 1")
        if self.dim < 8:
            raise ValidationError("embedding dim must be >= 8")
        if self.provider not in ("mock", "http"):
            raise ValidationError(f"unknown provider {self.provider!r}")
        if self.provider == "mock" and not self.sidecar:
            raise ValidationError("mock provider needs a sidecar truth file")
        if self.provider == "http" and not (self.provider_url or os.environ.get("DOCQL_PROVIDER_URL")):
            raise ValidationError("http provider needs provider_url or DOCQL_PROVIDER_URL")
        if self.embedder not in ("hash", "http"):
            raise ValidationError(f"unknown embedder {self.embedder!r}")
        if self.workers < 1:
            raise ValidationError("workers must be >= 1")

    @property
    def index_dir(self) -> Path:
        return Path(self.out_dir) / "index"


def load_config(path: str | Path) -> Config:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON: {exc}") from exc
    known = {f.name for f in fields(Config)}
    unknown = set(payload) - known
    if unknown:
        raise ValidationError(f"{path}: unknown config keys: {sorted(unknown)}")
    config = Config(**payload)
    config.provider_url = config.provider_url or os.environ.get("DOCQL_PROVIDER_URL")
    config.model = config.model or os.environ.get("DOCQL_MODEL")
    config.embedder_url = config.embedder_url or os.environ.get("DOCQL_EMBEDDER_URL")
    config.validate()
    return config


def save_config(config: Config, path: str | Path) -> None:
    payload = {
        f.name: getattr(config, f.name)
        for f in fields(Config)
        if getattr(config, f.name) is not None
    }
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
