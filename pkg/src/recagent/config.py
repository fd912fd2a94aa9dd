"""Service configuration: JSON file in, validated dataclasses out.

The API key is intentionally NOT part of this schema; HTTP providers read it
from the RECAGENT_API_KEY environment variable only.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .gateway import API_KEY_ENV

PROVIDER_HTTP = "http"
PROVIDER_SCRIPTED = "scripted"


@dataclass
class ProviderConfig:
    type: str = PROVIDER_SCRIPTED
    base_url: str = ""
    model: str = ""
    timeout: float = 60.0
    script_path: str = ""


@dataclass
class EvalConfig:
    simulator_sessions: int = 50
    one_turn_cases: int = 50
    lifelong_sessions: int = 10


@dataclass
class ServiceConfig:
    items_csv: str = ""
    interactions_csv: str = ""
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    char_budget: int = 12000
    max_rechains: int = 2
    demo_store_path: str = ""
    item_noun: str = "game"
    eval: EvalConfig = field(default_factory=EvalConfig)
    listen: str = "127.0.0.1:8080"
    model_cache: str = ""
    static_dir: str = ""

    def validate(self) -> None:
        for label, path in (
            ("items_csv", self.items_csv),
            ("interactions_csv", self.interactions_csv),
        ):
            if path and not Path(path).exists():
                raise ConfigError(f"{label} does not exist: {path}")
        for label, path in (
            ("demo_store_path", self.demo_store_path),
            ("model_cache", self.model_cache),
            ("static_dir", self.static_dir),
        ):
            if path and not Path(path).exists():
                raise ConfigError(f"{label} does not exist: {path}")
        if self.provider.type not in (PROVIDER_HTTP, PROVIDER_SCRIPTED):
            raise ConfigError(f"unknown provider type: {self.provider.type}")
        if self.provider.type == PROVIDER_HTTP:
            if not self.provider.base_url:
                raise ConfigError("http provider requires base_url")
            if not os.environ.get(API_KEY_ENV):
                raise ConfigError(
                    f"http provider configured but {API_KEY_ENV} is not set in the environment"
                )
        if self.provider.type == PROVIDER_SCRIPTED and self.provider.script_path:
            if not Path(self.provider.script_path).exists():
                raise ConfigError(f"script_path does not exist: {self.provider.script_path}")


def load_config(path: str) -> ServiceConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    provider = ProviderConfig(**data.get("provider", {}))
    eval_cfg = EvalConfig(**data.get("eval", {}))
    known = {
        k: v for k, v in data.items() if k not in ("provider", "eval")
    }
    unknown = set(known) - {f for f in ServiceConfig.__dataclass_fields__}
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    config = ServiceConfig(provider=provider, eval=eval_cfg, **known)
    return config
