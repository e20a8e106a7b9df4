"""Profiles and layered configuration (defaults < config file < flags)."""

from __future__ import annotations

import copy
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .controller import SessionConfig
from .drivers.live import EndpointConfig
from .induction import InductionPrompt
from .scoring import WindowConfig
from .stepper import SegmenterConfig


class ConfigError(ValueError):
    pass


DEFAULTS: dict[str, Any] = {
    "policy": "trace",
    "window": {"k": 5, "alpha": 0.7, "tau": 0.8},
    "segmenter": {"profile": "default", "scan_interval_tokens": 10, "match_limit": 1000},
    "prompt": {"max_answer_tokens": 32},
    "max_steps": 64,
    "max_total_tokens": 32768,
    "fallback": "last",
    "fixed_budget_tokens": None,
    "workers": 1,
    "driver": {
        "replay": None,
        "allow_partial": False,
        "endpoint": None,
        "model": "default",
        "top_k": 20,
        "timeout_s": 120.0,
        "max_attempts": 3,
        "api_key_env": "OPENAI_API_KEY",
        "question_template": "qwen",
        "temperature": 0.6,
    },
}

_SECRET_KEYS = {"api_key", "apikey", "token", "secret", "password"}


@lru_cache(maxsize=1)
def load_profiles() -> dict[str, Any]:
    text = resources.files("trace_exit").joinpath("profiles.yaml").read_text(encoding="utf-8")
    return yaml.safe_load(text)


def segmenter_profile(name: str, **overrides: Any) -> SegmenterConfig:
    profiles = load_profiles()["segmenter"]
    if name not in profiles:
        raise ConfigError(f"unknown segmenter profile {name!r}; available: {sorted(profiles)}")
    fields = dict(profiles[name])
    fields.update({k: v for k, v in overrides.items() if v is not None})
    fields["stop_tokens"] = tuple(fields["stop_tokens"])
    try:
        return SegmenterConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"segmenter profile {name!r}: {exc}") from exc


def question_template(name_or_template: str) -> str:
    templates = load_profiles()["question_templates"]
    if name_or_template in templates:
        return templates[name_or_template]
    if "{question}" not in name_or_template:
        raise ConfigError(f"unknown question template {name_or_template!r}")
    return name_or_template


def _merge(base: dict[str, Any], extra: dict[str, Any]) -> dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        elif val is not None:
            out[key] = val
    return out


def _check_no_secrets(obj: Any, where: str) -> None:
    if isinstance(obj, dict):
        for key, val in obj.items():
            if str(key).lower() in _SECRET_KEYS:
                raise ConfigError(f"{where}: secrets are read from the environment only (found {key!r})")
            _check_no_secrets(val, where)


def resolve_config(path: str | Path | None = None, overrides: dict[str, Any] | None = None) -> dict[str, Any]:
    """Fully resolved settings as a plain dict."""
    resolved = copy.deepcopy(DEFAULTS)
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text(encoding="utf-8")) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{p}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"{p}: top level must be a mapping")
        _check_no_secrets(loaded, str(p))
        resolved = _merge(resolved, loaded)
    if overrides:
        resolved = _merge(resolved, overrides)
    return resolved


def session_config(resolved: dict[str, Any]) -> SessionConfig:
    seg = dict(resolved["segmenter"])
    profile = seg.pop("profile", "default")
    try:
        return SessionConfig(
            window=WindowConfig(**resolved["window"]),
            segmenter=segmenter_profile(profile, **seg),
            prompt=InductionPrompt(**resolved.get("prompt", {})),
            max_steps=int(resolved["max_steps"]),
            max_total_tokens=int(resolved["max_total_tokens"]),
            policy=resolved["policy"],
            fallback=resolved["fallback"],
            fixed_budget_tokens=resolved.get("fixed_budget_tokens"),
            top_k=int(resolved["driver"]["top_k"]),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def endpoint_config(resolved: dict[str, Any]) -> EndpointConfig:
    drv = resolved["driver"]
    if not drv.get("endpoint"):
        raise ConfigError("no replay file and no endpoint configured")
    try:
        return EndpointConfig(
            base_url=drv["endpoint"],
            model=drv["model"],
            top_k=int(drv["top_k"]),
            timeout_s=float(drv["timeout_s"]),
            max_attempts=int(drv["max_attempts"]),
            api_key_env=drv["api_key_env"],
            question_template=question_template(drv["question_template"]),
            temperature=float(drv["temperature"]),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
