"""Service configuration; environment variables override provided values."""

from __future__ import annotations

import os
from dataclasses import dataclass, replace

from ..errors import ConfigError

ENV_PREFIX = "RECAPGUARD_"


@dataclass
class ServiceSettings:
    bind: str = "127.0.0.1:8000"
    model_path: str | None = None
    signing_key: str = ""
    threshold: float = 0.5
    review_band: float = 0.8
    max_bytes: int = 10 * 1024 * 1024
    rate_limit_count: int = 10
    rate_limit_window_s: float = 60.0
    permit_token_ttl_s: float = 60.0
    imi_enabled: bool = False
    imi_key: int = 0
    storage_dir: str = "./recapguard-data"
    cache_path: str | None = None  # None: in-memory cache
    users: tuple = ("alice", "bob")

    def __post_init__(self):
        self.users = tuple(self.users)
        if not self.users:
            raise ConfigError("at least one demo user must be configured")

    def require_signing_key(self) -> None:
        if not self.signing_key:
            raise ConfigError("a signing key is required (RECAPGUARD_SIGNING_KEY)")


def _env(name: str) -> str | None:
    return os.environ.get(ENV_PREFIX + name)


def _env_bool(name: str) -> bool | None:
    raw = _env(name)
    if raw is None:
        return None
    return raw.strip().lower() in ("1", "true", "yes", "on")


def apply_env_overrides(settings: ServiceSettings) -> ServiceSettings:
    """Environment variables win over flags for every serve option."""
    updates = {}
    if _env("BIND") is not None:
        updates["bind"] = _env("BIND")
    if _env("MODEL") is not None:
        updates["model_path"] = _env("MODEL")
    if _env("SIGNING_KEY") is not None:
        updates["signing_key"] = _env("SIGNING_KEY")
    if _env("THRESHOLD") is not None:
        updates["threshold"] = float(_env("THRESHOLD"))
    if _env("REVIEW_BAND") is not None:
        updates["review_band"] = float(_env("REVIEW_BAND"))
    if _env("MAX_BYTES") is not None:
        updates["max_bytes"] = int(_env("MAX_BYTES"))
    if _env("RATE_LIMIT") is not None:
        updates["rate_limit_count"] = int(_env("RATE_LIMIT"))
    if _env("RATE_WINDOW_S") is not None:
        updates["rate_limit_window_s"] = float(_env("RATE_WINDOW_S"))
    if _env("TOKEN_TTL_S") is not None:
        updates["permit_token_ttl_s"] = float(_env("TOKEN_TTL_S"))
    if _env_bool("IMI") is not None:
        updates["imi_enabled"] = _env_bool("IMI")
    if _env("IMI_KEY") is not None:
        updates["imi_key"] = int(_env("IMI_KEY"))
    if _env("STORAGE_DIR") is not None:
        updates["storage_dir"] = _env("STORAGE_DIR")
    if _env("CACHE_PATH") is not None:
        updates["cache_path"] = _env("CACHE_PATH")
    if _env("USERS") is not None:
        updates["users"] = tuple(u.strip() for u in _env("USERS").split(",") if u.strip())
    return replace(settings, **updates) if updates else settings
