"""HTTP/WebSocket validation gateway wrapping the core package."""

from .app import create_app
from .settings import ServiceSettings

__all__ = ["create_app", "ServiceSettings"]
