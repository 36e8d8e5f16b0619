"""Service layer: session configuration, CLI, and HTTP API."""

from .session import Session, SessionConfig

__all__ = ["Session", "SessionConfig"]
