"""Opaque bearer tokens backed by a server-side session table."""

from __future__ import annotations

import hashlib
import secrets
import threading


class SessionStore:
    def __init__(self, usernames):
        self._users = {name: idx + 1 for idx, name in enumerate(usernames)}
        self._sessions = {}
        self._lock = threading.Lock()

    def known_user(self, username: str) -> bool:
        return username in self._users

    def numeric_id(self, username: str) -> int:
        return self._users[username]

    def usernames(self):
        return list(self._users)

    def issue(self, username: str) -> str:
        token = secrets.token_urlsafe(24)
        with self._lock:
            self._sessions[token] = username
        return token

    def authenticate(self, token: str | None) -> str | None:
        if not token:
            return None
        with self._lock:
            return self._sessions.get(token)

    def session_number(self, token: str) -> int:
        """Stable 16-bit session identifier derived from the bearer token."""
        digest = hashlib.sha256(token.encode()).digest()
        return int.from_bytes(digest[:2], "big")
