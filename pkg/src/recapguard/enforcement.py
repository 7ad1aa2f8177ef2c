"""On-device upload enforcement: pre-validation, classification, fail-closed
policy, decision caching, rate limiting, and permit tokens.

Every failure mode maps to a BLOCK-family decision; callers never see an
exception from validate_upload. An image may only reach storage with a
valid, unexpired permit token bound to the exact bytes that passed
validation.
"""

from __future__ import annotations

import base64
import binascii
import hashlib
import hmac
import json
import sqlite3
import threading
import time
from collections import defaultdict, deque
from dataclasses import dataclass
from enum import Enum

from .detector import Model, ProbabilityPair, predict
from .errors import ConfigError, DecodeError, ModelUnavailableError
from .imaging import decode_image_bytes


class Decision(str, Enum):
    PERMIT = "PERMIT"
    BLOCK = "BLOCK"
    REVIEW = "REVIEW"


class Reason(str, Enum):
    CLASSIFIED_ORIGINAL = "classified_original"
    CLASSIFIED_RECAPTURED = "classified_recaptured"
    MODEL_UNAVAILABLE = "model_unavailable"
    INVALID_TYPE = "invalid_type"
    TOO_LARGE = "too_large"
    RATE_LIMITED = "rate_limited"
    LOW_CONFIDENCE_REVIEW = "low_confidence_review"


@dataclass
class EnforcementConfig:
    threshold: float = 0.5
    review_band: float = 0.8
    max_bytes: int = 10 * 1024 * 1024
    allowed_mime_prefix: str = "image/"
    rate_limit_count: int = 10
    rate_limit_window_s: float = 60.0
    fail_closed: bool = True
    permit_token_ttl_s: float = 60.0
    signing_key: bytes = b""

    def __post_init__(self):
        if isinstance(self.signing_key, str):
            self.signing_key = self.signing_key.encode()
        if not 0.0 <= self.threshold <= 1.0 or not 0.0 <= self.review_band <= 1.0:
            raise ConfigError("threshold and review_band must be in [0, 1]")
        if self.threshold > self.review_band:
            raise ConfigError("threshold must not exceed review_band")
        if self.max_bytes <= 0:
            raise ConfigError("max_bytes must be positive")
        if self.rate_limit_count < 1 or self.rate_limit_window_s <= 0:
            raise ConfigError("rate limit must allow at least one request")
        if not self.fail_closed:
            raise ConfigError("the fail-closed policy may not be disabled")
        if not self.signing_key:
            raise ConfigError("signing_key must be configured")


@dataclass
class EnforcementDecision:
    decision: Decision
    reason: Reason
    content_hash: str
    confidence: float | None = None
    probabilities: ProbabilityPair | None = None
    permit_token: str | None = None

    def __post_init__(self):
        if (self.permit_token is not None) != (self.decision == Decision.PERMIT):
            raise ConfigError("permit_token present iff decision is PERMIT")
        if self.reason == Reason.MODEL_UNAVAILABLE and self.decision != Decision.BLOCK:
            raise ConfigError("model_unavailable decisions must BLOCK")


class RateLimiter:
    """Sliding-window per-user limiter; accepted requests are recorded,
    denied ones are not."""

    def __init__(self, limit: int = 10, window_s: float = 60.0):
        self.limit = limit
        self.window_s = window_s
        self._windows = defaultdict(deque)
        self._lock = threading.Lock()

    def allow(self, user_id: str, now: float) -> bool:
        with self._lock:
            window = self._windows[user_id]
            cutoff = now - self.window_s
            while window and window[0] <= cutoff:
                window.popleft()
            if len(window) >= self.limit:
                return False
            window.append(now)
            return True


class ValidationCache:
    """SQLite-backed LRU of validation outcomes keyed by content hash.

    Entries are only served while the stored model version matches the
    currently loaded model; storage errors degrade to a cache miss.
    """

    def __init__(self, path=":memory:", capacity: int = 10_000):
        self.capacity = capacity
        self._lock = threading.Lock()
        self._conn = sqlite3.connect(str(path), check_same_thread=False)
        with self._conn:
            self._conn.execute(
                "CREATE TABLE IF NOT EXISTS validations ("
                " content_hash TEXT PRIMARY KEY,"
                " model_version TEXT NOT NULL,"
                " snapshot TEXT NOT NULL,"
                " created_at REAL NOT NULL,"
                " last_used REAL NOT NULL)"
            )

    def get(self, content_hash: str, model_version: str | None) -> dict | None:
        if model_version is None:
            return None
        try:
            with self._lock, self._conn:
                row = self._conn.execute(
                    "SELECT model_version, snapshot FROM validations WHERE content_hash = ?",
                    (content_hash,),
                ).fetchone()
                if row is None or row[0] != model_version:
                    return None
                self._conn.execute(
                    "UPDATE validations SET last_used = ? WHERE content_hash = ?",
                    (time.time(), content_hash),
                )
                return json.loads(row[1])
        except (sqlite3.Error, json.JSONDecodeError):
            return None

    def put(self, content_hash: str, model_version: str, snapshot: dict) -> None:
        try:
            with self._lock, self._conn:
                self._conn.execute(
                    "INSERT OR REPLACE INTO validations VALUES (?, ?, ?, ?, ?)",
                    (content_hash, model_version, json.dumps(snapshot), time.time(), time.time()),
                )
                self._conn.execute(
                    "DELETE FROM validations WHERE content_hash IN ("
                    " SELECT content_hash FROM validations"
                    " ORDER BY last_used DESC LIMIT -1 OFFSET ?)",
                    (self.capacity,),
                )
        except sqlite3.Error:
            pass

    def close(self) -> None:
        self._conn.close()


def content_digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def issue_permit_token(content_hash: str, now: float, cfg: EnforcementConfig) -> str:
    """MAC-authenticated grant binding (content hash, expiry)."""
    expiry_ms = int((now + cfg.permit_token_ttl_s) * 1000)
    payload = f"{content_hash}:{expiry_ms}".encode()
    mac = hmac.new(cfg.signing_key, payload, hashlib.sha256).hexdigest()
    return base64.urlsafe_b64encode(payload).decode().rstrip("=") + "." + mac


def verify_permit_token(token: str, content_hash: str, now: float,
                        cfg: EnforcementConfig) -> bool:
    """True only for an untampered, unexpired token over this exact hash.
    Every failure mode returns False; nothing raises."""
    try:
        payload_b64, mac = token.split(".", 1)
        payload = base64.urlsafe_b64decode(payload_b64 + "=" * (-len(payload_b64) % 4))
        expected = hmac.new(cfg.signing_key, payload, hashlib.sha256).hexdigest()
        if not hmac.compare_digest(mac, expected):
            return False
        token_hash, expiry_ms = payload.decode().rsplit(":", 1)
        if not hmac.compare_digest(token_hash, content_hash):
            return False
        return now * 1000 < int(expiry_ms)
    except (ValueError, binascii.Error, UnicodeDecodeError):
        return False


_JPEG_MAGIC = b"\xff\xd8\xff"
_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def sniff_image_bytes(data: bytes) -> str | None:
    if data.startswith(_JPEG_MAGIC):
        return "image/jpeg"
    if data.startswith(_PNG_MAGIC):
        return "image/png"
    return None


def _snapshot(decision: EnforcementDecision) -> dict:
    return {
        "decision": decision.decision.value,
        "reason": decision.reason.value,
        "confidence": decision.confidence,
        "probabilities": (
            None
            if decision.probabilities is None
            else [decision.probabilities.p_orig, decision.probabilities.p_recap]
        ),
    }


def _from_snapshot(snapshot: dict, content_hash: str, now: float,
                   cfg: EnforcementConfig) -> EnforcementDecision:
    probs = snapshot.get("probabilities")
    decision = Decision(snapshot["decision"])
    token = issue_permit_token(content_hash, now, cfg) if decision == Decision.PERMIT else None
    return EnforcementDecision(
        decision=decision,
        reason=Reason(snapshot["reason"]),
        content_hash=content_hash,
        confidence=snapshot.get("confidence"),
        probabilities=None if probs is None else ProbabilityPair(probs[0], probs[1]),
        permit_token=token,
    )


def validate_upload(data: bytes, declared_mime: str, user_id: str, now: float,
                    model: Model | None, cfg: EnforcementConfig,
                    rate_limiter: RateLimiter | None = None,
                    cache: ValidationCache | None = None) -> EnforcementDecision:
    """Run the full enforcement pipeline over untrusted upload bytes.

    Order: rate limit, MIME prefix + magic sniff, size cap, cache lookup,
    fail-closed model check, classification against the threshold, and the
    manual-review band on the permit side. Classification outcomes are
    cached under the current model version; disclosed confidences are
    rounded to two decimals. Decoded pixels never outlive this call.
    """
    content_hash = content_digest(data)

    def blocked(reason: Reason) -> EnforcementDecision:
        return EnforcementDecision(Decision.BLOCK, reason, content_hash)

    if rate_limiter is not None and not rate_limiter.allow(user_id, now):
        return blocked(Reason.RATE_LIMITED)
    if not declared_mime.startswith(cfg.allowed_mime_prefix) or sniff_image_bytes(data) is None:
        return blocked(Reason.INVALID_TYPE)
    if len(data) > cfg.max_bytes:
        return blocked(Reason.TOO_LARGE)

    if cache is not None and model is not None and model.trained:
        snapshot = cache.get(content_hash, model.version)
        if snapshot is not None:
            return _from_snapshot(snapshot, content_hash, now, cfg)

    if model is None or not model.trained:
        return blocked(Reason.MODEL_UNAVAILABLE)

    try:
        img = decode_image_bytes(data)
    except DecodeError:
        return blocked(Reason.INVALID_TYPE)

    try:
        result = predict(model, img, threshold=cfg.threshold)
    except ModelUnavailableError:
        return blocked(Reason.MODEL_UNAVAILABLE)

    pair = ProbabilityPair(
        round(result.probabilities.p_orig, 2), round(result.probabilities.p_recap, 2)
    )
    confidence = round(result.confidence, 2)

    if result.probabilities.p_recap > cfg.threshold:
        decision = EnforcementDecision(
            Decision.BLOCK, Reason.CLASSIFIED_RECAPTURED, content_hash,
            confidence=confidence, probabilities=pair,
        )
    elif result.confidence <= cfg.review_band:
        decision = EnforcementDecision(
            Decision.REVIEW, Reason.LOW_CONFIDENCE_REVIEW, content_hash,
            confidence=confidence, probabilities=pair,
        )
    else:
        decision = EnforcementDecision(
            Decision.PERMIT, Reason.CLASSIFIED_ORIGINAL, content_hash,
            confidence=confidence, probabilities=pair,
            permit_token=issue_permit_token(content_hash, now, cfg),
        )

    if cache is not None:
        cache.put(content_hash, model.version, _snapshot(decision))
    return decision
