"""FastAPI application: image validation, gated upload, and real-time chat.

Every domain outcome of validation is an HTTP 200 body (fail-closed included)
so clients render it; 401/403/404/413/429 are reserved for transport and
policy errors. Validation processes upload bytes entirely in memory and
retains nothing; only /api/upload, after permit-token verification, persists
an object.
"""

from __future__ import annotations

import asyncio
import functools
import json
import logging
import os
import re
import time

import anyio
from fastapi import Depends, FastAPI, Form, HTTPException, Request, UploadFile, WebSocket
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from starlette.websockets import WebSocketDisconnect

from ..checkpoint import load_checkpoint
from ..detector import Model
from ..enforcement import (
    Decision,
    EnforcementConfig,
    RateLimiter,
    Reason,
    ValidationCache,
    content_digest,
    sniff_image_bytes,
    validate_upload,
    verify_permit_token,
)
from ..errors import CheckpointError, DecodeError, ImageTooSmallError
from ..imaging import decode_image_bytes, encode_jpeg
from ..imi import IMIConfig, IMIPayload, embed
from .auth import SessionStore
from .chat import ChatState, ConnectionManager
from .schemas import (
    ConversationSummary,
    HealthResponse,
    LoginRequest,
    LoginResponse,
    MessagesPage,
    ChatMessageModel,
    ProbabilitiesModel,
    SendTextRequest,
    UploadResponse,
    ValidateResponse,
)
from .settings import ServiceSettings
from .storage import ObjectStore

logger = logging.getLogger("recapguard.service")

_PREDICTION_BY_REASON = {
    Reason.CLASSIFIED_ORIGINAL: "original",
    Reason.LOW_CONFIDENCE_REVIEW: "original",
    Reason.CLASSIFIED_RECAPTURED: "recaptured",
}


class ModelHolder:
    """Shared model reference, swapped atomically on reload."""

    def __init__(self, model: Model | None = None):
        self._model = model

    def get(self) -> Model | None:
        return self._model

    def set(self, model: Model | None) -> None:
        self._model = model

    @property
    def version(self) -> str | None:
        model = self._model
        return model.version if model is not None else None


def create_app(settings: ServiceSettings, model: Model | None = None) -> FastAPI:
    settings.require_signing_key()
    app = FastAPI(title="recapguard gateway")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],  # demo posture: the client may be served from anywhere
        allow_methods=["*"],
        allow_headers=["*"],
    )

    holder = ModelHolder(model)
    if model is None and settings.model_path:
        try:
            holder.set(load_checkpoint(settings.model_path))
        except (FileNotFoundError, CheckpointError) as exc:
            logger.warning("model unavailable, failing closed: %s", exc)
    if holder.get() is not None:
        logger.info("model loaded: version=%s", holder.version)
    else:
        logger.warning("serving without a model: all validations BLOCK")

    enforcement_cfg = EnforcementConfig(
        threshold=settings.threshold,
        review_band=settings.review_band,
        max_bytes=settings.max_bytes,
        rate_limit_count=settings.rate_limit_count,
        rate_limit_window_s=settings.rate_limit_window_s,
        permit_token_ttl_s=settings.permit_token_ttl_s,
        signing_key=settings.signing_key.encode(),
    )
    limiter = RateLimiter(settings.rate_limit_count, settings.rate_limit_window_s)
    cache = ValidationCache(settings.cache_path or ":memory:")
    sessions = SessionStore(settings.users)
    store = ObjectStore(settings.storage_dir)
    removed = store.cleanup_partials()
    if removed:
        logger.info("startup cleanup removed %d orphaned temp files", removed)
    chat = ChatState()
    manager = ConnectionManager()
    inference_limiter = anyio.CapacityLimiter(os.cpu_count() or 2)

    if len(settings.users) >= 2:
        chat.create_conversation(settings.users[:2])

    app.state.holder = holder
    app.state.store = store
    app.state.chat = chat
    app.state.sessions = sessions
    app.state.settings = settings

    def current_user(request: Request) -> str:
        header = request.headers.get("authorization", "")
        token = header.removeprefix("Bearer ").strip() if header.startswith("Bearer ") else None
        username = sessions.authenticate(token)
        if username is None:
            raise HTTPException(status_code=401, detail="authentication required")
        request.state.session_token = token
        return username

    @app.post("/api/login", response_model=LoginResponse)
    def login(body: LoginRequest):
        if not sessions.known_user(body.username):
            raise HTTPException(status_code=401, detail="unknown user")
        token = sessions.issue(body.username)
        return LoginResponse(
            token=token, userId=sessions.numeric_id(body.username), username=body.username
        )

    @app.get("/api/health", response_model=HealthResponse)
    def health():
        available = holder.get() is not None and holder.get().trained
        return HealthResponse(
            status="ok",
            modelAvailable=available,
            modelVersion=holder.version,
        )

    def _validate_body(decision) -> ValidateResponse:
        probs = decision.probabilities
        return ValidateResponse(
            isValid=decision.decision == Decision.PERMIT,
            prediction=_PREDICTION_BY_REASON.get(decision.reason),
            confidence=decision.confidence,
            probabilities=(
                None if probs is None
                else ProbabilitiesModel(original=probs.p_orig, recaptured=probs.p_recap)
            ),
            reason=decision.reason.value,
            permitToken=decision.permit_token,
            modelVersion=holder.version or "unavailable",
        )

    @app.post("/api/validate-image", response_model=ValidateResponse)
    async def validate_image(file: UploadFile, username: str = Depends(current_user)):
        data = await file.read()
        declared = file.content_type or "application/octet-stream"
        run = functools.partial(
            validate_upload,
            data,
            declared,
            username,
            time.time(),
            holder.get(),
            enforcement_cfg,
            rate_limiter=limiter,
            cache=cache,
        )
        decision = await anyio.to_thread.run_sync(run, limiter=inference_limiter)
        body = _validate_body(decision)
        if decision.reason == Reason.RATE_LIMITED:
            return JSONResponse(status_code=429, content=body.model_dump())
        return body

    @app.post("/api/upload", response_model=UploadResponse)
    async def upload(
        request: Request,
        file: UploadFile,
        permitToken: str = Form(...),
        conversationId: str = Form(...),
        username: str = Depends(current_user),
    ):
        data = await file.read()
        if len(data) > settings.max_bytes:
            raise HTTPException(status_code=413, detail="file too large")
        digest = content_digest(data)
        if not verify_permit_token(permitToken, digest, time.time(), enforcement_cfg):
            raise HTTPException(status_code=403, detail="invalid, expired, or mismatched permit token")
        conv = chat.get(conversationId)
        if conv is None:
            raise HTTPException(status_code=404, detail="unknown conversation")
        if username not in conv.members:
            raise HTTPException(status_code=403, detail="not a conversation member")

        stored_bytes = data
        if settings.imi_enabled:
            def mark() -> bytes:
                img = decode_image_bytes(data)
                payload = IMIPayload(
                    user_id=sessions.numeric_id(username),
                    timestamp=int(time.time()),
                    session_id=sessions.session_number(request.state.session_token),
                )
                marked = embed(img, payload, IMIConfig(block_selection_key=settings.imi_key))
                return encode_jpeg(marked, 95)

            try:
                stored_bytes = await anyio.to_thread.run_sync(mark, limiter=inference_limiter)
            except (ImageTooSmallError, DecodeError) as exc:
                # traceability is mandatory when the hook is on; never store unmarked
                raise HTTPException(status_code=422, detail=f"cannot embed identifier: {exc}")

        object_digest = store.put(stored_bytes)
        image_url = f"/images/{object_digest}"
        msg = chat.post_message(conversationId, username, "image", image_url=image_url)
        manager.broadcast(conv.members, {"type": "message", "payload": msg.to_payload()})
        return UploadResponse(imageUrl=image_url)

    @app.post("/api/messages", response_model=ChatMessageModel)
    def send_text(body: SendTextRequest, username: str = Depends(current_user)):
        conv = chat.get(body.conversationId)
        if conv is None:
            raise HTTPException(status_code=404, detail="unknown conversation")
        if username not in conv.members:
            raise HTTPException(status_code=403, detail="not a conversation member")
        msg = chat.post_message(body.conversationId, username, "text", body=body.body)
        manager.broadcast(conv.members, {"type": "message", "payload": msg.to_payload()})
        return ChatMessageModel(**msg.to_payload())

    @app.get("/api/conversations")
    def conversations(cursor: int = 0, limit: int = 50,
                      username: str = Depends(current_user)):
        out = []
        ordered = chat.list_for_user(username)  # newest activity first
        for conv in ordered[max(cursor, 0):max(cursor, 0) + limit]:
            last = conv.messages[-1] if conv.messages else None
            preview = None
            if last is not None:
                preview = last.body if last.kind == "text" else "[image]"
            out.append(
                ConversationSummary(
                    conversationId=conv.conversation_id,
                    members=list(conv.members),
                    preview=preview,
                    lastActivity=last.sent_at if last else conv.created_at,
                )
            )
        return out

    @app.get("/api/conversations/{conversation_id}/messages", response_model=MessagesPage)
    def messages(conversation_id: str, cursor: int = 0, limit: int = 50,
                 username: str = Depends(current_user)):
        conv = chat.get(conversation_id)
        if conv is None:
            raise HTTPException(status_code=404, detail="unknown conversation")
        if username not in conv.members:
            raise HTTPException(status_code=403, detail="not a conversation member")
        page, next_cursor = chat.messages_page(conversation_id, max(cursor, 0), limit)
        return MessagesPage(
            messages=[ChatMessageModel(**m.to_payload()) for m in page],
            nextCursor=next_cursor,
        )

    @app.get("/images/{digest}")
    def get_image(digest: str):
        if not re.fullmatch(r"[0-9a-f]{64}", digest) or not store.has(digest):
            raise HTTPException(status_code=404, detail="no such object")
        data = store.get(digest)
        return Response(content=data, media_type=sniff_image_bytes(data) or "application/octet-stream")

    async def _pump(ws: WebSocket, queue: asyncio.Queue):
        while True:
            event = await queue.get()
            await ws.send_json(event)

    @app.websocket("/ws")
    async def websocket_endpoint(ws: WebSocket):
        username = sessions.authenticate(ws.query_params.get("token"))
        if username is None:
            await ws.close(code=1008)
            return
        await ws.accept()
        queue = manager.register(username, ws)
        pump_task = asyncio.create_task(_pump(ws, queue))
        try:
            while True:
                frame = await ws.receive()
                if frame.get("type") == "websocket.disconnect":
                    break
                text = frame.get("text")
                if text is None:
                    await ws.close(code=1003)  # binary frames unsupported
                    break
                try:
                    json.loads(text)
                except json.JSONDecodeError:
                    await ws.close(code=1003)
                    break
                # client frames are keepalives; no commands are defined
        except WebSocketDisconnect:
            pass
        finally:
            pump_task.cancel()
            manager.unregister(ws)

    return app
