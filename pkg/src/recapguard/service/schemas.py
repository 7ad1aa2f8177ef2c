"""Pydantic request/response models; field names are the wire contract."""

from __future__ import annotations

from pydantic import BaseModel


class LoginRequest(BaseModel):
    username: str


class LoginResponse(BaseModel):
    token: str
    userId: int
    username: str


class HealthResponse(BaseModel):
    status: str
    modelAvailable: bool
    modelVersion: str | None


class ProbabilitiesModel(BaseModel):
    original: float
    recaptured: float


class ValidateResponse(BaseModel):
    isValid: bool
    prediction: str | None
    confidence: float | None
    probabilities: ProbabilitiesModel | None
    reason: str
    permitToken: str | None
    modelVersion: str


class UploadResponse(BaseModel):
    imageUrl: str


class ChatMessageModel(BaseModel):
    messageId: str
    conversationId: str
    senderId: str
    kind: str
    body: str | None
    imageUrl: str | None
    sentAt: float


class ConversationSummary(BaseModel):
    conversationId: str
    members: list[str]
    preview: str | None
    lastActivity: float


class MessagesPage(BaseModel):
    messages: list[ChatMessageModel]
    nextCursor: int | None


class SendTextRequest(BaseModel):
    conversationId: str
    body: str
