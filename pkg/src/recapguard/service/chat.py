"""In-memory conversations, message history, and WebSocket fan-out."""

from __future__ import annotations

import asyncio
import itertools
import threading
import time
from dataclasses import dataclass, field


@dataclass
class ChatMessage:
    message_id: str
    conversation_id: str
    sender_id: str
    kind: str  # "text" | "image"
    body: str | None
    image_url: str | None
    sent_at: float

    def to_payload(self) -> dict:
        return {
            "messageId": self.message_id,
            "conversationId": self.conversation_id,
            "senderId": self.sender_id,
            "kind": self.kind,
            "body": self.body,
            "imageUrl": self.image_url,
            "sentAt": self.sent_at,
        }


@dataclass
class Conversation:
    conversation_id: str
    members: tuple
    created_at: float
    messages: list = field(default_factory=list)


class ChatState:
    def __init__(self):
        self._conversations = {}
        self._counter = itertools.count(1)
        self._lock = threading.Lock()

    def create_conversation(self, members) -> Conversation:
        with self._lock:
            cid = f"c{next(self._counter)}"
            conv = Conversation(conversation_id=cid, members=tuple(members), created_at=time.time())
            self._conversations[cid] = conv
            return conv

    def get(self, conversation_id: str) -> Conversation | None:
        return self._conversations.get(conversation_id)

    def post_message(self, conversation_id: str, sender_id: str, kind: str,
                     body: str | None = None, image_url: str | None = None) -> ChatMessage:
        with self._lock:
            conv = self._conversations[conversation_id]
            msg = ChatMessage(
                message_id=f"m{next(self._counter)}",
                conversation_id=conversation_id,
                sender_id=sender_id,
                kind=kind,
                body=body,
                image_url=image_url,
                sent_at=time.time(),
            )
            conv.messages.append(msg)
            return msg

    def list_for_user(self, username: str) -> list:
        convs = [c for c in self._conversations.values() if username in c.members]

        def latest(conv):
            return conv.messages[-1].sent_at if conv.messages else conv.created_at

        return sorted(convs, key=latest, reverse=True)

    def messages_page(self, conversation_id: str, cursor: int, limit: int):
        """Newest-first page; a cursor past the end yields an empty page."""
        conv = self._conversations[conversation_id]
        ordered = list(reversed(conv.messages))
        page = ordered[cursor:cursor + limit]
        next_cursor = cursor + len(page) if cursor + len(page) < len(ordered) else None
        return page, next_cursor


class ConnectionManager:
    """Per-connection bounded queues; slow consumers drop events instead of
    blocking the broadcast path."""

    QUEUE_SIZE = 100

    def __init__(self):
        self._connections = {}  # id(ws) -> (username, queue)
        self._lock = threading.Lock()

    def register(self, username: str, ws) -> asyncio.Queue:
        queue = asyncio.Queue(maxsize=self.QUEUE_SIZE)
        with self._lock:
            self._connections[id(ws)] = (username, queue)
        return queue

    def unregister(self, ws) -> None:
        with self._lock:
            self._connections.pop(id(ws), None)

    def broadcast(self, members, event: dict) -> int:
        """Enqueue the event for every connected member; returns deliveries."""
        delivered = 0
        with self._lock:
            targets = [q for (user, q) in self._connections.values() if user in members]
        for queue in targets:
            try:
                queue.put_nowait(event)
                delivered += 1
            except asyncio.QueueFull:
                pass
        return delivered
