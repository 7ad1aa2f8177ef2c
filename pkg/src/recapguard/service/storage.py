"""Content-addressed object store for validated images.

Objects are written atomically (temp file + rename) under their SHA-256
digest, so identical uploads deduplicate and a crash mid-write leaves only a
.part file that startup cleanup removes.
"""

from __future__ import annotations

import hashlib
import os
import secrets
from pathlib import Path


class ObjectStore:
    def __init__(self, root):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.objects.mkdir(parents=True, exist_ok=True)

    def cleanup_partials(self) -> int:
        removed = 0
        for part in self.objects.rglob("*.part"):
            part.unlink(missing_ok=True)
            removed += 1
        return removed

    def _path(self, digest: str) -> Path:
        return self.objects / digest[:2] / digest

    def put(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        path = self._path(digest)
        if path.exists():
            return digest
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f"{path.name}.{secrets.token_hex(4)}.part")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        return digest

    def has(self, digest: str) -> bool:
        return self._path(digest).exists()

    def get(self, digest: str) -> bytes:
        return self._path(digest).read_bytes()

    def count(self) -> int:
        return sum(1 for p in self.objects.rglob("*") if p.is_file() and not p.name.endswith(".part"))
