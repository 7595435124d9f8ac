from __future__ import annotations

import hashlib
import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Any

log = logging.getLogger(__name__)


def cache_key(backend_id: str, template_id: str, slot_digest: str, attachment_digest: str = "") -> str:
    raw = "\x1f".join((backend_id, template_id, slot_digest, attachment_digest))
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()


class ResponseCache:
    """One JSON file per key under ``directory``; writes are atomic renames (last writer wins)."""

    def __init__(self, directory: str | os.PathLike):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def lookup(self, key: str) -> dict[str, Any] | None:
        path = self._path(key)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            return None
        except (OSError, ValueError) as exc:
            log.warning("cache entry %s unreadable, treating as miss: %s", path.name, exc)
            return None
        if not isinstance(data, dict) or data.get("key") != key or "response" not in data:
            log.warning("cache entry %s corrupt, treating as miss", path.name)
            return None
        return data

    def store(self, key: str, response: Any, **metadata: Any) -> None:
        payload = {"key": key, "response": response, **metadata}
        fd, tmp = tempfile.mkstemp(dir=self.directory, prefix=".tmp-", suffix=".json")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, ensure_ascii=False, sort_keys=True)
            os.replace(tmp, self._path(key))
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
