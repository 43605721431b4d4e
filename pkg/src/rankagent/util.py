"""Small shared helpers: stable hashing, JSONL io, HTTP retry."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path
from typing import Any, Iterable, Iterator

import requests


def stable_hash(*parts: Any) -> int:
    """Deterministic 63-bit hash of the given parts (independent of PYTHONHASHSEED)."""
    text = ":".join(str(p) for p in parts)
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    """JSON with sorted keys and no whitespace noise, for hashing."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def write_jsonl(path: str | Path, records: Iterable[dict]) -> int:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
            n += 1
    return n


def read_jsonl(path: str | Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                yield json.loads(line)


class TransportError(RuntimeError):
    """A remote endpoint stayed unreachable after bounded retries."""


def post_json_with_retry(
    url: str,
    payload: dict,
    headers: dict | None = None,
    attempts: int = 3,
    backoff: float = 0.5,
    max_backoff: float = 8.0,
    timeout: float = 30.0,
) -> dict:
    """POST JSON, retrying transient failures with capped exponential backoff."""
    last_err: Exception | None = None
    for attempt in range(attempts):
        try:
            resp = requests.post(url, json=payload, headers=headers or {}, timeout=timeout)
            if resp.status_code >= 500:
                raise requests.RequestException(f"server error {resp.status_code}")
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as exc:
            last_err = exc
            if attempt + 1 < attempts:
                time.sleep(min(backoff * (2**attempt), max_backoff))
    raise TransportError(f"request to {url} failed after {attempts} attempts: {last_err}")
