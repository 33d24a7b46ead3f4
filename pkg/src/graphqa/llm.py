"""Chat model clients.

ScriptedClient replays canned responses keyed by prompt template tag, which
keeps every pipeline test offline and byte-reproducible. RemoteChatClient
speaks the common chat-completions HTTP shape. Both expose
complete(messages, tag) -> str.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass

from .errors import FixtureError, InvalidArgumentError, LLMError

logger = logging.getLogger(__name__)

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})


def prompt_digest(messages: list[dict[str, str]]) -> str:
    """Short stable digest of a rendered prompt, for transcripts and traces."""
    canon = json.dumps(messages, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


@dataclass
class CallRecord:
    tag: str
    digest: str
    response: str


class ScriptedClient:
    """Replays a transcript of responses.

    Transcript entries are {"template": tag, "response": text, "repeat": n}
    with repeat defaulting to 1; "*" repeats forever. Entries sharing a tag
    are consumed in order. An entry may pin "digest" to the expected prompt
    digest; a mismatch raises with both digests so the fixture can be
    re-pinned deliberately. strict=True requires every entry to pin one.
    """

    def __init__(self, transcript: list[dict], strict: bool = False):
        self._queues: dict[str, list[dict]] = {}
        self._served: dict[str, int] = {}
        self.calls: list[CallRecord] = []
        for pos, entry in enumerate(transcript):
            tag = entry.get("template")
            if not tag or "response" not in entry:
                raise FixtureError(
                    f"transcript entry {pos} needs 'template' and 'response'"
                )
            repeat = entry.get("repeat", 1)
            if repeat != "*" and (not isinstance(repeat, int) or repeat < 1):
                raise FixtureError(
                    f"transcript entry {pos}: repeat must be a positive int or '*'"
                )
            if strict and "digest" not in entry:
                raise FixtureError(f"transcript entry {pos}: strict mode needs 'digest'")
            self._queues.setdefault(tag, []).append(
                {
                    "response": entry["response"],
                    "remaining": repeat,
                    "digest": entry.get("digest"),
                    "pos": pos,
                }
            )

    def complete(self, messages: list[dict[str, str]], tag: str | None = None) -> str:
        if not tag:
            raise InvalidArgumentError("scripted client needs a template tag")
        digest = prompt_digest(messages)
        ordinal = self._served.get(tag, 0) + 1
        queue = self._queues.get(tag)
        if not queue:
            raise FixtureError(
                f"no scripted response left for template {tag!r} "
                f"(call #{ordinal}, prompt digest {digest})"
            )
        entry = queue[0]
        if entry["digest"] is not None and entry["digest"] != digest:
            raise FixtureError(
                f"prompt drift on template {tag!r} call #{ordinal}: transcript "
                f"entry {entry['pos']} pinned digest {entry['digest']}, got {digest}"
            )
        if entry["remaining"] != "*":
            entry["remaining"] -= 1
            if entry["remaining"] == 0:
                queue.pop(0)
        self._served[tag] = ordinal
        record = CallRecord(tag=tag, digest=digest, response=entry["response"])
        self.calls.append(record)
        return record.response

    def remaining(self) -> dict[str, int]:
        """Finite responses not yet consumed, per tag. '*' entries count as 0."""
        out = {}
        for tag, queue in self._queues.items():
            total = sum(e["remaining"] for e in queue if e["remaining"] != "*")
            if total:
                out[tag] = total
        return out


def load_transcript(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, list):
        raise FixtureError(f"transcript {path} must be a JSON list")
    return data


class RemoteChatClient:
    """Chat completions over HTTP with bounded retry.

    The API key comes from the environment at call time. 429 and 5xx
    responses retry with exponential backoff; other failures raise at once.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "GRAPHQA_LLM_API_KEY",
        temperature: float = 0.0,
        attempts: int = 3,
        backoff: float = 0.5,
        timeout: float = 60.0,
        session=None,
        sleep=time.sleep,
    ):
        import requests

        if attempts < 1:
            raise InvalidArgumentError("attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.attempts = attempts
        self.backoff = backoff
        self.timeout = timeout
        self._session = session or requests.Session()
        self._sleep = sleep
        self.calls: list[CallRecord] = []

    def complete(self, messages: list[dict[str, str]], tag: str | None = None) -> str:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise LLMError(f"missing API key: set {self.api_key_env}")
        body = {
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
        }
        last_status = None
        for attempt in range(self.attempts):
            resp = self._session.post(
                f"{self.base_url}/chat/completions",
                json=body,
                headers={"Authorization": f"Bearer {key}"},
                timeout=self.timeout,
            )
            if resp.status_code == 200:
                payload = resp.json()
                try:
                    content = payload["choices"][0]["message"]["content"]
                except (KeyError, IndexError, TypeError) as exc:
                    raise LLMError(f"malformed chat response: {exc}") from exc
                self.calls.append(
                    CallRecord(tag=tag or "", digest=prompt_digest(messages), response=content)
                )
                return content
            last_status = resp.status_code
            if resp.status_code in RETRYABLE_STATUS and attempt + 1 < self.attempts:
                delay = self.backoff * (2**attempt)
                logger.warning(
                    "chat endpoint returned %d, retrying in %.1fs", resp.status_code, delay
                )
                self._sleep(delay)
                continue
            break
        raise LLMError(f"chat endpoint failed with status {last_status}")
