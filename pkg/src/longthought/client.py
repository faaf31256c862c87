"""OpenAI-compatible chat completion client with a persistent cache.

One request shape is spoken on the wire: POST {base_url}/v1/chat/completions
with model, messages, temperature, top_p, max_tokens, and n=1. Rollouts
that need distinct samples carry a rollout index which never leaves the
process; it only differentiates cache keys, so five rollouts of the same
prompt occupy five cache slots while remaining identical on the wire.

Every successful completion is written to a content-addressed disk cache
keyed by the endpoint identity, the messages, the resolved sampling
parameters, and the rollout index. A warm cache answers the same batch
again without a single network call, which is what makes re-running a
distillation stage byte-identical and free.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import requests

from .errors import EndpointUnreachable, MalformedResponse, RateLimited

log = logging.getLogger(__name__)

_RETRY_AFTER_CAP = 30.0


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False,
                      separators=(",", ":"))


@dataclass(frozen=True)
class EndpointConfig:
    """Where to send requests and how hard to try."""

    base_url: str
    model: str
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    max_retries: int = 3
    backoff_base: float = 0.5

    @property
    def completions_url(self) -> str:
        return self.base_url.rstrip("/") + "/v1/chat/completions"

    def auth_headers(self) -> dict[str, str]:
        key = os.environ.get(self.api_key_env, "")
        headers = {"Content-Type": "application/json"}
        if key:
            headers["Authorization"] = f"Bearer {key}"
        return headers


@dataclass(frozen=True)
class SamplingParams:
    """Decoding knobs. Greedy mode pins temperature to zero on the wire."""

    temperature: float = 1.0
    top_p: float = 0.95
    max_tokens: int = 8192
    mode: str = "sampling"

    def __post_init__(self):
        if self.mode not in ("sampling", "greedy"):
            raise ValueError(f"unknown sampling mode: {self.mode!r}")

    def resolved(self) -> dict:
        temperature = 0.0 if self.mode == "greedy" else self.temperature
        return {"temperature": temperature, "top_p": self.top_p,
                "max_tokens": self.max_tokens}


GREEDY = SamplingParams(mode="greedy")


@dataclass
class CompletionRequest:
    """One batch item: the messages plus which rollout slot this is."""

    messages: list = field(default_factory=list)
    rollout_index: int = 0


@dataclass(frozen=True)
class CompletionRecord:
    """One completion as returned by the endpoint (or the cache)."""

    content: str
    model: str
    finish_reason: str | None
    rollout_index: int
    cached: bool = False
    usage: dict | None = None

    def to_cache_dict(self) -> dict:
        return {"content": self.content, "model": self.model,
                "finish_reason": self.finish_reason,
                "rollout_index": self.rollout_index, "usage": self.usage}

    @classmethod
    def from_cache_dict(cls, d: dict) -> "CompletionRecord":
        return cls(content=d["content"], model=d["model"],
                   finish_reason=d.get("finish_reason"),
                   rollout_index=d.get("rollout_index", 0),
                   cached=True, usage=d.get("usage"))


def image_content_part(data: bytes, media_type: str = "image/png") -> dict:
    encoded = base64.b64encode(data).decode("ascii")
    return {"type": "image_url",
            "image_url": {"url": f"data:{media_type};base64,{encoded}"}}


def user_message(text: str, image: bytes | None = None,
                 media_type: str = "image/png") -> dict:
    """A user turn, multimodal when image bytes are given."""
    if image is None:
        return {"role": "user", "content": text}
    return {"role": "user",
            "content": [{"type": "text", "text": text},
                        image_content_part(image, media_type)]}


class CompletionCache:
    """Disk cache of completions, sharded by key prefix, atomic writes."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    @staticmethod
    def key(endpoint: EndpointConfig, messages, sampling: SamplingParams,
            rollout_index: int) -> str:
        payload = {
            "base_url": endpoint.base_url.rstrip("/"),
            "model": endpoint.model,
            "messages": list(messages),
            "params": sampling.resolved(),
            "n": 1,
            "rollout_index": rollout_index,
        }
        return hashlib.sha256(_canonical(payload).encode("utf-8")).hexdigest()

    def _path(self, key: str) -> Path:
        return self.root / key[:2] / f"{key}.json"

    def get(self, key: str) -> CompletionRecord | None:
        path = self._path(key)
        if not path.exists():
            return None
        try:
            return CompletionRecord.from_cache_dict(
                json.loads(path.read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError, KeyError):
            log.warning("dropping unreadable cache entry %s", path.name)
            return None

    def put(self, key: str, record: CompletionRecord):
        path = self._path(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{uuid.uuid4().hex}.tmp")
        tmp.write_text(_canonical(record.to_cache_dict()), encoding="utf-8")
        os.replace(tmp, path)


class InferenceClient:
    """Synchronous client with retries, caching, and bounded batch fan-out."""

    def __init__(self, endpoint: EndpointConfig,
                 cache: CompletionCache | None = None):
        self.endpoint = endpoint
        self.cache = cache
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = requests.Session()
            self._local.session = session
        return session

    def _post_once(self, body: dict) -> requests.Response:
        return self._session().post(
            self.endpoint.completions_url,
            headers=self.endpoint.auth_headers(),
            data=json.dumps(body),
            timeout=self.endpoint.timeout)

    def _post_with_retries(self, body: dict) -> dict:
        last_error: Exception | None = None
        rate_limited = False
        attempts = self.endpoint.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.endpoint.backoff_base * (2 ** (attempt - 1)))
            try:
                response = self._post_once(body)
            except requests.RequestException as exc:
                last_error = exc
                rate_limited = False
                log.debug("attempt %d transport failure: %s", attempt + 1, exc)
                continue
            if response.status_code == 429:
                rate_limited = True
                last_error = RateLimited("endpoint returned 429")
                retry_after = response.headers.get("Retry-After")
                if retry_after is not None:
                    try:
                        time.sleep(min(float(retry_after), _RETRY_AFTER_CAP))
                    except ValueError:
                        pass
                continue
            if response.status_code >= 500:
                rate_limited = False
                last_error = EndpointUnreachable(
                    f"endpoint returned {response.status_code}")
                continue
            if response.status_code != 200:
                raise MalformedResponse(
                    f"endpoint returned {response.status_code}: "
                    f"{response.text[:200]}")
            try:
                return response.json()
            except ValueError as exc:
                raise MalformedResponse(f"response is not JSON: {exc}") from exc
        if rate_limited:
            raise RateLimited(
                f"still rate limited after {attempts} attempts") from last_error
        raise EndpointUnreachable(
            f"no response after {attempts} attempts: {last_error}") from last_error

    def complete(self, messages: Sequence[dict],
                 sampling: SamplingParams | None = None,
                 rollout_index: int = 0) -> CompletionRecord:
        """One completion, served from cache when available."""
        sampling = sampling or SamplingParams()
        key = None
        if self.cache is not None:
            key = CompletionCache.key(self.endpoint, messages, sampling,
                                      rollout_index)
            hit = self.cache.get(key)
            if hit is not None:
                return hit

        body = {"model": self.endpoint.model, "messages": list(messages),
                **sampling.resolved(), "n": 1}
        payload = self._post_with_retries(body)
        try:
            choice = payload["choices"][0]
            content = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response shape: {exc}") from exc
        if not isinstance(content, str):
            raise MalformedResponse("message content is not a string")
        record = CompletionRecord(
            content=content,
            model=payload.get("model", self.endpoint.model),
            finish_reason=choice.get("finish_reason"),
            rollout_index=rollout_index,
            cached=False,
            usage=payload.get("usage"))
        if self.cache is not None and key is not None:
            self.cache.put(key, record)
        return record

    def batch_complete(self, items: Sequence[CompletionRequest],
                       sampling: SamplingParams | None = None,
                       max_inflight: int = 4) -> list:
        """Run a batch with bounded concurrency.

        Results come back in input order. A failed item contributes its
        exception at its position instead of poisoning the batch, so the
        caller decides what a partial batch means.
        """
        if max_inflight < 1:
            raise ValueError("max_inflight must be at least 1")
        if not items:
            return []
        results: list = [None] * len(items)
        with ThreadPoolExecutor(max_workers=max_inflight) as pool:
            futures = [pool.submit(self.complete, item.messages,
                                   sampling, item.rollout_index)
                       for item in items]
            for i, future in enumerate(futures):
                try:
                    results[i] = future.result()
                except Exception as exc:
                    results[i] = exc
        return results
