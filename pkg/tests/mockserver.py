"""Instrumented OpenAI-shaped chat completions mock for tests.

The server counts requests, tracks peak concurrent handlers, and records
every request body and path, so tests can assert on wire behavior. A
responder callable decides each reply from the parsed request payload
and the 1-based arrival number.

Responder return values:
  - str: served as a normal completion with that content
  - Reply(...): full control over status, headers, and raw body
"""

from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer


@dataclass
class Reply:
    status: int = 200
    body: str = ""
    headers: dict = field(default_factory=dict)


def completion_json(content: str, model: str = "mock-model") -> str:
    return json.dumps({
        "id": "chatcmpl-mock",
        "object": "chat.completion",
        "model": model,
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": content},
            "finish_reason": "stop",
        }],
        "usage": {"prompt_tokens": 7, "completion_tokens": 11,
                  "total_tokens": 18},
    })


def user_text(payload: dict) -> str:
    """The text of the last user message, multimodal parts flattened."""
    for message in reversed(payload.get("messages", [])):
        if message.get("role") != "user":
            continue
        content = message.get("content")
        if isinstance(content, str):
            return content
        parts = [p.get("text", "") for p in content
                 if isinstance(p, dict) and p.get("type") == "text"]
        return "\n".join(parts)
    return ""


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        server: MockServer = self.server  # type: ignore[assignment]
        with server.lock:
            server.inflight += 1
            server.peak_inflight = max(server.peak_inflight, server.inflight)
            server.request_count += 1
            arrival = server.request_count
        try:
            length = int(self.headers.get("Content-Length", 0))
            payload = json.loads(self.rfile.read(length) or b"{}")
            with server.lock:
                server.requests.append(payload)
                server.paths.append(self.path)
                server.auth_headers.append(self.headers.get("Authorization"))
            if server.delay:
                time.sleep(server.delay)
            reply = server.responder(payload, arrival)
            if isinstance(reply, str):
                reply = Reply(status=200, body=completion_json(reply))
        finally:
            # the gauge must drop before any response byte leaves: a client
            # that has read reply N may immediately send N+1 on a fresh
            # connection, and only this ordering keeps the peak honest
            with server.lock:
                server.inflight -= 1
        raw = reply.body.encode("utf-8")
        self.send_response(reply.status)
        for key, value in reply.headers.items():
            self.send_header(key, value)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(raw)))
        self.end_headers()
        self.wfile.write(raw)

    def log_message(self, *args):
        pass


class MockServer(ThreadingHTTPServer):
    """Context-managed mock endpoint bound to an ephemeral port."""

    daemon_threads = True

    def __init__(self, responder=None, delay: float = 0.0):
        super().__init__(("127.0.0.1", 0), _Handler)
        self.responder = responder or (lambda payload, arrival: "ok")
        self.delay = delay
        self.lock = threading.Lock()
        self.inflight = 0
        self.peak_inflight = 0
        self.request_count = 0
        self.requests: list[dict] = []
        self.paths: list[str] = []
        self.auth_headers: list[str | None] = []
        self._thread: threading.Thread | None = None

    @property
    def base_url(self) -> str:
        host, port = self.server_address[:2]
        return f"http://{host}:{port}"

    def reset_counters(self):
        with self.lock:
            self.peak_inflight = 0
            self.request_count = 0
            self.requests.clear()
            self.paths.clear()
            self.auth_headers.clear()

    def __enter__(self) -> "MockServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def __exit__(self, *exc):
        self.shutdown()
        self.server_close()
        if self._thread:
            self._thread.join(timeout=5)
        return False


def sequenced(replies) -> "callable":
    """Responder that serves replies[arrival-1], repeating the last one."""
    def responder(payload, arrival):
        index = min(arrival - 1, len(replies) - 1)
        return replies[index]
    return responder


def keyed_by_marker(scripts: dict, marker_prefix: str = "[[",
                    marker_suffix: str = "]]") -> "callable":
    """Responder scripted per problem marker embedded in the user text.

    Each key in ``scripts`` maps to a list of replies served in that
    problem's arrival order. Requests whose text lacks a known marker get
    an empty completion.
    """
    counters: dict[str, int] = {}
    lock = threading.Lock()

    def responder(payload, arrival):
        text = user_text(payload)
        start = text.find(marker_prefix)
        if start < 0:
            return ""
        end = text.find(marker_suffix, start)
        key = text[start + len(marker_prefix):end]
        if key not in scripts:
            return ""
        with lock:
            n = counters.get(key, 0)
            counters[key] = n + 1
        replies = scripts[key]
        return replies[min(n, len(replies) - 1)]

    return responder
