"""Language-model client interface plus deterministic test doubles.

Every component that needs a completion (text curation, judge metrics,
prompt-based forecasters) talks to an `LMClient`. Production use plugs
in an HTTP client or a local model; tests use the seeded stubs here.
"""

from __future__ import annotations

import hashlib
import json
import os
import urllib.request
from dataclasses import dataclass
from typing import Callable

__all__ = [
    "DecodeParams",
    "LMClient",
    "LMClientError",
    "StubLMClient",
    "ScriptedLMClient",
    "FlakyLMClient",
    "HTTPLMClient",
]

API_KEY_ENV = "TTC_LM_API_KEY"
API_URL_ENV = "TTC_LM_API_URL"


class LMClientError(RuntimeError):
    """A completion attempt failed; callers may retry."""


@dataclass(frozen=True)
class DecodeParams:
    max_tokens: int = 256
    temperature: float = 0.0
    seed: int = 0


class LMClient:
    """Minimal completion interface.

    `max_context_chars` is the prompt budget callers must respect;
    implementations must be safe for concurrent `complete` calls or set
    `concurrent_safe = False`, in which case pipelines serialize them.
    """

    max_context_chars: int = 1 << 20
    concurrent_safe: bool = True

    def complete(self, prompt: str, params: DecodeParams | None = None) -> str:
        raise NotImplementedError


class StubLMClient(LMClient):
    """Deterministic stand-in: optional handler, else a seeded digest reply.

    The default reply is a short token stream derived from a hash of the
    prompt and the seed, so identical prompts always produce identical
    completions without any model.
    """

    def __init__(
        self,
        handler: Callable[[str], str] | None = None,
        seed: int = 0,
        max_context_chars: int = 20000,
    ):
        self.handler = handler
        self.seed = seed
        self.max_context_chars = max_context_chars
        self.calls: list[str] = []

    def complete(self, prompt: str, params: DecodeParams | None = None) -> str:
        self.calls.append(prompt)
        if self.handler is not None:
            return self.handler(prompt)
        digest = hashlib.blake2b(f"{self.seed}:{prompt}".encode(), digest_size=8).hexdigest()
        return f"stub reply {digest}"


class ScriptedLMClient(LMClient):
    """Replays a fixed queue of responses, erroring when exhausted."""

    def __init__(self, responses: list[str]):
        self._responses = list(responses)
        self.calls: list[str] = []

    def complete(self, prompt: str, params: DecodeParams | None = None) -> str:
        self.calls.append(prompt)
        if not self._responses:
            raise LMClientError("scripted client exhausted")
        return self._responses.pop(0)


class FlakyLMClient(LMClient):
    """Fails the first `failures` calls, then delegates; for retry tests."""

    def __init__(self, inner: LMClient, failures: int):
        self.inner = inner
        self.remaining_failures = failures
        self.max_context_chars = inner.max_context_chars

    def complete(self, prompt: str, params: DecodeParams | None = None) -> str:
        if self.remaining_failures > 0:
            self.remaining_failures -= 1
            raise LMClientError("injected transient failure")
        return self.inner.complete(prompt, params)


class HTTPLMClient(LMClient):
    """Chat-completions client for an OpenAI-compatible endpoint.

    Credentials come from the environment (`TTC_LM_API_KEY`, and
    `TTC_LM_API_URL` unless `url` is given). Network use is entirely
    optional; nothing in the package requires it.
    """

    def __init__(self, model: str, url: str | None = None, timeout: float = 60.0,
                 max_context_chars: int = 48000):
        self.model = model
        self.url = url or os.environ.get(API_URL_ENV, "")
        self.timeout = timeout
        self.max_context_chars = max_context_chars
        if not self.url:
            raise LMClientError(f"no endpoint URL; set {API_URL_ENV} or pass url=")

    def complete(self, prompt: str, params: DecodeParams | None = None) -> str:
        params = params or DecodeParams()
        key = os.environ.get(API_KEY_ENV, "")
        if not key:
            raise LMClientError(f"missing API key; set {API_KEY_ENV}")
        payload = json.dumps(
            {
                "model": self.model,
                "messages": [{"role": "user", "content": prompt}],
                "max_tokens": params.max_tokens,
                "temperature": params.temperature,
            }
        ).encode()
        req = urllib.request.Request(
            self.url,
            data=payload,
            headers={"Content-Type": "application/json", "Authorization": f"Bearer {key}"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode())
        except Exception as exc:  # any transport failure is retryable
            raise LMClientError(f"completion request failed: {exc}") from exc
        try:
            return body["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise LMClientError(f"malformed completion response: {body!r}") from exc
