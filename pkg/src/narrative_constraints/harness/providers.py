"""Model providers: live HTTP vendors and a record/replay cassette store.

Every provider implements ``complete(request) -> ProviderResponse``. Live
providers read credentials from environment variables only.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Protocol, Sequence

import httpx


class ProviderError(RuntimeError):
    def __init__(self, message: str, retryable: bool = True):
        super().__init__(message)
        self.retryable = retryable


class CassetteMiss(ProviderError):
    def __init__(self, key: str):
        super().__init__(f"no cassette recorded for request {key}", retryable=False)
        self.key = key


@dataclass
class ProviderRequest:
    model: str
    system_text: str
    user_text: str
    decoding: dict
    seed: int = 0
    condition: Any = None
    candidates: Sequence = ()

    def cassette_key(self) -> str:
        payload = json.dumps(
            {"system": self.system_text, "user": self.user_text, "decoding": self.decoding, "model": self.model},
            sort_keys=True, ensure_ascii=False,
        )
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass
class ProviderResponse:
    text: str
    meta: dict = field(default_factory=dict)


class ModelProvider(Protocol):
    name: str

    def complete(self, request: ProviderRequest) -> ProviderResponse: ...


def _credential(env_var: str) -> str:
    value = os.environ.get(env_var)
    if not value:
        raise ProviderError(f"environment variable {env_var} is not set", retryable=False)
    return value


class _HTTPProvider:
    name = "http"
    default_base_url = ""
    api_key_env = ""

    def __init__(self, base_url: str | None = None, api_key_env: str | None = None, timeout: float = 600.0,
                 client: httpx.Client | None = None, max_tokens: int | None = None):
        self.base_url = (base_url or self.default_base_url).rstrip("/")
        self.api_key_env = api_key_env or self.api_key_env
        self.max_tokens = max_tokens
        self._client = client or httpx.Client(timeout=timeout)

    def _post(self, url: str, headers: dict, body: dict, params: dict | None = None) -> dict:
        started = time.perf_counter()
        try:
            resp = self._client.post(url, headers=headers, json=body, params=params)
        except httpx.TimeoutException as exc:
            raise ProviderError(f"{self.name}: request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise ProviderError(f"{self.name}: transport error: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise ProviderError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise ProviderError(f"{self.name}: HTTP {resp.status_code}: {resp.text[:200]}", retryable=False)
        data = resp.json()
        data["_latency_s"] = time.perf_counter() - started
        return data


class OpenAIChatProvider(_HTTPProvider):
    """OpenAI-compatible chat completions (also serves OpenAI-compatible vendor endpoints)."""

    name = "openai"
    default_base_url = "https://api.openai.com/v1"
    api_key_env = "OPENAI_API_KEY"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        key = _credential(self.api_key_env)
        body = {
            "model": request.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": request.user_text},
            ],
            **request.decoding,
        }
        if self.max_tokens:
            body["max_completion_tokens"] = self.max_tokens
        data = self._post(f"{self.base_url}/chat/completions", {"Authorization": f"Bearer {key}"}, body)
        try:
            text = data["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected response shape", retryable=False) from exc
        return ProviderResponse(text, {"latency_s": data["_latency_s"], "usage": data.get("usage", {})})


class AnthropicProvider(_HTTPProvider):
    name = "anthropic"
    default_base_url = "https://api.anthropic.com/v1"
    api_key_env = "ANTHROPIC_API_KEY"
    api_version = "2023-06-01"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        key = _credential(self.api_key_env)
        body = {
            "model": request.model,
            "system": request.system_text,
            "messages": [{"role": "user", "content": request.user_text}],
            "max_tokens": self.max_tokens or 16000,
            **request.decoding,
        }
        headers = {"x-api-key": key, "anthropic-version": self.api_version}
        data = self._post(f"{self.base_url}/messages", headers, body)
        try:
            text = "".join(block.get("text", "") for block in data["content"] if block.get("type") == "text")
        except (KeyError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected response shape", retryable=False) from exc
        return ProviderResponse(text, {"latency_s": data["_latency_s"], "usage": data.get("usage", {})})


class GeminiProvider(_HTTPProvider):
    name = "google"
    default_base_url = "https://generativelanguage.googleapis.com/v1beta"
    api_key_env = "GOOGLE_API_KEY"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        key = _credential(self.api_key_env)
        gen = {}
        for src, dst in (("temperature", "temperature"), ("top_p", "topP"), ("max_tokens", "maxOutputTokens")):
            if src in request.decoding:
                gen[dst] = request.decoding[src]
        body = {
            "systemInstruction": {"parts": [{"text": request.system_text}]},
            "contents": [{"role": "user", "parts": [{"text": request.user_text}]}],
            "generationConfig": gen,
        }
        url = f"{self.base_url}/models/{request.model}:generateContent"
        data = self._post(url, {}, body, params={"key": key})
        try:
            parts = data["candidates"][0]["content"]["parts"]
            text = "".join(p.get("text", "") for p in parts)
        except (KeyError, IndexError, TypeError) as exc:
            raise ProviderError(f"{self.name}: unexpected response shape", retryable=False) from exc
        return ProviderResponse(text, {"latency_s": data["_latency_s"], "usage": data.get("usageMetadata", {})})


class CassetteProvider:
    """Content-addressed record/replay store.

    ``mode`` is ``"replay"`` (misses raise :class:`CassetteMiss`), ``"record"``
    (always call ``inner`` and store) or ``"auto"`` (replay hits, record misses).
    """

    name = "cassette"

    def __init__(self, directory: str | os.PathLike, inner: ModelProvider | None = None, mode: str = "replay"):
        if mode not in ("replay", "record", "auto"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        if mode != "replay" and inner is None:
            raise ValueError("record/auto modes need an inner provider")
        self.directory = Path(directory)
        self.inner = inner
        self.mode = mode

    def path_for(self, key: str) -> Path:
        return self.directory / key[:2] / f"{key}.json"

    def complete(self, request: ProviderRequest) -> ProviderResponse:
        key = request.cassette_key()
        path = self.path_for(key)
        if self.mode != "record" and path.exists():
            data = json.loads(path.read_text("utf-8"))
            meta = dict(data.get("meta", {}))
            meta["cassette"] = key
            return ProviderResponse(data["text"], meta)
        if self.mode == "replay":
            raise CassetteMiss(key)
        response = self.inner.complete(request)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({
            "request": {"model": request.model, "system": request.system_text, "user": request.user_text,
                        "decoding": request.decoding},
            "text": response.text,
            "meta": response.meta,
        }, ensure_ascii=False, sort_keys=True), "utf-8")
        os.replace(tmp, path)
        return response


LIVE_PROVIDERS = {
    "openai": OpenAIChatProvider,
    "anthropic": AnthropicProvider,
    "google": GeminiProvider,
}
