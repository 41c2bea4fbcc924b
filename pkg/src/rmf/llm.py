"""Provider-agnostic chat-completion transport.

Real providers are reached over the de-facto chat-completions JSON shape;
a deterministic in-process mock provider supports offline runs and tests.
Secrets are read from the environment at request time and never stored in
configs, exchange records, or logs.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
import logging
import os
import time
import uuid
from dataclasses import dataclass, field

import httpx

from .catalog import load_tag_catalog
from .prompting import verdict_completion

log = logging.getLogger("rmf.llm")

RETRYABLE_STATUS = frozenset({429, 500, 502, 503, 504})
BACKOFF_BASE_S = 0.25


class ConfigError(RuntimeError):
    """Provider config unusable (e.g. missing secret env var)."""


class TransportError(RuntimeError):
    """Retries exhausted on transient failures; carries the last status."""

    def __init__(self, message: str, last_status: int | None = None, attempts: int = 0):
        self.last_status = last_status
        self.attempts = attempts
        super().__init__(message)


class ProviderRejection(RuntimeError):
    """Non-retryable 4xx response."""

    def __init__(self, message: str, status: int):
        self.status = status
        super().__init__(message)


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.0
    top_k: int | None = None
    top_p: float | None = 1.0

    def __post_init__(self):
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.top_p is not None and not (0.0 < self.top_p <= 1.0):
            raise ValueError("top_p must be in (0, 1]")


@dataclass(frozen=True)
class ProviderConfig:
    base_url: str
    model_id: str
    api_key_env: str | None = None  # name of the env var, never the secret itself
    timeout_s: float = 30.0
    max_retries: int = 3
    max_in_flight: int = 4
    supports_top_k: bool = False
    name: str = "default"

    def __post_init__(self):
        if self.max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")


@dataclass
class CompletionExchange:
    prompt: str
    response_text: str
    provider: str
    model_id: str
    latency_s: float
    attempt_count: int
    request_id: str
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def backoff_delay(attempt: int, jitter: float) -> float:
    """Exponential backoff; jitter in [0, 1) keeps the schedule monotonically
    non-decreasing across attempts."""
    return BACKOFF_BASE_S * (2.0**attempt) + BACKOFF_BASE_S * jitter


class HttpProvider:
    """Blocking chat-completions client with retry on timeout/429/5xx."""

    def __init__(self, cfg: ProviderConfig, sampling: SamplingConfig, client: httpx.Client | None = None):
        self.cfg = cfg
        self.sampling = sampling
        self._client = client or httpx.Client(timeout=cfg.timeout_s)
        if sampling.top_k is not None and not cfg.supports_top_k:
            log.warning("provider %s does not support top_k; dropping it", cfg.name)

    def _headers(self) -> dict[str, str]:
        headers = {"content-type": "application/json"}
        if self.cfg.api_key_env:
            secret = os.environ.get(self.cfg.api_key_env)
            if not secret:
                raise ConfigError(f"environment variable {self.cfg.api_key_env} is not set")
            headers["authorization"] = f"Bearer {secret}"
        return headers

    def _body(self, prompt: str) -> dict:
        body = {
            "model": self.cfg.model_id,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.sampling.temperature,
        }
        if self.sampling.top_p is not None:
            body["top_p"] = self.sampling.top_p
        if self.sampling.top_k is not None and self.cfg.supports_top_k:
            body["top_k"] = self.sampling.top_k
        return body

    def complete(self, prompt: str, sleep=time.sleep) -> CompletionExchange:
        url = self.cfg.base_url.rstrip("/") + "/chat/completions"
        headers = self._headers()
        body = self._body(prompt)
        request_id = uuid.uuid4().hex
        started = time.monotonic()
        last_status: int | None = None
        attempts = 0
        for attempt in range(self.cfg.max_retries + 1):
            attempts = attempt + 1
            try:
                resp = self._client.post(url, json=body, headers=headers)
            except httpx.TimeoutException:
                log.warning("provider %s attempt %d timed out", self.cfg.name, attempts)
                last_status = None
            except httpx.TransportError as e:
                log.warning("provider %s attempt %d transport failure: %s", self.cfg.name, attempts, type(e).__name__)
                last_status = None
            else:
                last_status = resp.status_code
                if resp.status_code == 200:
                    doc = resp.json()
                    text = doc["choices"][0]["message"]["content"]
                    return CompletionExchange(
                        prompt=prompt,
                        response_text=text,
                        provider=self.cfg.name,
                        model_id=self.cfg.model_id,
                        latency_s=time.monotonic() - started,
                        attempt_count=attempts,
                        request_id=request_id,
                    )
                if resp.status_code not in RETRYABLE_STATUS:
                    raise ProviderRejection(
                        f"provider {self.cfg.name} rejected the request (HTTP {resp.status_code})",
                        status=resp.status_code,
                    )
                log.warning("provider %s attempt %d got HTTP %d", self.cfg.name, attempts, resp.status_code)
            if attempt < self.cfg.max_retries:
                jitter = int.from_bytes(hashlib.blake2b(f"{request_id}:{attempt}".encode(), digest_size=4).digest(), "big") / 2**32
                sleep(backoff_delay(attempt, jitter))
        raise TransportError(
            f"provider {self.cfg.name}: retries exhausted after {attempts} attempts",
            last_status=last_status,
            attempts=attempts,
        )


class MockProvider:
    """Deterministic offline provider.

    Responds from a prompt -> text table; unknown prompts get a fallback
    verdict derived from a stable hash of the prompt, always contract-valid
    JSON.
    """

    def __init__(self, seed_table: dict[str, str] | None = None, name: str = "mock", model_id: str = "mock-1"):
        self.seed_table = dict(seed_table or {})
        self.name = name
        self.model_id = model_id
        self._tag_names = load_tag_catalog().names

    def _fallback(self, prompt: str) -> str:
        h = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "big")
        name = self._tag_names[h % len(self._tag_names)]
        value = 1 if (h >> 8) % 2 == 0 else -1
        return verdict_completion(name, value)

    def complete(self, prompt: str) -> CompletionExchange:
        text = self.seed_table.get(prompt)
        if text is None:
            text = self._fallback(prompt)
        return CompletionExchange(
            prompt=prompt,
            response_text=text,
            provider=self.name,
            model_id=self.model_id,
            latency_s=0.0,
            attempt_count=1,
            request_id=hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16],
        )


def complete(cfg: ProviderConfig, sampling: SamplingConfig, prompt: str, client: httpx.Client | None = None) -> CompletionExchange:
    return HttpProvider(cfg, sampling, client=client).complete(prompt)


def complete_batch(provider, prompts: list[str], max_in_flight: int = 4) -> list[CompletionExchange]:
    """Run prompts with bounded parallelism; output order equals input order
    and per-item failures are embedded, never aborting the batch."""
    if not prompts:
        raise ValueError("prompt list must be non-empty")
    if max_in_flight < 1:
        raise ValueError("max_in_flight must be >= 1")
    results: list[CompletionExchange | None] = [None] * len(prompts)

    def run_one(i: int) -> None:
        try:
            results[i] = provider.complete(prompts[i])
        except Exception as e:
            results[i] = CompletionExchange(
                prompt=prompts[i],
                response_text="",
                provider=getattr(provider, "name", getattr(getattr(provider, "cfg", None), "name", "?")),
                model_id=getattr(provider, "model_id", getattr(getattr(provider, "cfg", None), "model_id", "?")),
                latency_s=0.0,
                attempt_count=getattr(e, "attempts", 0),
                request_id="",
                error=f"{type(e).__name__}: {e}",
            )

    with concurrent.futures.ThreadPoolExecutor(max_workers=max_in_flight) as pool:
        list(pool.map(run_one, range(len(prompts))))
    return results  # type: ignore[return-value]
