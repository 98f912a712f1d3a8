"""Model access: HTTP client for a local model server plus a scripted stub.

Both providers share the same contract: an overflow check happens before
any provider activity, latency brackets only the provider call itself,
and the stub is a pure function of (role, canonical prompt, seed) so runs
replay byte-identically.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import requests

from .errors import ContextOverflow, NoScriptForRole, ProviderError, ProviderUnreachable
from .tokens import estimate_tokens, prompt_hash

# Marker appended to re-prompts after a validation failure. The stub keys
# its "on_retry" response pool off this string.
RETRY_MARKER = "PREVIOUS OUTPUT FAILED VALIDATION"


@dataclass(frozen=True)
class ModelConfig:
    model_id: str
    context_window_tokens: int = 4096
    reserved_output_tokens: int = 1024
    temperature: float = 0.2
    seed: Optional[int] = None

    def __post_init__(self):
        if not self.reserved_output_tokens < self.context_window_tokens:
            raise ValueError("reserved_output_tokens must be < context_window_tokens")


@dataclass
class CompletionRequest:
    role: str
    prompt: str
    config: ModelConfig
    prompt_tokens: int = field(default=-1)

    def __post_init__(self):
        if self.prompt_tokens < 0:
            self.prompt_tokens = estimate_tokens(self.prompt)


@dataclass(frozen=True)
class CompletionResult:
    text: str
    latency_seconds: float
    provider: str
    truncated: bool = False


def _check_window(request: CompletionRequest) -> None:
    cfg = request.config
    if request.prompt_tokens + cfg.reserved_output_tokens > cfg.context_window_tokens:
        raise ContextOverflow(
            role=request.role,
            prompt_tokens=request.prompt_tokens,
            reserved_output_tokens=cfg.reserved_output_tokens,
            context_window_tokens=cfg.context_window_tokens,
        )


class StubGateway:
    """Deterministic scripted replacement for the model server.

    Scripts live in a directory of JSON files, one per role. Each file
    holds candidate outputs; selection index = (prompt_hash + seed) mod
    pool length. Pools can be keyed per questionnaire profile (matched by
    profile id substring in the prompt) and an "on_retry" pool takes over
    when the prompt carries the validation-retry marker, which keeps the
    stub stateless while still letting tests script fail-then-succeed
    sequences.
    """

    def __init__(self, script_dir: Path, sleep_seconds: float = 0.0):
        self.script_dir = Path(script_dir)
        self.sleep_seconds = sleep_seconds
        self._scripts: dict[str, dict] = {}

    def _script_for(self, role: str) -> dict:
        if role not in self._scripts:
            path = self.script_dir / f"{role}.json"
            if not path.is_file():
                raise NoScriptForRole(f"no stub script for role {role!r} in {self.script_dir}")
            self._scripts[role] = json.loads(path.read_text(encoding="utf-8"))
        return self._scripts[role]

    def _select_pool(self, script: dict, prompt: str) -> list:
        if RETRY_MARKER in prompt and "on_retry" in script:
            return script["on_retry"]
        for profile_id, pool in script.get("profiles", {}).items():
            if profile_id in prompt:
                return pool
        if "default" not in script:
            raise NoScriptForRole("script has no 'default' pool and no profile matched")
        return script["default"]

    def stub_complete(self, role: str, prompt: str, seed: int) -> str:
        script = self._script_for(role)
        pool = self._select_pool(script, prompt)
        if not pool:
            raise NoScriptForRole(f"empty response pool for role {role!r}")
        candidate = pool[(prompt_hash(prompt) + seed) % len(pool)]
        if isinstance(candidate, str):
            return candidate
        return json.dumps(candidate, ensure_ascii=False)

    def complete(self, request: CompletionRequest) -> CompletionResult:
        _check_window(request)
        seed = request.config.seed if request.config.seed is not None else 0
        start = time.perf_counter()
        if self.sleep_seconds:
            time.sleep(self.sleep_seconds)
        text = self.stub_complete(request.role, request.prompt, seed)
        latency = time.perf_counter() - start
        return CompletionResult(text=text, latency_seconds=latency, provider="stub")

    def probe_window(self, config: ModelConfig) -> int:
        return config.context_window_tokens


class HttpGateway:
    """Client for a local model server exposing POST /api/generate.

    Transport-level failures are retried with a fixed backoff before
    giving up; non-success HTTP responses are surfaced immediately with
    the response body attached.
    """

    def __init__(self, base_url: str, timeout: float = 300.0,
                 retries: int = 2, backoff_seconds: float = 1.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.backoff_seconds = backoff_seconds

    def _post(self, path: str, body: dict) -> requests.Response:
        url = self.base_url + path
        last_exc: Optional[Exception] = None
        for attempt in range(self.retries + 1):
            try:
                return requests.post(url, json=body, timeout=self.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                if attempt < self.retries:
                    time.sleep(self.backoff_seconds)
        raise ProviderUnreachable(f"cannot reach {url}: {last_exc}")

    def complete(self, request: CompletionRequest) -> CompletionResult:
        _check_window(request)
        cfg = request.config
        options: dict[str, Any] = {
            "num_ctx": cfg.context_window_tokens,
            "temperature": cfg.temperature,
        }
        if cfg.seed is not None:
            options["seed"] = cfg.seed
        body = {
            "model": cfg.model_id,
            "prompt": request.prompt,
            "options": options,
            "stream": False,
        }
        start = time.perf_counter()
        response = self._post("/api/generate", body)
        latency = time.perf_counter() - start
        if response.status_code != 200:
            raise ProviderError(response.status_code, response.text)
        data = response.json()
        return CompletionResult(
            text=data["response"],
            latency_seconds=latency,
            provider="http",
            truncated=bool(data.get("truncated", False)),
        )

    def probe_window(self, config: ModelConfig) -> int:
        response = self._post("/api/show", {"model": config.model_id})
        if response.status_code != 200:
            raise ProviderError(response.status_code, response.text)
        data = response.json()
        reported = data.get("context_window")
        if isinstance(reported, int) and reported > 0:
            return reported
        return config.context_window_tokens
