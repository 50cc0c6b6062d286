"""Drive a text-generation endpoint over a simple JSON protocol, with
retries, bounded concurrency, latency accounting, and offline backends.

Wire protocol: request {"prompt", "max_new_tokens", "temperature", "seed"},
response {"text", "prompt_tokens"?, "completion_tokens"?}. Replay files are
JSON-lines with at least {"instance_id", "output"} per line, which a run's
records.jsonl satisfies, so any recorded run can be replayed directly.
The endpoint auth token, when needed, comes from $ONCOEVAL_API_TOKEN.
"""

from __future__ import annotations

import json
import logging
import math
import os
import random
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import httpx

from oncoeval.errors import BackendError, ValidationError

logger = logging.getLogger(__name__)

AUTH_TOKEN_ENV = "ONCOEVAL_API_TOKEN"

# Whitespace-word to model-token estimate used when the endpoint reports
# no token counts.
TOKENS_PER_WORD = 1.3

_RETRY_BASE_S = 0.5

_WORD_RE = re.compile(r"\S+")


@dataclass(frozen=True)
class GenerationRequest:
    instance_id: str
    prompt: str
    max_input_tokens: int = 1500
    max_new_tokens: int = 50
    temperature: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        if not self.prompt:
            raise ValidationError(f"request {self.instance_id}: empty prompt")
        if self.max_new_tokens < 1:
            raise ValidationError(f"request {self.instance_id}: max_new_tokens must be >= 1")
        if self.temperature < 0:
            raise ValidationError(f"request {self.instance_id}: negative temperature")


@dataclass(frozen=True)
class GenerationRecord:
    instance_id: str
    output: str
    latency_ms: int
    backend_tag: str
    attempt_count: int = 1
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    failed: bool = False


@dataclass(frozen=True)
class BackendConfig:
    kind: str  # http | replay | echo
    url: str | None = None
    timeout_ms: int = 30_000
    max_retries: int = 3
    max_in_flight: int = 4
    replay_path: str | None = None
    echo_text: str | None = None

    def __post_init__(self):
        if self.kind not in ("http", "replay", "echo"):
            raise ValidationError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not self.url:
            raise ValidationError("http backend requires a url")
        if self.kind == "replay" and not self.replay_path:
            raise ValidationError("replay backend requires a replay_path")
        if self.max_in_flight < 1:
            raise ValidationError("max_in_flight must be >= 1")
        if self.max_retries < 1:
            raise ValidationError("max_retries must be >= 1")

    @property
    def tag(self) -> str:
        if self.kind == "http":
            return f"http:{self.url}"
        return self.kind


@dataclass
class BatchResult:
    records: list[GenerationRecord]
    wall_clock_ms: int
    n_failed: int


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text.split()) * TOKENS_PER_WORD)


def truncate_prompt(prompt: str, max_input_tokens: int) -> tuple[str, bool]:
    """Head-preserving truncation under the whitespace-word token estimate.

    Keeps the instruction and the earliest context by cutting trailing
    words; internal formatting of the kept prefix is preserved.
    """
    words = list(_WORD_RE.finditer(prompt))
    if math.ceil(len(words) * TOKENS_PER_WORD) <= max_input_tokens:
        return prompt, False
    keep = max(1, math.floor(max_input_tokens / TOKENS_PER_WORD))
    return prompt[: words[keep - 1].end()], True


_replay_cache: dict[str, tuple[tuple[int, int], dict[str, str]]] = {}


def load_replay(path: str | Path) -> dict[str, str]:
    """instance_id -> output map from a replay JSON-lines file.

    Cached per path, invalidated on (mtime_ns, size) change.
    """
    path = str(path)
    stat = os.stat(path)
    stamp = (stat.st_mtime_ns, stat.st_size)
    cached = _replay_cache.get(path)
    if cached and cached[0] == stamp:
        return cached[1]
    table: dict[str, str] = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"replay file line {lineno}: invalid JSON ({exc.msg})") from exc
            if "instance_id" not in obj or "output" not in obj:
                raise ValidationError(f"replay file line {lineno}: needs instance_id and output")
            table[obj["instance_id"]] = obj["output"]
    _replay_cache[path] = (stamp, table)
    return table


def write_replay(outputs: dict[str, str], path: str | Path) -> None:
    """Write an instance_id -> output map as a replay file, id-sorted."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for instance_id in sorted(outputs):
            handle.write(json.dumps({"instance_id": instance_id, "output": outputs[instance_id]}, ensure_ascii=False))
            handle.write("\n")


def _http_generate(req: GenerationRequest, backend: BackendConfig) -> GenerationRecord:
    prompt, truncated = truncate_prompt(req.prompt, req.max_input_tokens)
    if truncated:
        logger.warning(
            "truncated prompt for %s to ~%d tokens", req.instance_id, req.max_input_tokens
        )
    payload = {
        "prompt": prompt,
        "max_new_tokens": req.max_new_tokens,
        "temperature": req.temperature,
        "seed": req.seed,
    }
    headers = {}
    token = os.environ.get(AUTH_TOKEN_ENV)
    if token:
        headers["Authorization"] = f"Bearer {token}"

    start = time.perf_counter()
    failure = "no attempt made"
    attempt = 0
    for attempt in range(1, backend.max_retries + 1):
        retryable = True
        try:
            response = httpx.post(
                backend.url,
                json=payload,
                headers=headers,
                timeout=backend.timeout_ms / 1000.0,
            )
        except httpx.HTTPError as exc:
            failure = f"transport error: {exc}"
        else:
            if response.status_code == 200:
                try:
                    body = response.json()
                    output = body["text"]
                except (ValueError, KeyError):
                    failure = "malformed response body"
                    retryable = False
                else:
                    latency_ms = int((time.perf_counter() - start) * 1000)
                    return GenerationRecord(
                        instance_id=req.instance_id,
                        output=output,
                        latency_ms=latency_ms,
                        backend_tag=backend.tag,
                        attempt_count=attempt,
                        prompt_tokens=body.get("prompt_tokens", estimate_tokens(prompt)),
                        completion_tokens=body.get("completion_tokens"),
                    )
            else:
                failure = f"HTTP status {response.status_code}"
                retryable = response.status_code >= 500
        if not retryable or attempt == backend.max_retries:
            break
        delay = _RETRY_BASE_S * 2 ** (attempt - 1)
        time.sleep(delay + random.uniform(0.0, delay / 2))

    latency_ms = int((time.perf_counter() - start) * 1000)
    return GenerationRecord(
        instance_id=req.instance_id,
        output="",
        latency_ms=latency_ms,
        backend_tag=backend.tag,
        attempt_count=attempt,
        failed=True,
    )


def generate(req: GenerationRequest, backend: BackendConfig) -> GenerationRecord:
    """One generation through the configured backend.

    http failures exhaust retries (5xx/timeouts, exponential backoff from
    500 ms with jitter) and come back as a failed record with empty
    output; a replay miss raises BackendError naming the instance.
    """
    if backend.kind == "http":
        return _http_generate(req, backend)

    start = time.perf_counter()
    if backend.kind == "replay":
        table = load_replay(backend.replay_path)
        if req.instance_id not in table:
            raise BackendError(f"replay file has no output for instance {req.instance_id}")
        output = table[req.instance_id]
    else:  # echo
        if backend.echo_text is not None:
            output = backend.echo_text
        else:
            lines = [line for line in req.prompt.splitlines() if line.strip()]
            output = lines[-1] if lines else ""
    latency_ms = int((time.perf_counter() - start) * 1000)
    return GenerationRecord(
        instance_id=req.instance_id,
        output=output,
        latency_ms=latency_ms,
        backend_tag=backend.tag,
    )


def run_batch(requests: list[GenerationRequest], backend: BackendConfig) -> BatchResult:
    """Generate for every request with at most max_in_flight outstanding.

    Individual failures become failed records instead of aborting the
    batch; records come back sorted by instance id regardless of
    completion order.
    """
    seen: set[str] = set()
    for req in requests:
        if req.instance_id in seen:
            raise ValidationError(f"duplicate instance_id in batch: {req.instance_id}")
        seen.add(req.instance_id)

    start = time.perf_counter()

    def _one(req: GenerationRequest) -> GenerationRecord:
        try:
            return generate(req, backend)
        except Exception:
            return GenerationRecord(
                instance_id=req.instance_id,
                output="",
                latency_ms=0,
                backend_tag=backend.tag,
                failed=True,
            )

    with ThreadPoolExecutor(max_workers=backend.max_in_flight) as pool:
        records = list(pool.map(_one, requests))
    wall_clock_ms = int((time.perf_counter() - start) * 1000)
    records.sort(key=lambda r: r.instance_id)
    return BatchResult(
        records=records,
        wall_clock_ms=wall_clock_ms,
        n_failed=sum(1 for r in records if r.failed),
    )
