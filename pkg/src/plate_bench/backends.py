"""Recognition backends behind one query interface.

Four kinds: a generic HTTP chat-vision client (request/response shapes come
from config templates, not code), a subprocess adapter for external OCR
binaries, a local-command adapter, and a seeded deterministic mock for
offline work. All share rate limiting, bounded retries with backoff, a
per-backend concurrency bound, and an optional content-addressed response
cache keyed on (backend id, prompt, image bytes, temperature).

Credentials are only ever named by environment variable; the value is read
at request time and never serialized.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import shlex
import subprocess
import tempfile
import threading
import time
from collections import deque
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Mapping, Sequence

import httpx
import numpy as np

from .labels import ALPHABET, DIGITS, LETTERS, PlateFormat, PlateLabel
from .manifest import DatasetManifest

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# errors

class BackendError(Exception):
    """Base for query failures; ``kind`` is the label recorded in run logs."""

    kind = "backend-error"
    transient = False


class AuthFailure(BackendError):
    kind = "auth"


class QueryTimeout(BackendError):
    kind = "timeout"
    transient = True


class TransportFailure(BackendError):
    kind = "transport"
    transient = True


class RateLimited(BackendError):
    kind = "rate-limit"
    transient = True


class MalformedResponse(BackendError):
    kind = "malformed-response"


class CommandFailure(BackendError):
    kind = "command"


class UnknownImage(BackendError):
    kind = "unknown-image"


# ---------------------------------------------------------------------------
# query / reply / config

@dataclass(frozen=True)
class VisionQuery:
    image: bytes
    prompt: str
    image_format: str = "png"
    max_output_chars: int = 256
    temperature: float = 0.0

    def __post_init__(self) -> None:
        if not self.image:
            raise ValueError("query image must be non-empty")
        if not self.prompt:
            raise ValueError("query prompt must be non-empty")


@dataclass(frozen=True)
class VisionReply:
    text: str
    latency_ms: int
    backend_id: str
    cached: bool = False

    def __post_init__(self) -> None:
        if self.latency_ms < 0:
            raise ValueError("latency_ms must be >= 0")


class BackendKind(Enum):
    HTTP_CHAT = "http-chat"
    LOCAL_COMMAND = "local-command"
    EXTERNAL_OCR = "external-ocr"
    MOCK = "mock"


@dataclass(frozen=True)
class MockBehavior:
    """Controlled error injection for the offline mock.

    ``confusion_bias`` entries are (truth char, replacement, probability) and
    fire before the generic error draw, so systematic confusions (say P read
    as R) can be reproduced on demand.
    """

    char_error_rate: float = 0.0
    substitute_weight: float = 1.0
    insert_weight: float = 0.0
    delete_weight: float = 0.0
    seed: int = 0
    confusion_bias: tuple[tuple[str, str, float], ...] = ()

    def __post_init__(self) -> None:
        if not 0.0 <= self.char_error_rate <= 1.0:
            raise ValueError("char_error_rate must lie in [0, 1]")
        weights = (self.substitute_weight, self.insert_weight, self.delete_weight)
        if any(w < 0 for w in weights) or sum(weights) <= 0:
            raise ValueError("error kind weights must be non-negative with positive sum")


@dataclass(frozen=True)
class BackendConfig:
    id: str
    kind: BackendKind
    endpoint: str = ""  # URL for http-chat, command line for subprocess kinds
    auth_env: str | None = None  # env var NAME holding the credential
    rate_limit_per_min: int = 0  # 0 = unlimited
    max_attempts: int = 3
    backoff_s: float = 1.0
    timeout_s: float = 60.0
    concurrency: int = 4
    headers: Mapping[str, str] | None = None
    request_template: Mapping | None = None
    response_path: str | None = None
    mock: MockBehavior | None = None
    truth_manifest: str | None = None  # manifest path backing a mock

    def __post_init__(self) -> None:
        if not self.id:
            raise ValueError("backend id must be non-empty")
        if self.max_attempts < 1 or self.concurrency < 1:
            raise ValueError("max_attempts and concurrency must be >= 1")


# ---------------------------------------------------------------------------
# clock + rate limiting

class SystemClock:
    def now(self) -> float:
        return time.monotonic()

    def sleep(self, seconds: float) -> None:
        time.sleep(seconds)


class RateLimiter:
    """Sliding-window limiter: at most ``per_minute`` dispatches per 60 s."""

    def __init__(self, per_minute: int, clock=None) -> None:
        self.per_minute = per_minute
        self.clock = clock or SystemClock()
        self._stamps: deque[float] = deque()
        self._lock = threading.Lock()

    def acquire(self) -> None:
        if self.per_minute <= 0:
            return
        while True:
            with self._lock:
                now = self.clock.now()
                while self._stamps and self._stamps[0] <= now - 60.0:
                    self._stamps.popleft()
                if len(self._stamps) < self.per_minute:
                    self._stamps.append(now)
                    return
                wait = self._stamps[0] + 60.0 - now
            self.clock.sleep(max(wait, 1e-6))


# ---------------------------------------------------------------------------
# backend base

class Backend:
    """Shared dispatch policy: concurrency bound, rate limit, retry."""

    def __init__(self, config: BackendConfig, clock=None) -> None:
        self.config = config
        self.clock = clock or SystemClock()
        self._limiter = RateLimiter(config.rate_limit_per_min, self.clock)
        self._slots = threading.BoundedSemaphore(config.concurrency)
        self._calls = 0
        self._calls_lock = threading.Lock()

    @property
    def id(self) -> str:
        return self.config.id

    @property
    def calls(self) -> int:
        """Dispatch count, including retries. Handy for tests."""
        with self._calls_lock:
            return self._calls

    def query(self, q: VisionQuery) -> VisionReply:
        attempt = 1
        with self._slots:
            while True:
                self._limiter.acquire()
                with self._calls_lock:
                    self._calls += 1
                try:
                    return self._send(q)
                except BackendError as exc:
                    if exc.transient and attempt < self.config.max_attempts:
                        self.clock.sleep(self.config.backoff_s * 2 ** (attempt - 1))
                        attempt += 1
                        continue
                    raise

    def _send(self, q: VisionQuery) -> VisionReply:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# mock backends

def _digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


class MockBackend(Backend):
    """Deterministic stand-in keyed on image content.

    Ground truth comes from a manifest; the reply for a given
    (behavior, query) pair never changes, regardless of call order.
    """

    def __init__(
        self,
        config: BackendConfig,
        behavior: MockBehavior,
        truth_source: DatasetManifest,
        images_dir: str | Path,
        clock=None,
    ) -> None:
        super().__init__(config, clock)
        self.behavior = behavior
        self._truth_by_digest: dict[str, str] = {}
        base = Path(images_dir)
        for rec in truth_source.records:
            if rec.label is None:
                continue
            data = (base / rec.path).read_bytes()
            self._truth_by_digest[_digest_bytes(data)] = rec.label.chars

    def _rng_for(self, q: VisionQuery, digest: str) -> np.random.Generator:
        prompt_digest = hashlib.sha256(q.prompt.encode("utf-8")).hexdigest()
        return np.random.default_rng(
            np.random.SeedSequence(
                [self.behavior.seed, int(digest[:16], 16), int(prompt_digest[:16], 16)]
            )
        )

    def _send(self, q: VisionQuery) -> VisionReply:
        start = time.monotonic()
        digest = _digest_bytes(q.image)
        truth = self._truth_by_digest.get(digest)
        if truth is None:
            raise UnknownImage(f"{self.id}: image digest {digest[:12]} not in truth manifest")
        rng = self._rng_for(q, digest)
        b = self.behavior
        bias = {ch: (repl, prob) for ch, repl, prob in b.confusion_bias}
        weights = np.array([b.substitute_weight, b.insert_weight, b.delete_weight])
        weights = weights / weights.sum()
        out: list[str] = []
        for ch in truth:
            if ch in bias:
                repl, prob = bias[ch]
                if rng.random() < prob:
                    out.append(repl)
                    continue
            if b.char_error_rate > 0.0 and rng.random() < b.char_error_rate:
                kind = rng.choice(3, p=weights)
                if kind == 0:  # substitute
                    pool = [c for c in ALPHABET if c != ch]
                    out.append(pool[rng.integers(0, len(pool))])
                elif kind == 1:  # insert after
                    out.append(ch)
                    out.append(ALPHABET[rng.integers(0, len(ALPHABET))])
                # kind == 2: delete, emit nothing
            else:
                out.append(ch)
        latency = int((time.monotonic() - start) * 1000)
        return VisionReply(text="".join(out), latency_ms=latency, backend_id=self.id)


class ScriptedBackend(Backend):
    """Replies produced by a caller-supplied function; for fixtures and tests."""

    def __init__(self, backend_id: str, script: Callable[[VisionQuery], str], clock=None) -> None:
        super().__init__(BackendConfig(id=backend_id, kind=BackendKind.MOCK), clock)
        self._script = script

    def _send(self, q: VisionQuery) -> VisionReply:
        return VisionReply(text=self._script(q), latency_ms=0, backend_id=self.id)


# ---------------------------------------------------------------------------
# HTTP chat backend

_DEFAULT_TEMPLATE: Mapping = {
    "messages": [
        {
            "role": "user",
            "content": [
                {"type": "text", "text": "{{prompt}}"},
                {
                    "type": "image_url",
                    "image_url": {"url": "data:image/{{image_format}};base64,{{image_b64}}"},
                },
            ],
        }
    ],
    "temperature": "{{temperature}}",
    "max_tokens": "{{max_output_chars}}",
}
_DEFAULT_RESPONSE_PATH = "choices.0.message.content"

_RAW_PLACEHOLDERS = {
    "{{temperature}}": lambda ctx: ctx["temperature"],
    "{{max_output_chars}}": lambda ctx: ctx["max_output_chars"],
}


def _render_template(node, ctx: Mapping):
    if isinstance(node, str):
        if node in _RAW_PLACEHOLDERS:
            return _RAW_PLACEHOLDERS[node](ctx)
        for key, value in ctx.items():
            node = node.replace("{{" + key + "}}", str(value))
        return node
    if isinstance(node, Mapping):
        return {k: _render_template(v, ctx) for k, v in node.items()}
    if isinstance(node, (list, tuple)):
        return [_render_template(v, ctx) for v in node]
    return node


def _dig(payload, path: str):
    node = payload
    for part in path.split("."):
        if isinstance(node, list):
            node = node[int(part)]
        elif isinstance(node, Mapping):
            node = node[part]
        else:
            raise KeyError(part)
    return node


class HttpChatBackend(Backend):
    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None, clock=None) -> None:
        super().__init__(config, clock)
        self._client = httpx.Client(transport=transport, timeout=config.timeout_s)

    def close(self) -> None:
        self._client.close()

    def _auth_value(self) -> str | None:
        if not self.config.auth_env:
            return None
        value = os.environ.get(self.config.auth_env)
        if value is None:
            raise AuthFailure(f"{self.id}: environment variable {self.config.auth_env} not set")
        return value

    def _send(self, q: VisionQuery) -> VisionReply:
        ctx = {
            "prompt": q.prompt,
            "image_b64": base64.b64encode(q.image).decode("ascii"),
            "image_format": q.image_format,
            "temperature": q.temperature,
            "max_output_chars": q.max_output_chars,
        }
        body = _render_template(self.config.request_template or _DEFAULT_TEMPLATE, ctx)
        headers = dict(self.config.headers or {})
        auth = self._auth_value()
        if auth is not None:
            for key, value in headers.items():
                headers[key] = value.replace("{{auth}}", auth)
            if not any("{{auth}}" in v for v in (self.config.headers or {}).values()):
                headers.setdefault("Authorization", f"Bearer {auth}")
        start = time.monotonic()
        try:
            resp = self._client.post(self.config.endpoint, json=body, headers=headers)
        except httpx.TimeoutException as exc:
            raise QueryTimeout(f"{self.id}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise TransportFailure(f"{self.id}: {exc}") from exc
        latency = int((time.monotonic() - start) * 1000)
        if resp.status_code in (401, 403):
            raise AuthFailure(f"{self.id}: HTTP {resp.status_code}")
        if resp.status_code == 429:
            raise RateLimited(f"{self.id}: HTTP 429")
        if resp.status_code >= 500:
            raise TransportFailure(f"{self.id}: HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise MalformedResponse(f"{self.id}: unexpected HTTP {resp.status_code}")
        try:
            text = _dig(resp.json(), self.config.response_path or _DEFAULT_RESPONSE_PATH)
        except (json.JSONDecodeError, KeyError, IndexError, ValueError) as exc:
            raise MalformedResponse(f"{self.id}: cannot extract reply text: {exc}") from exc
        if not isinstance(text, str):
            raise MalformedResponse(f"{self.id}: reply text is {type(text).__name__}, not str")
        return VisionReply(text=text, latency_ms=latency, backend_id=self.id)


# ---------------------------------------------------------------------------
# subprocess backends (external OCR binaries, local commands)

class SubprocessBackend(Backend):
    """Runs ``endpoint`` as a command; stdout is the reply text.

    ``{image}`` expands to a temp file holding the query image; for
    local-command kind ``{prompt}`` expands to the prompt. External OCR tools
    take the image path only.
    """

    def _send(self, q: VisionQuery) -> VisionReply:
        suffix = "." + q.image_format
        with tempfile.NamedTemporaryFile(suffix=suffix, delete=False) as tmp:
            tmp.write(q.image)
            image_path = tmp.name
        try:
            argv = []
            for token in shlex.split(self.config.endpoint):
                token = token.replace("{image}", image_path)
                if self.config.kind is BackendKind.LOCAL_COMMAND:
                    token = token.replace("{prompt}", q.prompt)
                argv.append(token)
            start = time.monotonic()
            try:
                proc = subprocess.run(
                    argv, capture_output=True, timeout=self.config.timeout_s
                )
            except subprocess.TimeoutExpired as exc:
                raise QueryTimeout(f"{self.id}: {exc}") from exc
            except OSError as exc:
                raise CommandFailure(f"{self.id}: {exc}") from exc
            latency = int((time.monotonic() - start) * 1000)
            if proc.returncode != 0:
                raise CommandFailure(
                    f"{self.id}: exit {proc.returncode}: {proc.stderr.decode('utf-8', 'replace')[:200]}"
                )
            return VisionReply(
                text=proc.stdout.decode("utf-8", "replace"),
                latency_ms=latency,
                backend_id=self.id,
            )
        finally:
            os.unlink(image_path)


# ---------------------------------------------------------------------------
# response cache

def cache_key(backend_id: str, q: VisionQuery) -> str:
    """Stable digest of (backend id, prompt, image bytes, temperature)."""
    h = hashlib.sha256()
    for part in (
        backend_id.encode("utf-8"),
        q.prompt.encode("utf-8"),
        q.image,
        repr(q.temperature).encode("ascii"),
    ):
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    return h.hexdigest()


class ResponseCache:
    """Content-addressed reply store: ``<root>/<backend_id>/<digest>``."""

    def __init__(self, root: str | Path) -> None:
        self.root = Path(root)

    def _path(self, backend_id: str, key: str) -> Path:
        return self.root / backend_id / key

    def lookup(self, backend_id: str, q: VisionQuery) -> VisionReply | None:
        path = self._path(backend_id, cache_key(backend_id, q))
        if not path.exists():
            return None
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
            return VisionReply(
                text=obj["text"],
                latency_ms=int(obj["latency_ms"]),
                backend_id=obj["backend_id"],
                cached=True,
            )
        except (json.JSONDecodeError, KeyError, ValueError, OSError) as exc:
            logger.warning("cache entry %s unreadable, treating as miss: %s", path, exc)
            return None

    def store(self, backend_id: str, q: VisionQuery, reply: VisionReply) -> None:
        path = self._path(backend_id, cache_key(backend_id, q))
        path.parent.mkdir(parents=True, exist_ok=True)
        payload = json.dumps(
            {"text": reply.text, "latency_ms": reply.latency_ms, "backend_id": reply.backend_id}
        )
        tmp = path.with_suffix(".tmp")
        tmp.write_text(payload, encoding="utf-8")
        tmp.replace(path)


class CachedBackend:
    """Wraps a backend with a response cache. Policy: "use" or "refresh"."""

    def __init__(self, inner: Backend, cache: ResponseCache, policy: str = "use") -> None:
        if policy not in ("use", "refresh"):
            raise ValueError(f"unknown cache policy {policy!r}")
        self.inner = inner
        self.cache = cache
        self.policy = policy

    @property
    def id(self) -> str:
        return self.inner.id

    @property
    def config(self) -> BackendConfig:
        return self.inner.config

    @property
    def calls(self) -> int:
        return self.inner.calls

    def query(self, q: VisionQuery) -> VisionReply:
        if self.policy == "use":
            hit = self.cache.lookup(self.inner.id, q)
            if hit is not None:
                return hit
        reply = self.inner.query(q)
        self.cache.store(self.inner.id, q, reply)
        return reply


# ---------------------------------------------------------------------------
# reply-text token extraction

# A candidate run is a maximal stretch of plate symbols, allowed to span
# spaces, hyphens, tabs, and line breaks (two-line plates come back with a
# newline between the halves).
_RUN = re.compile(r"[A-Z0-9][A-Z0-9 \t\r\n-]*[A-Z0-9]|[A-Z0-9]")
_SOFT_SEP = re.compile(r"[ \t\r\n-]+")
_TOKEN = re.compile(r"[A-Z0-9]+")


def _candidates(text: str) -> list[str]:
    out: list[str] = []
    for m in _RUN.finditer(text):
        glued = _SOFT_SEP.sub("", m.group(0))
        out.append(glued)
        tokens = _TOKEN.findall(m.group(0))
        if len(tokens) > 1:
            out.extend(tokens)
    return out


def _is_mixed(run: str) -> bool:
    return any(ch in LETTERS for ch in run) and any(ch in DIGITS for ch in run)


def extract_plate_token(reply_text: str, expected_format: PlateFormat | None = None) -> PlateLabel:
    """Pull the most plate-like alphanumeric run out of free-form reply text.

    Uppercase runs in the original text rank ahead of runs from the
    case-folded text (plates are printed uppercase; prose mostly is not).
    With an expected format the first run matching letters-then-digits counts
    wins; otherwise the longest run of length >= 4, preferring runs that mix
    letters and digits. No candidate yields an empty label, which callers
    record as an empty prediction.
    """
    passes = (_candidates(reply_text), _candidates(reply_text.upper()))
    if expected_format is not None:
        for candidates in passes:
            for cand in candidates:
                if expected_format.matches(cand):
                    return PlateLabel(chars=cand, raw=reply_text)
    for candidates in passes:
        mixed = [c for c in candidates if len(c) >= 4 and _is_mixed(c)]
        if mixed:
            return PlateLabel(chars=max(mixed, key=len), raw=reply_text)
    for candidates in passes:
        long_runs = [c for c in candidates if len(c) >= 4]
        if long_runs:
            return PlateLabel(chars=max(long_runs, key=len), raw=reply_text)
    return PlateLabel(chars="", raw=reply_text)


# ---------------------------------------------------------------------------
# config files

def _config_to_dict(config: BackendConfig) -> dict:
    out: dict = {"id": config.id, "kind": config.kind.value}
    if config.endpoint:
        out["endpoint"] = config.endpoint
    for key in ("auth_env", "response_path", "truth_manifest"):
        value = getattr(config, key)
        if value is not None:
            out[key] = value
    for key in ("rate_limit_per_min", "max_attempts", "backoff_s", "timeout_s", "concurrency"):
        out[key] = getattr(config, key)
    if config.headers:
        out["headers"] = dict(config.headers)
    if config.request_template:
        out["request_template"] = dict(config.request_template)
    if config.mock is not None:
        m = config.mock
        out["mock"] = {
            "char_error_rate": m.char_error_rate,
            "substitute_weight": m.substitute_weight,
            "insert_weight": m.insert_weight,
            "delete_weight": m.delete_weight,
            "seed": m.seed,
            "confusion_bias": [list(entry) for entry in m.confusion_bias],
        }
    return out


def _config_from_dict(obj: Mapping) -> BackendConfig:
    mock = None
    if "mock" in obj and obj["mock"] is not None:
        m = obj["mock"]
        mock = MockBehavior(
            char_error_rate=m.get("char_error_rate", 0.0),
            substitute_weight=m.get("substitute_weight", 1.0),
            insert_weight=m.get("insert_weight", 0.0),
            delete_weight=m.get("delete_weight", 0.0),
            seed=m.get("seed", 0),
            confusion_bias=tuple(tuple(entry) for entry in m.get("confusion_bias", ())),
        )
    return BackendConfig(
        id=obj["id"],
        kind=BackendKind(obj["kind"]),
        endpoint=obj.get("endpoint", ""),
        auth_env=obj.get("auth_env"),
        rate_limit_per_min=obj.get("rate_limit_per_min", 0),
        max_attempts=obj.get("max_attempts", 3),
        backoff_s=obj.get("backoff_s", 1.0),
        timeout_s=obj.get("timeout_s", 60.0),
        concurrency=obj.get("concurrency", 4),
        headers=obj.get("headers"),
        request_template=obj.get("request_template"),
        response_path=obj.get("response_path"),
        mock=mock,
        truth_manifest=obj.get("truth_manifest"),
    )


def save_backend_configs(configs: Sequence[BackendConfig], path: str | Path) -> None:
    payload = {"backends": [_config_to_dict(c) for c in configs]}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_backend_configs(path: str | Path) -> dict[str, BackendConfig]:
    obj = json.loads(Path(path).read_text(encoding="utf-8"))
    configs = [_config_from_dict(entry) for entry in obj["backends"]]
    out: dict[str, BackendConfig] = {}
    for config in configs:
        if config.id in out:
            raise ValueError(f"duplicate backend id {config.id!r} in {path}")
        out[config.id] = config
    return out


def build_backend(config: BackendConfig, base_dir: str | Path = ".", clock=None) -> Backend:
    """Instantiate the runtime backend for a config.

    Mock truth manifests resolve relative to ``base_dir`` (normally the
    config file's directory).
    """
    if config.kind is BackendKind.HTTP_CHAT:
        return HttpChatBackend(config, clock=clock)
    if config.kind in (BackendKind.EXTERNAL_OCR, BackendKind.LOCAL_COMMAND):
        return SubprocessBackend(config, clock=clock)
    if config.kind is BackendKind.MOCK:
        if not config.truth_manifest:
            raise ValueError(f"mock backend {config.id!r} needs truth_manifest")
        from .manifest import load_manifest

        manifest_path = Path(base_dir) / config.truth_manifest
        manifest = load_manifest(manifest_path)
        return MockBackend(
            config,
            behavior=config.mock or MockBehavior(),
            truth_source=manifest,
            images_dir=manifest_path.parent,
            clock=clock,
        )
    raise ValueError(f"unhandled backend kind {config.kind}")
