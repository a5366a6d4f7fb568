"""Embedding and text-generation backends.

Two capabilities are consumed by the pipeline: a multimodal encoder that maps
text and images into one vector space, and a text-generation model. Each has a
deterministic mock (fixture tables plus hash-seeded fallbacks) and an HTTP
client speaking the usual ``/v1/embeddings`` and ``/v1/chat/completions``
conventions. ``CachingLlm`` / ``CachingEmbedder`` wrap either kind with a
persistent response cache.
"""
from __future__ import annotations

import base64
import hashlib
import json
import logging
import os
import re
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import httpx
import numpy as np

from .errors import (
    BackendUnavailable,
    ConfigError,
    DimensionMismatch,
    EmptyInput,
    InvalidRequest,
    NoFixtureMatch,
    RateLimited,
    UnsupportedFormat,
)

log = logging.getLogger(__name__)

DEFAULT_MOCK_DIM = 32
DEFAULT_TEMPERATURE = 0.5
DEFAULT_TIMEOUT = 30.0
DEFAULT_MAX_ATTEMPTS = 3

IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".gif", ".bmp", ".webp"}
_MAGIC = (
    (b"\xff\xd8\xff", "jpeg"),
    (b"\x89PNG\r\n\x1a\n", "png"),
    (b"GIF87a", "gif"),
    (b"GIF89a", "gif"),
    (b"BM", "bmp"),
)

_WS = re.compile(r"\s+")


def normalize_whitespace(text: str) -> str:
    return _WS.sub(" ", text).strip()


def stable_hash64(key: str) -> int:
    return int.from_bytes(hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest(), "big")


class EmbeddingVector:
    """A finite, fixed-dimension vector in the shared text/image space."""

    __slots__ = ("values",)

    def __init__(self, values):
        arr = np.array(values, dtype=np.float64).reshape(-1)
        if arr.size < 1:
            raise DimensionMismatch("embedding must have dim >= 1")
        if not np.all(np.isfinite(arr)):
            raise ValueError("embedding contains NaN or Inf")
        arr.setflags(write=False)
        self.values = arr

    @property
    def dim(self) -> int:
        return int(self.values.size)

    def tolist(self) -> list[float]:
        return self.values.tolist()

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def __len__(self):
        return self.dim

    def __repr__(self):
        return f"EmbeddingVector(dim={self.dim})"


@dataclass(frozen=True)
class LlmRequest:
    prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    max_output_tokens: int = 512

    def __post_init__(self):
        if not isinstance(self.prompt, str) or not self.prompt.strip():
            raise InvalidRequest("prompt must be non-empty")
        if not (0.0 <= float(self.temperature) <= 2.0):
            raise InvalidRequest(f"temperature {self.temperature} outside [0, 2]")
        if int(self.max_output_tokens) < 1:
            raise InvalidRequest("max_output_tokens must be positive")

    def payload(self) -> dict:
        return {
            "prompt": self.prompt,
            "temperature": float(self.temperature),
            "max_output_tokens": int(self.max_output_tokens),
        }


@dataclass(frozen=True)
class BackendResponse:
    text: str
    backend_id: str
    cached: bool = False


class _Counted:
    """Thread-safe call counter mixed into every concrete backend."""

    def _init_counter(self):
        self._count_lock = threading.Lock()
        self.call_count = 0

    def _bump(self):
        with self._count_lock:
            self.call_count += 1


class EmbeddingBackend(ABC, _Counted):
    backend_id: str

    @property
    @abstractmethod
    def dim(self) -> int | None:
        """Output dimension, or None if not yet known (HTTP before first call)."""

    @abstractmethod
    def embed_text(self, text: str) -> EmbeddingVector: ...

    @abstractmethod
    def embed_image(self, image: str | os.PathLike | bytes) -> EmbeddingVector: ...


class LlmBackend(ABC, _Counted):
    backend_id: str

    @abstractmethod
    def complete(self, req: LlmRequest) -> BackendResponse: ...


def _check_text(text) -> str:
    if not isinstance(text, str):
        raise EmptyInput("text input must be a string")
    norm = normalize_whitespace(text)
    if not norm:
        raise EmptyInput("empty text input")
    return norm


def sniff_image_format(data: bytes) -> str:
    for magic, name in _MAGIC:
        if data.startswith(magic):
            return name
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "webp"
    raise UnsupportedFormat("bytes are not a recognised image format")


def read_image(image) -> tuple[bytes, str]:
    """Return (bytes, cache identity) for a path or raw bytes; validates format."""
    if isinstance(image, (bytes, bytearray)):
        data = bytes(image)
        if not data:
            raise EmptyInput("empty image bytes")
        sniff_image_format(data)
        return data, "sha256:" + hashlib.sha256(data).hexdigest()
    path = Path(image)
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    if path.suffix.lower() not in IMAGE_SUFFIXES:
        raise UnsupportedFormat(f"unsupported image type {path.suffix!r}: {path}")
    data = path.read_bytes()
    if not data:
        raise EmptyInput(f"empty image file: {path}")
    return data, "sha256:" + hashlib.sha256(data).hexdigest()


# ---------------------------------------------------------------------------
# Mocks
# ---------------------------------------------------------------------------

class MockEmbeddingBackend(EmbeddingBackend):
    """Fixture-table encoder with a hash-seeded fallback.

    Text fixtures are matched after whitespace normalisation. Image fixtures
    are keyed by relative path; a query path matches a key if it equals the
    key or ends with ``/<key>`` (longest key wins), so both ``skin rash/a.jpg``
    and ``/data/imgs/skin rash/a.jpg`` resolve to the same fixture. Unfixtured
    inputs get a unit vector from a generator seeded with a 64-bit hash of the
    input.
    """

    def __init__(self, text_fixtures=None, image_fixtures=None, dim=None, backend_id="mock-embed"):
        self._init_counter()
        self.backend_id = backend_id
        self._text = {}
        self._image = {}
        dims = set()
        for k, v in (text_fixtures or {}).items():
            vec = EmbeddingVector(v)
            dims.add(vec.dim)
            self._text[normalize_whitespace(k)] = vec
        for k, v in (image_fixtures or {}).items():
            vec = EmbeddingVector(v)
            dims.add(vec.dim)
            self._image[Path(k).as_posix()] = vec
        if dim is not None:
            dims.add(int(dim))
        if len(dims) > 1:
            raise DimensionMismatch(f"mock fixtures disagree on dimension: {sorted(dims)}")
        self._dim = dims.pop() if dims else DEFAULT_MOCK_DIM
        if self._dim < 1:
            raise DimensionMismatch("dim must be >= 1")

    @property
    def dim(self) -> int:
        return self._dim

    def _seeded(self, key: str) -> EmbeddingVector:
        rng = np.random.default_rng(stable_hash64(key))
        v = rng.standard_normal(self._dim)
        return EmbeddingVector(v / np.linalg.norm(v))

    def embed_text(self, text: str) -> EmbeddingVector:
        norm = _check_text(text)
        self._bump()
        hit = self._text.get(norm)
        return hit if hit is not None else self._seeded("text\x00" + norm)

    def _image_fixture(self, posix: str):
        hit = self._image.get(posix)
        if hit is not None:
            return hit
        best = None
        for key, vec in self._image.items():
            if posix.endswith("/" + key) and (best is None or len(key) > len(best[0])):
                best = (key, vec)
        return best[1] if best else None

    def embed_image(self, image) -> EmbeddingVector:
        if isinstance(image, (bytes, bytearray)):
            _, ident = read_image(image)
            self._bump()
            return self._seeded("image\x00" + ident)
        posix = Path(image).as_posix()
        hit = self._image_fixture(posix)
        if hit is not None:
            self._bump()
            return hit
        read_image(image)
        self._bump()
        return self._seeded("image\x00" + posix)


_PLACEHOLDER = re.compile(r"\{(\w+)\}")


@dataclass(frozen=True)
class MockRule:
    response: str
    pattern: str | None = None
    regex: re.Pattern | None = None

    def match_length(self, prompt: str) -> int:
        """Length of the matched span, or -1 if the rule does not apply."""
        if self.pattern is not None:
            return len(self.pattern) if self.pattern in prompt else -1
        m = self.regex.search(prompt)
        return -1 if m is None else m.end() - m.start()

    def render(self, prompt: str) -> str:
        if self.regex is None:
            return self.response
        groups = self.regex.search(prompt).groupdict()
        return _PLACEHOLDER.sub(lambda g: (groups[g[1]] or "") if g[1] in groups else g[0], self.response)


class MockLlmBackend(LlmBackend):
    """Canned completions selected by the longest matching prompt rule.

    A rule is ``{"pattern": substring, "response": text}`` or
    ``{"regex": expr, "response": template}``; a regex response may reference
    named groups as ``{name}``; other braces are literal. Ties go to the rule registered first. With no
    match, strict mode raises ``NoFixtureMatch``; otherwise the reply is a
    stable digest of the prompt.
    """

    def __init__(self, rules=None, strict=False, backend_id="mock-llm"):
        self._init_counter()
        self.backend_id = backend_id
        self.strict = strict
        self.rules = [self._rule(r) for r in (rules or [])]

    @staticmethod
    def _rule(spec) -> MockRule:
        if isinstance(spec, MockRule):
            return spec
        if "response" not in spec:
            raise ConfigError(f"mock rule without response: {spec!r}")
        if "regex" in spec:
            return MockRule(response=spec["response"], regex=re.compile(spec["regex"], re.S))
        if spec.get("pattern"):
            return MockRule(response=spec["response"], pattern=spec["pattern"])
        raise ConfigError(f"mock rule needs 'pattern' or 'regex': {spec!r}")

    def add_rule(self, response, pattern=None, regex=None):
        spec = {"response": response}
        if pattern is not None:
            spec["pattern"] = pattern
        if regex is not None:
            spec["regex"] = regex
        self.rules.append(self._rule(spec))

    def complete(self, req: LlmRequest) -> BackendResponse:
        self._bump()
        best, best_len = None, -1
        for rule in self.rules:
            n = rule.match_length(req.prompt)
            if n > best_len:
                best, best_len = rule, n
        if best is None:
            if self.strict:
                raise NoFixtureMatch(f"no mock rule matches prompt: {req.prompt[:80]!r}")
            text = "mock completion " + hashlib.sha256(req.prompt.encode("utf-8")).hexdigest()[:12]
        else:
            text = best.render(req.prompt)
        return BackendResponse(text=text.rstrip(), backend_id=self.backend_id)


def load_mock_fixtures(path) -> dict:
    """Read a fixture file.

    Layout::

        {"dim": 8,
         "text_embeddings": {"hello": [1, 0, ...]},
         "image_embeddings": {"skin rash/Image_1.jpg": [...]},
         "completions": [{"pattern": "...", "response": "..."}]}
    """
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: mock fixture file must hold a JSON object")
    return data


def mock_backends_from_fixtures(fixtures: dict | None, strict=False):
    fixtures = fixtures or {}
    embedder = MockEmbeddingBackend(
        fixtures.get("text_embeddings"), fixtures.get("image_embeddings"), dim=fixtures.get("dim")
    )
    llm = MockLlmBackend(fixtures.get("completions"), strict=strict)
    return embedder, llm


# ---------------------------------------------------------------------------
# HTTP
# ---------------------------------------------------------------------------

class _HttpClient:
    def __init__(self, base_url, model, api_key=None, timeout=DEFAULT_TIMEOUT,
                 max_attempts=DEFAULT_MAX_ATTEMPTS, backoff=0.5, transport=None):
        if not base_url:
            raise ConfigError("HTTP backend requires a base_url (or MMQS_BASE_URL)")
        if int(max_attempts) < 1:
            raise ConfigError("max_attempts must be >= 1")
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.max_attempts = int(max_attempts)
        self.backoff = float(backoff)
        headers = {"Content-Type": "application/json"}
        key = api_key if api_key is not None else os.environ.get("MMQS_API_KEY")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        self._client = httpx.Client(timeout=timeout, headers=headers, transport=transport)

    def post(self, route: str, body: dict) -> dict:
        url = f"{self.base_url}{route}"
        last = None
        for attempt in range(1, self.max_attempts + 1):
            try:
                resp = self._client.post(url, json=body)
            except httpx.HTTPError as exc:
                last = BackendUnavailable(f"{url}: {exc!r}", attempts=attempt)
            else:
                if resp.status_code == 429:
                    last = RateLimited(f"{url}: HTTP 429", attempts=attempt)
                elif resp.status_code >= 500:
                    last = BackendUnavailable(f"{url}: HTTP {resp.status_code}", attempts=attempt)
                elif resp.status_code >= 400:
                    raise BackendUnavailable(f"{url}: HTTP {resp.status_code}: {resp.text[:200]}",
                                             attempts=attempt)
                else:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise BackendUnavailable(f"{url}: invalid JSON response", attempts=attempt) from exc
            log.debug("attempt %d/%d failed: %s", attempt, self.max_attempts, last)
            if attempt < self.max_attempts and self.backoff > 0:
                time.sleep(self.backoff * 2 ** (attempt - 1))
        raise last

    def close(self):
        self._client.close()


class HttpLlmBackend(LlmBackend):
    def __init__(self, base_url, model="gpt-3.5-turbo", backend_id=None, **client_kw):
        self._init_counter()
        self._http = _HttpClient(base_url, model, **client_kw)
        self.backend_id = backend_id or f"http-llm:{model}"

    def complete(self, req: LlmRequest) -> BackendResponse:
        self._bump()
        body = {
            "model": self._http.model,
            "messages": [{"role": "user", "content": req.prompt}],
            "temperature": req.temperature,
        }
        data = self._http.post("/v1/chat/completions", body)
        try:
            text = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable("malformed chat completion response") from exc
        if not isinstance(text, str):
            raise BackendUnavailable("chat completion content is not a string")
        return BackendResponse(text=text.rstrip(), backend_id=self.backend_id)


class HttpEmbeddingBackend(EmbeddingBackend):
    def __init__(self, base_url, model="imagebind", dim=None, backend_id=None, **client_kw):
        self._init_counter()
        self._http = _HttpClient(base_url, model, **client_kw)
        self.backend_id = backend_id or f"http-embed:{model}"
        self._dim = int(dim) if dim is not None else None
        self._dim_lock = threading.Lock()

    @property
    def dim(self):
        return self._dim

    def _vector(self, body) -> EmbeddingVector:
        self._bump()
        data = self._http.post("/v1/embeddings", body)
        try:
            vec = EmbeddingVector(data["data"][0]["embedding"])
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendUnavailable("malformed embedding response") from exc
        with self._dim_lock:
            if self._dim is None:
                self._dim = vec.dim
            elif vec.dim != self._dim:
                raise DimensionMismatch(f"backend returned dim {vec.dim}, expected {self._dim}")
        return vec

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._vector({"model": self._http.model, "input": _check_text(text)})

    def embed_image(self, image) -> EmbeddingVector:
        data, _ = read_image(image)
        return self._vector({
            "model": self._http.model,
            "input": base64.b64encode(data).decode("ascii"),
            "input_type": "image",
        })


# ---------------------------------------------------------------------------
# Cache
# ---------------------------------------------------------------------------

def cache_key(backend_id: str, operation: str, payload: Any) -> str:
    blob = json.dumps([backend_id, operation, payload], sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ResponseCache:
    """Key/value store, optionally persisted as an append-only JSONL file.

    Each entry is written as one line under a lock, so a crash leaves at most
    one truncated trailing line, which is skipped on reload.
    """

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self._data: dict[str, Any] = {}
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for line in fh:
                    try:
                        entry = json.loads(line)
                    except ValueError:
                        continue
                    self._data[entry["key"]] = entry["value"]

    def get(self, key):
        with self._lock:
            return self._data.get(key)

    def put(self, key, value):
        with self._lock:
            if key in self._data:
                return
            self._data[key] = value
            if self.path:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"key": key, "value": value}, ensure_ascii=False) + "\n")

    def __len__(self):
        with self._lock:
            return len(self._data)


class CachingLlm(LlmBackend):
    def __init__(self, inner: LlmBackend, cache: ResponseCache):
        self._init_counter()
        self.inner = inner
        self.cache = cache
        self.backend_id = inner.backend_id

    def complete(self, req: LlmRequest) -> BackendResponse:
        key = cache_key(self.backend_id, "complete", req.payload())
        hit = self.cache.get(key)
        if hit is not None:
            return BackendResponse(text=hit, backend_id=self.backend_id, cached=True)
        self._bump()
        resp = self.inner.complete(req)
        self.cache.put(key, resp.text)
        return resp


class CachingEmbedder(EmbeddingBackend):
    def __init__(self, inner: EmbeddingBackend, cache: ResponseCache):
        self._init_counter()
        self.inner = inner
        self.cache = cache
        self.backend_id = inner.backend_id

    @property
    def dim(self):
        return self.inner.dim

    def _cached(self, op, payload, compute):
        key = cache_key(self.backend_id, op, payload)
        hit = self.cache.get(key)
        if hit is not None:
            return EmbeddingVector(hit)
        self._bump()
        vec = compute()
        self.cache.put(key, vec.tolist())
        return vec

    def embed_text(self, text: str) -> EmbeddingVector:
        norm = _check_text(text)
        return self._cached("embed_text", {"input": norm}, lambda: self.inner.embed_text(norm))

    def embed_image(self, image) -> EmbeddingVector:
        if isinstance(image, (bytes, bytearray)):
            payload = {"bytes": hashlib.sha256(bytes(image)).hexdigest()}
        else:
            payload = {"path": Path(image).as_posix()}
        return self._cached("embed_image", payload, lambda: self.inner.embed_image(image))


# ---------------------------------------------------------------------------
# Construction from config
# ---------------------------------------------------------------------------

_HTTP_KEYS = ("api_key", "timeout", "max_attempts", "backoff")


def _http_kwargs(spec: dict) -> dict:
    kw = {k: spec[k] for k in _HTTP_KEYS if spec.get(k) is not None}
    kw.setdefault("timeout", DEFAULT_TIMEOUT)
    return kw


def _base_url(spec):
    return os.environ.get("MMQS_BASE_URL") or spec.get("base_url")


def make_llm(spec: dict, fixtures: dict | None = None) -> LlmBackend:
    kind = spec.get("type", "http")
    if kind == "mock":
        rules = (fixtures or {}).get("completions")
        return MockLlmBackend(rules, strict=bool(spec.get("strict", False)),
                              backend_id=spec.get("backend_id", "mock-llm"))
    if kind == "http":
        return HttpLlmBackend(_base_url(spec), model=spec.get("model", "gpt-3.5-turbo"),
                              backend_id=spec.get("backend_id"), **_http_kwargs(spec))
    raise ConfigError(f"unknown llm backend type {kind!r}")


def make_embedder(spec: dict, fixtures: dict | None = None) -> EmbeddingBackend:
    kind = spec.get("type", "http")
    if kind == "mock":
        fx = fixtures or {}
        return MockEmbeddingBackend(fx.get("text_embeddings"), fx.get("image_embeddings"),
                                    dim=spec.get("dim", fx.get("dim")),
                                    backend_id=spec.get("backend_id", "mock-embed"))
    if kind == "http":
        return HttpEmbeddingBackend(_base_url(spec), model=spec.get("model", "imagebind"),
                                    dim=spec.get("dim"), backend_id=spec.get("backend_id"),
                                    **_http_kwargs(spec))
    raise ConfigError(f"unknown embedding backend type {kind!r}")
