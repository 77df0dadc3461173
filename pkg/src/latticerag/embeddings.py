"""Embedding providers with passage/query prefix discipline.

Every text goes out as ``"passage: ..."`` or ``"query: ..."``. Three sources:

    remote  - HTTP service: POST {"kind", "text"} -> {"vector", "tokens"?}
    file    - precomputed vectors, one ``key<TAB>v1 v2 ...`` line each
    hashing - deterministic signed feature hashing, for offline runs
"""

from __future__ import annotations

import abc
import hashlib
import logging
import re
import threading
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

PASSAGE, QUERY = "passage", "query"
PREFIXES = {PASSAGE: "passage: ", QUERY: "query: "}
DEFAULT_DIMENSION = 1024


class EmbeddingError(Exception):
    """Raised when a provider cannot produce a vector."""


class UnknownKeyError(EmbeddingError, KeyError):
    """File-mode lookup for a key that is not in the vector file."""


@dataclass(frozen=True)
class EmbeddingRequest:
    """Text to embed; ``key`` names the record in file mode (chunk id)."""

    kind: str
    text: str
    key: str | None = None

    def __post_init__(self):
        if self.kind not in PREFIXES:
            raise ValueError(f"kind must be 'passage' or 'query', got {self.kind!r}")
        if not self.text.strip():
            raise ValueError("embedding text is empty")

    @property
    def prefixed(self) -> str:
        return PREFIXES[self.kind] + self.text

    @property
    def lookup_key(self) -> str:
        return self.key if self.key is not None else self.prefixed


def load_vector_file(path) -> dict[str, np.ndarray]:
    """Read ``key<TAB>floats`` lines into a dict.

    Blank lines are skipped. Raises :class:`ValueError` with the line number on
    malformed lines, duplicate keys, or inconsistent dimensions.
    """
    vectors: dict[str, np.ndarray] = {}
    dim = None
    first_line = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            key, sep, rest = line.partition("\t")
            if not sep or not key:
                raise ValueError(f"{path}:{lineno}: expected 'key<TAB>values'")
            try:
                vec = np.array([float(t) for t in rest.split()], dtype=float)
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if vec.size == 0 or not np.all(np.isfinite(vec)):
                raise ValueError(f"{path}:{lineno}: vector is empty or non-finite")
            if key in vectors:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            if dim is None:
                dim, first_line = vec.size, lineno
            elif vec.size != dim:
                raise ValueError(
                    f"{path}:{lineno}: dimension {vec.size} differs from "
                    f"dimension {dim} on line {first_line}"
                )
            vectors[key] = vec
    return vectors


def write_vector_file(path, vectors: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in vectors.items():
            if "\t" in key or "\n" in key:
                raise ValueError(f"key {key!r} contains a tab or newline")
            fh.write(key + "\t" + " ".join(repr(float(v)) for v in vec) + "\n")


class EmbeddingProvider(abc.ABC):
    """Turns an :class:`EmbeddingRequest` into a vector."""

    dimension: int

    def __init__(self):
        self.calls = 0
        self.sent: list[str] = []
        self._count_lock = threading.Lock()

    def embed(self, request: EmbeddingRequest) -> np.ndarray:
        with self._count_lock:
            self.calls += 1
            self.sent.append(request.prefixed)
        try:
            vec = np.asarray(self._embed(request), dtype=float)
        except (TypeError, ValueError) as exc:
            raise EmbeddingError(f"provider returned a malformed vector: {exc}") from exc
        if vec.shape != (self.dimension,):
            raise EmbeddingError(
                f"provider returned dimension {vec.shape}, expected {self.dimension}"
            )
        if not np.all(np.isfinite(vec)):
            raise EmbeddingError("provider returned non-finite values")
        return vec

    def embed_passage(self, text: str, key: str | None = None) -> np.ndarray:
        return self.embed(EmbeddingRequest(PASSAGE, text, key))

    def embed_query(self, text: str) -> np.ndarray:
        return self.embed(EmbeddingRequest(QUERY, text))

    @abc.abstractmethod
    def _embed(self, request: EmbeddingRequest) -> np.ndarray:
        ...


class FileProvider(EmbeddingProvider):
    """Serves vectors from a vector file; unknown keys are an error."""

    def __init__(self, vectors: dict | str | Path, dimension: int | None = None):
        super().__init__()
        if not isinstance(vectors, dict):
            vectors = load_vector_file(vectors)
        self.vectors = vectors
        dims = {v.size for v in vectors.values()}
        if len(dims) > 1:
            raise ValueError(f"mixed vector dimensions {sorted(dims)}")
        found = dims.pop() if dims else dimension
        if dimension is not None and found != dimension:
            raise ValueError(f"vector file dimension {found} != configured {dimension}")
        self.dimension = found if found is not None else DEFAULT_DIMENSION

    def _embed(self, request):
        try:
            return self.vectors[request.lookup_key]
        except KeyError:
            raise UnknownKeyError(f"no vector for {request.lookup_key!r}") from None


_TOKEN = re.compile(r"[^\W_]+")


class HashingProvider(EmbeddingProvider):
    """Signed feature hashing of lower-cased word unigrams and bigrams.

    The prefix is stripped before hashing so that a query and a passage with
    the same words land near each other. Not a semantic model; it exists so
    the whole pipeline runs offline and reproducibly.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION):
        super().__init__()
        self.dimension = int(dimension)

    def _features(self, text: str):
        words = _TOKEN.findall(text.lower())
        yield from words
        yield from (a + " " + b for a, b in zip(words, words[1:]))

    def _embed(self, request):
        vec = np.zeros(self.dimension)
        for feat in self._features(request.text):
            digest = hashlib.blake2b(feat.encode("utf-8"), digest_size=8).digest()
            h = int.from_bytes(digest, "little")
            vec[h % self.dimension] += 1.0 if (h >> 63) & 1 else -1.0
        if not vec.any():
            vec[0] = 1.0
        return vec


class RemoteProvider(EmbeddingProvider):
    """JSON-over-HTTP embedding service.

    Request body ``{"kind": "passage"|"query", "text": <prefixed text>}``;
    response body ``{"vector": [...], "tokens": int?}``.
    """

    def __init__(self, endpoint: str, dimension: int = DEFAULT_DIMENSION,
                 auth_header: str | None = None, token: str | None = None,
                 timeout: float = 30.0, client=None):
        """``token`` goes in ``auth_header`` (default ``Authorization``, sent as
        ``Bearer <token>``); with a custom header name it is sent verbatim."""
        super().__init__()
        import httpx

        self.endpoint = endpoint
        self.dimension = int(dimension)
        self.headers = {}
        if token:
            if auth_header in (None, "Authorization"):
                self.headers["Authorization"] = f"Bearer {token}"
            else:
                self.headers[auth_header] = token
        self._client = client or httpx.Client(timeout=timeout)
        self.tokens = 0

    def _embed(self, request):
        import httpx

        try:
            resp = self._client.post(self.endpoint, headers=self.headers,
                                     json={"kind": request.kind, "text": request.prefixed})
            resp.raise_for_status()
            body = resp.json()
        except (httpx.HTTPError, ValueError) as exc:
            raise EmbeddingError(f"embedding service failed: {exc}") from exc
        if not isinstance(body, dict) or "vector" not in body:
            raise EmbeddingError("embedding response has no 'vector' field")
        self.tokens += int(body.get("tokens") or 0)
        return body["vector"]


class CachedProvider(EmbeddingProvider):
    """Memoises another provider; repeated requests cost no provider calls."""

    def __init__(self, inner: EmbeddingProvider):
        super().__init__()
        self.inner = inner
        self.dimension = inner.dimension
        self._cache: dict = {}
        self._lock = threading.Lock()
        self.hits = 0

    def _embed(self, request):
        key = (request.kind, request.text, request.key)
        with self._lock:
            if key in self._cache:
                self.hits += 1
                return self._cache[key]
            # held across the call so concurrent misses do not double-embed
            vec = self.inner.embed(request)
            self._cache[key] = vec
            return vec


def make_provider(mode: str, *, vector_file=None, endpoint=None,
                  dimension: int = DEFAULT_DIMENSION, cache: bool = True, **kwargs) -> EmbeddingProvider:
    if mode == "file":
        if vector_file is None:
            raise ValueError("file mode needs provider.vector_file")
        provider = FileProvider(vector_file, dimension)
    elif mode == "hashing":
        provider = HashingProvider(dimension)
    elif mode == "remote":
        if not endpoint:
            raise ValueError("remote mode needs provider.endpoint")
        provider = RemoteProvider(endpoint, dimension, **kwargs)
    else:
        raise ValueError(f"unknown provider mode {mode!r}")
    return CachedProvider(provider) if cache else provider

