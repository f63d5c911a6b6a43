"""Text embedding providers.

The engine only assumes `embed(text) -> unit vector of fixed dim`. The
built-in provider is a hashed bag-of-words embedder: each word hashes to a
dimension and a sign via blake2b, counts accumulate, and the vector is
L2-normalized. Deterministic across runs and platforms, which is what the
retrieval tests and planted-geometry corpora rely on.
"""

from __future__ import annotations

import hashlib
import re
from typing import Protocol

import numpy as np


class Embedder(Protocol):
    dim: int
    embedder_id: str

    def embed(self, text: str) -> np.ndarray: ...


_WORD_RE = re.compile(r"[A-Za-z0-9]+")


class HashedBagEmbedder:
    """Deterministic hashed bag-of-words embedder (default dim 256)."""

    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValueError("embedding dim must be >= 8")
        self.dim = dim
        self.embedder_id = f"hashbow-{dim}"
        self._cache: dict[str, np.ndarray] = {}

    def _slot(self, word: str) -> tuple[int, float]:
        digest = hashlib.blake2b(word.encode("utf-8"), digest_size=8).digest()
        value = int.from_bytes(digest, "little")
        index = value % self.dim
        sign = 1.0 if (value >> 63) & 1 else -1.0
        return index, sign

    def embed(self, text: str) -> np.ndarray:
        cached = self._cache.get(text)
        if cached is not None:
            return cached
        vec = np.zeros(self.dim, dtype=np.float64)
        for word in _WORD_RE.findall(text.lower()):
            index, sign = self._slot(word)
            vec[index] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
        else:
            vec /= norm
        result = vec.astype(np.float32)
        if len(self._cache) < 200_000:
            self._cache[text] = result
        return result


class HttpEmbedder:
    """Embedder backed by an HTTP endpoint: POST {texts: [...]} -> {vectors: [[...]]}."""

    def __init__(self, url: str, dim: int, api_key: str | None = None, timeout: float = 30.0):
        self.url = url
        self.dim = dim
        self.embedder_id = f"http-{dim}"
        self.api_key = api_key
        self.timeout = timeout

    def embed(self, text: str) -> np.ndarray:
        import requests

        headers = {}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        resp = requests.post(self.url, json={"texts": [text]}, headers=headers, timeout=self.timeout)
        resp.raise_for_status()
        vec = np.asarray(resp.json()["vectors"][0], dtype=np.float64)
        if vec.shape != (self.dim,):
            raise ValueError(f"endpoint returned dim {vec.shape}, expected {self.dim}")
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            raise ValueError("endpoint returned a zero vector")
        return (vec / norm).astype(np.float32)


def euclidean(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.linalg.norm(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)))


def normalize(vec: np.ndarray) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (arr / norm).astype(np.float32)
