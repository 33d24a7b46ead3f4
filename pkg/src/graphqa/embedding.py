"""Text embedding backends.

HashedEmbedder is fully deterministic (feature-hashed bag of words) and runs
offline; it backs every test and the default local setup. RemoteEmbedder
calls an HTTP embeddings endpoint and is only exercised with an injected
session in tests.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re

import numpy as np

from .errors import InvalidArgumentError, LLMError

logger = logging.getLogger(__name__)

DEFAULT_DIM = 256

_WORD = re.compile(r"\w+")


class HashedEmbedder:
    """Feature-hashed bag-of-words embedder.

    Each token hashes to one coordinate with a hash-derived sign; the final
    vector is L2-normalized. Empty text embeds to the zero vector.
    """

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim < 1:
            raise InvalidArgumentError("dim must be >= 1")
        self.dim = dim

    @property
    def identity(self) -> str:
        return f"hashed-bow/{self.dim}"

    def embed(self, text: str) -> np.ndarray:
        vec = np.zeros(self.dim, dtype=np.float64)
        for token in _WORD.findall(text.casefold()):
            digest = hashlib.sha256(token.encode("utf-8")).digest()
            idx = int.from_bytes(digest[:4], "big") % self.dim
            sign = 1.0 if digest[4] & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm > 0.0:
            vec /= norm
        return vec

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            out[i] = self.embed(text)
        return out


class RemoteEmbedder:
    """Embeddings over an OpenAI-style HTTP endpoint.

    The API key is read from the environment at call time, never stored in
    config files.
    """

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = "GRAPHQA_EMBED_API_KEY",
        dim: int = DEFAULT_DIM,
        timeout: float = 30.0,
        session=None,
    ):
        import requests

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.dim = dim
        self.timeout = timeout
        self._session = session or requests.Session()

    @property
    def identity(self) -> str:
        return f"remote/{self.model}"

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> np.ndarray:
        key = os.environ.get(self.api_key_env)
        if not key:
            raise LLMError(f"missing API key: set {self.api_key_env}")
        resp = self._session.post(
            f"{self.base_url}/embeddings",
            json={"model": self.model, "input": texts},
            headers={"Authorization": f"Bearer {key}"},
            timeout=self.timeout,
        )
        if resp.status_code != 200:
            raise LLMError(f"embeddings endpoint returned {resp.status_code}")
        payload = resp.json()
        try:
            rows = [item["embedding"] for item in payload["data"]]
        except (KeyError, TypeError) as exc:
            raise LLMError(f"malformed embeddings response: {exc}") from exc
        if len(rows) != len(texts):
            raise LLMError(
                f"embeddings response has {len(rows)} rows for {len(texts)} inputs"
            )
        out = np.asarray(rows, dtype=np.float64)
        if out.ndim != 2 or out.shape[1] != self.dim:
            raise LLMError(f"expected dim {self.dim}, got shape {out.shape}")
        return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity over already-normalized vectors, rounded to 12
    decimal places so equal-by-construction scores compare equal exactly."""
    return round(float(np.dot(a, b)), 12)
