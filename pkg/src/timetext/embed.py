"""Text embedders: a deterministic hash stub plus adapters for real models.

Two access patterns are supported, matching what the forecasting models
consume: whole-text sentence vectors of dimension E, and per-token
embedding matrices of shape (N, E) with a padding mask.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np

__all__ = [
    "TextEmbedder",
    "HashStubEmbedder",
    "CallableSentenceEmbedder",
    "word_tokens",
    "make_embedder",
]

_WORD_RE = re.compile(r"[a-z0-9]+")


def word_tokens(text: str) -> list[str]:
    """Fixed tokenization rule: lowercase, split on non-alphanumerics."""
    return _WORD_RE.findall(text.lower())


class TextEmbedder:
    """Interface: deterministic sentence vectors and padded token matrices.

    `embed_sentence` returns a unit-L2-norm vector of length `dim`; the
    empty text maps to the fixed first-basis-vector sentinel so cosine
    similarity stays defined. `tokenize(text, N)` returns ids in
    [0, vocab_size), an (N, dim) matrix with zeroed padding rows, and a
    boolean keep-mask; overlong texts keep their head.
    """

    dim: int
    vocab_size: int

    def embed_sentence(self, text: str) -> np.ndarray:
        raise NotImplementedError

    def tokenize(self, text: str, max_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        raise NotImplementedError

    def sentinel(self) -> np.ndarray:
        v = np.zeros(self.dim)
        v[0] = 1.0
        return v


class HashStubEmbedder(TextEmbedder):
    """Seeded hash-derived embeddings; no model, fully deterministic.

    Each distinct token gets a fixed unit vector drawn from a generator
    keyed by (seed, token), so equal texts embed identically across
    processes and platforms.
    """

    def __init__(self, dim: int = 64, vocab_size: int = 4096, seed: int = 0):
        self.dim = dim
        self.vocab_size = vocab_size
        self.seed = seed
        self._vec_cache: dict[str, np.ndarray] = {}

    def _digest(self, token: str) -> bytes:
        return hashlib.blake2b(f"{self.seed}:{token}".encode(), digest_size=16).digest()

    def token_id(self, token: str) -> int:
        return int.from_bytes(self._digest(token)[:8], "big") % self.vocab_size

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._vec_cache.get(token)
        if vec is None:
            key = int.from_bytes(self._digest(token)[8:], "big")
            rng = np.random.Generator(np.random.PCG64(key))
            vec = rng.normal(size=self.dim)
            vec /= np.linalg.norm(vec)
            self._vec_cache[token] = vec
        return vec

    def embed_sentence(self, text: str) -> np.ndarray:
        tokens = word_tokens(text)
        if not tokens:
            return self.sentinel()
        mean = np.mean([self.token_vector(t) for t in tokens], axis=0)
        norm = np.linalg.norm(mean)
        if norm < 1e-12:
            return self.sentinel()
        return mean / norm

    def tokenize(self, text: str, max_len: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if max_len < 1:
            raise ValueError("max_len must be >= 1")
        tokens = word_tokens(text)[:max_len]
        ids = np.zeros(max_len, dtype=np.int64)
        matrix = np.zeros((max_len, self.dim))
        mask = np.zeros(max_len, dtype=bool)
        for i, tok in enumerate(tokens):
            ids[i] = self.token_id(tok)
            matrix[i] = self.token_vector(tok)
            mask[i] = True
        return ids, matrix, mask


class CallableSentenceEmbedder(TextEmbedder):
    """Adapter for an external sentence-embedding callable.

    Wraps e.g. a sentence-transformers `encode`; output is re-normalized
    and the empty-text sentinel is preserved. Token mode is not offered
    by this adapter.
    """

    def __init__(self, fn, dim: int, vocab_size: int = 0):
        self._fn = fn
        self.dim = dim
        self.vocab_size = vocab_size

    def embed_sentence(self, text: str) -> np.ndarray:
        if text == "":
            return self.sentinel()
        vec = np.asarray(self._fn(text), dtype=np.float64).reshape(-1)
        if vec.shape[0] != self.dim:
            raise ValueError(f"embedding callable returned dim {vec.shape[0]}, expected {self.dim}")
        norm = np.linalg.norm(vec)
        return self.sentinel() if norm < 1e-12 else vec / norm

    def tokenize(self, text: str, max_len: int):
        raise NotImplementedError("sentence-only adapter; use the stub or a token-capable embedder")


def make_embedder(mode: str = "stub", dim: int | None = None, seed: int = 0,
                  model_name: str = "BAAI/bge-small-en-v1.5") -> TextEmbedder:
    """Build an embedder for a config mode: `stub`, `token`, or `sentence`.

    `stub` and `token` both return the hash embedder (it serves both
    access patterns); `sentence` loads a sentence-transformers model and
    needs that optional dependency plus local model weights.
    """
    if mode in ("stub", "token"):
        return HashStubEmbedder(dim=dim or 64, seed=seed)
    if mode == "sentence":
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise RuntimeError("mode 'sentence' needs the sentence-transformers package") from exc
        model = SentenceTransformer(model_name)
        size = model.get_sentence_embedding_dimension()
        return CallableSentenceEmbedder(lambda t: model.encode([t])[0], dim=dim or size)
    raise ValueError(f"unknown embedder mode {mode!r}")
