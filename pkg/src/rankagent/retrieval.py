"""User-user similarity: sparse co-occurrence, dense profile embeddings, hybrid blend.

The sparse score is |I_u ∩ I_v| / sqrt(|I_u|·|I_v|) over interacted item sets;
the dense score is cosine similarity of profile embeddings from a pluggable
provider (a seeded feature-hashing embedder for offline runs, or a remote
embeddings endpoint); the hybrid score is their affine blend. All-pairs
retrieval is exact — the populations here are small enough that approximate
indexing would be pointless.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .util import post_json_with_retry, sha256_text


@dataclass(eq=False)
class ProfileEmbedding:
    user: str
    vector: np.ndarray
    provider_tag: str


@dataclass(frozen=True)
class HybridConfig:
    alpha: float = 0.5
    top_k: int = 5

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")


def sparse_similarity(items_u: set[str] | frozenset[str], items_v: set[str] | frozenset[str]) -> float:
    if not items_u or not items_v:
        raise ValueError("sparse similarity undefined for an empty item set")
    return len(items_u & items_v) / ((len(items_u) * len(items_v)) ** 0.5)


def dense_similarity(e_u: np.ndarray, e_v: np.ndarray) -> float:
    if e_u.shape != e_v.shape:
        raise ValueError(f"embedding dimension mismatch: {e_u.shape} vs {e_v.shape}")
    nu, nv = float(np.linalg.norm(e_u)), float(np.linalg.norm(e_v))
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine undefined for a zero vector")
    return float(np.dot(e_u, e_v) / (nu * nv))


def hybrid_similarity(s_sparse: float, s_dense: float, alpha: float) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    return alpha * s_sparse + (1.0 - alpha) * s_dense


class HashingEmbedder:
    """Deterministic profile embedder: seeded feature-hashing of character n-grams.

    Produces unit-norm vectors without any network or model weights, so CI and
    the scripted pipeline behave identically everywhere.
    """

    def __init__(self, dim: int = 64, seed: int = 0, ngram: int = 3):
        self.dim = dim
        self.seed = seed
        self.ngram = ngram
        self.tag = f"hash-ngram{ngram}-d{dim}-s{seed}"

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self._embed_one(t) for t in texts]

    def _embed_one(self, text: str) -> np.ndarray:
        if not text:
            raise ValueError("cannot embed empty text")
        vec = np.zeros(self.dim, dtype=np.float64)
        padded = f" {text.lower()} "
        for i in range(max(1, len(padded) - self.ngram + 1)):
            gram = padded[i : i + self.ngram]
            h = hashlib.sha256(f"{self.seed}:{gram}".encode("utf-8")).digest()
            idx = int.from_bytes(h[:4], "big") % self.dim
            sign = 1.0 if h[4] & 1 else -1.0
            vec[idx] += sign
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            vec[0] = 1.0
            norm = 1.0
        return vec / norm


class RemoteEmbedder:
    """Calls an embeddings endpoint: POST {"texts": [...]} -> {"vectors": [[...]]}.

    Requests are batched (up to ``batch_size`` texts) and retried with backoff.
    """

    def __init__(
        self,
        endpoint: str,
        tag: str = "remote",
        batch_size: int = 32,
        attempts: int = 3,
        timeout: float = 30.0,
        auth_env: str = "EMBEDDINGS_API_KEY",
    ):
        self.endpoint = endpoint
        self.tag = tag
        self.batch_size = batch_size
        self.attempts = attempts
        self.timeout = timeout
        self.auth_env = auth_env

    def _headers(self) -> dict:
        token = os.environ.get(self.auth_env, "")
        return {"Authorization": f"Bearer {token}"} if token else {}

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            batch = list(texts[start : start + self.batch_size])
            body = post_json_with_retry(
                self.endpoint,
                {"texts": batch},
                headers=self._headers(),
                attempts=self.attempts,
                timeout=self.timeout,
            )
            vectors = body["vectors"]
            if len(vectors) != len(batch):
                raise ValueError(f"embeddings endpoint returned {len(vectors)} vectors for {len(batch)} texts")
            out.extend(np.asarray(v, dtype=np.float64) for v in vectors)
        dims = {v.shape for v in out}
        if len(dims) > 1:
            raise ValueError(f"embeddings endpoint returned mixed dimensions: {dims}")
        return out


def embed_profile(provider, user: str, text: str) -> ProfileEmbedding:
    vector = provider.embed([text])[0]
    if not np.all(np.isfinite(vector)):
        raise ValueError(f"non-finite embedding for user {user}")
    return ProfileEmbedding(user=user, vector=vector, provider_tag=provider.tag)


class EmbeddingCache:
    """Disk cache keyed by (provider_tag, text hash) so repeated runs skip the network."""

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._store: dict[tuple[str, str], list[float]] = {}
        if self.path and self.path.exists():
            with open(self.path, encoding="utf-8") as f:
                for line in f:
                    rec = json.loads(line)
                    self._store[(rec["provider"], rec["key"])] = rec["vector"]

    def get(self, provider_tag: str, text: str) -> np.ndarray | None:
        vec = self._store.get((provider_tag, sha256_text(text)))
        return None if vec is None else np.asarray(vec, dtype=np.float64)

    def put(self, provider_tag: str, text: str, vector: np.ndarray) -> None:
        self._store[(provider_tag, sha256_text(text))] = [float(x) for x in vector]

    def save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "w", encoding="utf-8") as f:
            for (provider, key), vec in sorted(self._store.items()):
                f.write(json.dumps({"provider": provider, "key": key, "vector": vec}) + "\n")

    def embed_cached(self, provider, texts: Sequence[str]) -> list[np.ndarray]:
        """Embed texts, pulling hits from the cache and storing misses."""
        out: list[np.ndarray | None] = [self.get(provider.tag, t) for t in texts]
        missing = [i for i, v in enumerate(out) if v is None]
        if missing:
            fresh = provider.embed([texts[i] for i in missing])
            for i, vec in zip(missing, fresh):
                self.put(provider.tag, texts[i], vec)
                out[i] = vec
        return out  # type: ignore[return-value]


class UserSimilarityIndex:
    """All-pairs hybrid user similarity over immutable item sets and embeddings."""

    def __init__(
        self,
        item_sets: Mapping[str, set[str] | frozenset[str]],
        embeddings: Mapping[str, ProfileEmbedding],
        config: HybridConfig = HybridConfig(),
    ):
        self.item_sets = {u: frozenset(v) for u, v in item_sets.items()}
        self.embeddings = dict(embeddings)
        self.config = config
        tags = {e.provider_tag for e in self.embeddings.values()}
        if len(tags) > 1:
            raise ValueError(f"mixed embedding providers in one index: {tags}")
        dims = {e.vector.shape for e in self.embeddings.values()}
        if len(dims) > 1:
            raise ValueError(f"mixed embedding dimensions in one index: {dims}")

    def require(self, user: str) -> None:
        if user not in self.item_sets or user not in self.embeddings:
            raise KeyError(f"unknown user {user!r} (needs both an item set and a profile embedding)")

    def sparse(self, u: str, v: str) -> float:
        return sparse_similarity(self.item_sets[u], self.item_sets[v])

    def dense(self, u: str, v: str) -> float:
        return dense_similarity(self.embeddings[u].vector, self.embeddings[v].vector)

    def hybrid(self, u: str, v: str, alpha: float | None = None) -> float:
        a = self.config.alpha if alpha is None else alpha
        return hybrid_similarity(self.sparse(u, v), self.dense(u, v), a)

    def top_similar_users(self, user: str, k: int | None = None) -> list[tuple[str, float]]:
        """Other users ranked by hybrid score desc, ties by ascending user id."""
        self.require(user)
        k = self.config.top_k if k is None else k
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = [
            (v, self.hybrid(user, v))
            for v in self.item_sets
            if v != user and v in self.embeddings
        ]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]


def build_similarity_index(
    item_sets: Mapping[str, set[str] | frozenset[str]],
    profile_texts: Mapping[str, str],
    provider=None,
    cache: EmbeddingCache | None = None,
    config: HybridConfig = HybridConfig(),
) -> UserSimilarityIndex:
    """Embed every user's profile text (through the cache when given) and index them."""
    provider = provider or HashingEmbedder()
    users = sorted(u for u in item_sets if u in profile_texts)
    texts = [profile_texts[u] for u in users]
    if cache is not None:
        vectors = cache.embed_cached(provider, texts)
    else:
        vectors = provider.embed(texts)
    embeddings = {
        u: ProfileEmbedding(user=u, vector=vec, provider_tag=provider.tag)
        for u, vec in zip(users, vectors)
    }
    return UserSimilarityIndex(
        item_sets={u: item_sets[u] for u in users}, embeddings=embeddings, config=config
    )
