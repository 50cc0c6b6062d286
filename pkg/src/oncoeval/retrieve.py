"""Few-shot example selection over the training corpus: seeded random,
Okapi BM25 over an inverted index, or cosine similarity against vectors
from an external embedding endpoint.

BM25 uses the non-negative idf variant ln((N - df + 0.5) / (df + 0.5) + 1)
with term-frequency saturation k1 and length normalization b. Ranking ties
break by ascending instance id for every method.
"""

from __future__ import annotations

import hashlib
import json
import time
from bisect import bisect_left
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from math import log
from pathlib import Path

import httpx
import numpy as np

from oncoeval.corpus import InstructionInstance
from oncoeval.errors import BackendError, ValidationError
from oncoeval.metrics import normalize
from oncoeval.util import derive_rng


@dataclass
class LexicalIndex:
    vocabulary: dict[str, int]  # term -> document frequency
    postings: dict[str, list[tuple[int, int]]]  # term -> [(doc ordinal, tf)], sorted
    doc_lengths: list[int]
    avg_doc_length: float
    k1: float
    b: float
    instance_ids: list[str]


@dataclass
class EmbeddingMatrix:
    vectors: np.ndarray  # (count, dim) float32, unit rows
    dim: int
    source_tag: str


@dataclass
class DenseIndex:
    """EmbeddingMatrix bound to the corpus instance ids (row-aligned)."""

    matrix: EmbeddingMatrix
    instance_ids: list[str]


@dataclass(frozen=True)
class ScoredExample:
    instance_id: str
    score: float
    rank: int


@dataclass(frozen=True)
class EmbeddingEndpointConfig:
    url: str
    source_tag: str
    batch_size: int = 32
    timeout_ms: int = 10_000
    max_retries: int = 3
    max_in_flight: int = 2


def build_lexical_index(
    corpus: list[InstructionInstance], k1: float = 1.2, b: float = 0.75
) -> LexicalIndex:
    """Inverted index over normalized instance contexts."""
    if not corpus:
        raise ValidationError("cannot build an index over an empty corpus")
    if k1 <= 0:
        raise ValidationError(f"k1 must be > 0, got {k1}")
    if not 0.0 <= b <= 1.0:
        raise ValidationError(f"b must be in [0, 1], got {b}")
    postings: dict[str, list[tuple[int, int]]] = {}
    doc_lengths: list[int] = []
    for ordinal, inst in enumerate(corpus):
        tokens = normalize(inst.context)
        doc_lengths.append(len(tokens))
        counts: dict[str, int] = {}
        for token in tokens:
            counts[token] = counts.get(token, 0) + 1
        for term in sorted(counts):
            postings.setdefault(term, []).append((ordinal, counts[term]))
    vocabulary = {term: len(plist) for term, plist in postings.items()}
    return LexicalIndex(
        vocabulary=vocabulary,
        postings=postings,
        doc_lengths=doc_lengths,
        avg_doc_length=sum(doc_lengths) / len(doc_lengths),
        k1=k1,
        b=b,
        instance_ids=[inst.id for inst in corpus],
    )


def _term_frequency(index: LexicalIndex, term: str, ordinal: int) -> int:
    plist = index.postings.get(term)
    if not plist:
        return 0
    pos = bisect_left(plist, (ordinal, 0))
    if pos < len(plist) and plist[pos][0] == ordinal:
        return plist[pos][1]
    return 0


def bm25_score(query_tokens: list[str], doc_ordinal: int, index: LexicalIndex) -> float:
    """Okapi BM25 score of one document for a tokenized query.

    Query terms contribute once per occurrence in the query, so repeating
    a term doubles its summand.
    """
    n_docs = len(index.doc_lengths)
    if not 0 <= doc_ordinal < n_docs:
        raise ValidationError(f"document ordinal {doc_ordinal} out of range")
    length_norm = index.k1 * (
        1.0 - index.b + index.b * index.doc_lengths[doc_ordinal] / index.avg_doc_length
    )
    score = 0.0
    for term in query_tokens:
        tf = _term_frequency(index, term, doc_ordinal)
        if tf == 0:
            continue
        df = index.vocabulary[term]
        idf = log((n_docs - df + 0.5) / (df + 0.5) + 1.0)
        score += idf * tf * (index.k1 + 1.0) / (tf + length_norm)
    return score


def _content_hash(texts: list[str], source_tag: str) -> str:
    digest = hashlib.sha256()
    digest.update(source_tag.encode("utf-8"))
    for text in texts:
        digest.update(b"\x1e")
        digest.update(text.encode("utf-8"))
    return digest.hexdigest()


def _post_embedding_batch(batch: list[str], endpoint: EmbeddingEndpointConfig) -> tuple[list[list[float]], int]:
    last_error = "no attempt made"
    for attempt in range(1, endpoint.max_retries + 1):
        try:
            response = httpx.post(
                endpoint.url,
                json={"texts": batch},
                timeout=endpoint.timeout_ms / 1000.0,
            )
        except httpx.HTTPError as exc:
            last_error = f"transport error: {exc}"
        else:
            if response.status_code == 200:
                body = response.json()
                return body["vectors"], int(body["dim"])
            last_error = f"HTTP status {response.status_code}"
            if response.status_code < 500:
                break
        if attempt < endpoint.max_retries:
            time.sleep(0.25 * 2 ** (attempt - 1))
    raise BackendError(f"embedding endpoint failed after retries ({last_error})")


def embed_corpus(
    texts: list[str],
    endpoint: EmbeddingEndpointConfig,
    cache_dir: str | Path | None = None,
) -> EmbeddingMatrix:
    """Embed texts through the endpoint, L2-normalize, and cache to disk.

    The cache is a little-endian float32 matrix sidecar plus a JSON
    manifest {dim, count, source_tag, content_hash}; a rerun over the
    same texts loads the cache and makes zero endpoint calls.
    """
    if not texts:
        raise ValidationError("embed_corpus needs at least one text")
    content_hash = _content_hash(texts, endpoint.source_tag)
    bin_path = manifest_path = None
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        cache_dir.mkdir(parents=True, exist_ok=True)
        stem = f"{endpoint.source_tag}-{content_hash[:16]}"
        bin_path = cache_dir / f"{stem}.bin"
        manifest_path = cache_dir / f"{stem}.json"
        if bin_path.exists() and manifest_path.exists():
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
            if manifest["content_hash"] == content_hash and manifest["count"] == len(texts):
                raw = np.frombuffer(bin_path.read_bytes(), dtype="<f4")
                vectors = raw.reshape(manifest["count"], manifest["dim"]).copy()
                return EmbeddingMatrix(vectors, manifest["dim"], manifest["source_tag"])

    batches = [texts[i : i + endpoint.batch_size] for i in range(0, len(texts), endpoint.batch_size)]
    with ThreadPoolExecutor(max_workers=max(1, endpoint.max_in_flight)) as pool:
        results = list(pool.map(lambda b: _post_embedding_batch(b, endpoint), batches))

    dim = results[0][1]
    rows: list[list[float]] = []
    for batch_vectors, batch_dim in results:
        if batch_dim != dim:
            raise BackendError(f"embedding dimension mismatch across batches: {batch_dim} != {dim}")
        for vector in batch_vectors:
            if len(vector) != dim:
                raise BackendError(f"embedding dimension mismatch: {len(vector)} != {dim}")
            rows.append(vector)

    matrix = np.asarray(rows, dtype="<f4")
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValidationError("endpoint returned a zero embedding vector")
    matrix = (matrix / norms).astype("<f4")

    if bin_path is not None:
        bin_path.write_bytes(matrix.tobytes(order="C"))
        manifest_path.write_text(
            json.dumps(
                {
                    "dim": dim,
                    "count": len(texts),
                    "source_tag": endpoint.source_tag,
                    "content_hash": content_hash,
                },
                sort_keys=True,
            )
            + "\n",
            encoding="utf-8",
        )
    return EmbeddingMatrix(matrix, dim, endpoint.source_tag)


def bind_embeddings(corpus: list[InstructionInstance], matrix: EmbeddingMatrix) -> DenseIndex:
    if len(corpus) != len(matrix.vectors):
        raise ValidationError(
            f"embedding matrix has {len(matrix.vectors)} rows for {len(corpus)} instances"
        )
    return DenseIndex(matrix, [inst.id for inst in corpus])


def _ranked(scored: list[tuple[float, str]], k: int) -> list[ScoredExample]:
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [
        ScoredExample(instance_id=iid, score=score, rank=rank)
        for rank, (score, iid) in enumerate(scored[:k], start=1)
    ]


def retrieve_topk(
    query: InstructionInstance,
    k: int,
    method: str,
    state: LexicalIndex | DenseIndex,
    seed: int = 0,
    query_vector: np.ndarray | None = None,
) -> list[ScoredExample]:
    """Top-k examples for a query; never returns the query itself.

    random: seeded uniform sample without replacement (the per-query rng
    derives from (seed, query id)), scores 0, returned in ascending id
    order. lexical: BM25 over the index. dense: cosine of unit vectors,
    needs both a DenseIndex and the query's embedding. Results sort by
    descending score, ties by ascending instance id, ranks 1..k.
    """
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if method == "random":
        candidates = [iid for iid in state.instance_ids if iid != query.id]
        rng = derive_rng(seed, query.id)
        chosen = rng.sample(candidates, min(k, len(candidates)))
        return _ranked([(0.0, iid) for iid in chosen], k)
    if method == "lexical":
        if not isinstance(state, LexicalIndex):
            raise ValidationError("lexical retrieval requires a LexicalIndex")
        query_tokens = normalize(query.context)
        scored = [
            (bm25_score(query_tokens, ordinal, state), iid)
            for ordinal, iid in enumerate(state.instance_ids)
            if iid != query.id
        ]
        return _ranked(scored, k)
    if method == "dense":
        if not isinstance(state, DenseIndex):
            raise ValidationError("dense retrieval requires a DenseIndex (bind_embeddings)")
        if query_vector is None:
            raise ValidationError("dense retrieval requires the query embedding vector")
        vector = np.asarray(query_vector, dtype="<f4")
        norm = float(np.linalg.norm(vector))
        if norm == 0:
            raise ValidationError("query embedding has zero norm")
        vector = vector / norm
        vectors = state.matrix.vectors
        scored = [
            (float(np.dot(vectors[ordinal], vector)), iid)
            for ordinal, iid in enumerate(state.instance_ids)
            if iid != query.id
        ]
        return _ranked(scored, k)
    raise ValidationError(f"unknown retrieval method {method!r}")
