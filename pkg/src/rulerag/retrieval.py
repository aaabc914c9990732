"""Sparse (BM25) and dense retrieval, and rule-guided retrieval on top."""

from __future__ import annotations

import json
import math
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from rulerag.kg import Document
from rulerag.matching import Embedder, RuleMatch, embedder_from_config
from rulerag.rules import Rule

MAGIC = "RULERAG-IDX-1"
DEFAULT_K1 = 0.9
DEFAULT_B = 0.4

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


@dataclass(frozen=True)
class RetrievedDoc:
    doc_id: int
    score: float
    via_rule: str | None = None


def _rank(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the ``k`` best scores, ties broken by lower index."""
    if k <= 0:
        return []
    n = len(scores)
    if k < n:
        # partition first, then an exact ordered sort of the candidate set
        kth = np.partition(-scores, k - 1)[k - 1]
        cand = np.nonzero(-scores <= kth)[0]
    else:
        cand = np.arange(n)
    order = np.lexsort((cand, -scores[cand]))
    return [int(i) for i in cand[order[:k]]]


class SparseIndex:
    """Inverted index with Okapi BM25 scoring."""

    kind = "sparse"

    def __init__(self, docs: Sequence[Document], k1: float = DEFAULT_K1, b: float = DEFAULT_B):
        if not docs:
            raise ValueError("cannot index an empty corpus")
        self.docs = list(docs)
        self.k1 = k1
        self.b = b
        self.doc_count = len(self.docs)
        self.doc_length = np.zeros(self.doc_count, dtype=np.int64)
        postings: dict[str, list[tuple[int, int]]] = {}
        for d in self.docs:
            toks = tokenize(d.text)
            self.doc_length[d.doc_id] = len(toks)
            for term, tf in Counter(toks).items():
                postings.setdefault(term, []).append((d.doc_id, tf))
        self.postings = postings
        self.avg_doc_length = sum(int(x) for x in self.doc_length) / self.doc_count
        self._arrays = {
            t: (np.array([p[0] for p in pl]), np.array([p[1] for p in pl], dtype=float))
            for t, pl in postings.items()
        }

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1 + (self.doc_count - df + 0.5) / (df + 0.5))

    def bm25_score(self, query_tokens: Sequence[str], doc_id: int) -> float:
        length = int(self.doc_length[doc_id])
        score = 0.0
        for term in query_tokens:
            tf = 0
            for d, f in self.postings.get(term, ()):
                if d == doc_id:
                    tf = f
                    break
            if tf:
                score += self._term_weight(term, float(tf), float(length))
        return score

    def _term_weight(self, term, tf, length):
        k1, b = self.k1, self.b
        return self.idf(term) * (tf * (k1 + 1)) / (tf + k1 * (1 - b + b * length / self.avg_doc_length))

    def scores(self, text: str) -> np.ndarray:
        out = np.zeros(self.doc_count)
        for term in tokenize(text):
            if term not in self._arrays:
                continue
            ids, tf = self._arrays[term]
            out[ids] += self._term_weight(term, tf, self.doc_length[ids].astype(float))
        return out

    def search(self, text: str, k: int) -> list[RetrievedDoc]:
        s = self.scores(text)
        return [RetrievedDoc(i, float(s[i])) for i in _rank(s, k)]

    def payload(self) -> dict:
        return {
            "kind": self.kind, "k1": self.k1, "b": self.b,
            "docs": [d.to_record() for d in self.docs],
            "doc_length": [int(x) for x in self.doc_length],
            "postings": {t: [list(p) for p in pl] for t, pl in sorted(self.postings.items())},
        }


QueryEncoder = Callable[[str], np.ndarray]


class DenseIndex:
    """Exhaustive dot-product search over frozen document vectors."""

    kind = "dense"

    def __init__(self, docs: Sequence[Document], embedder: Embedder,
                 vectors: np.ndarray | None = None):
        if not docs:
            raise ValueError("cannot index an empty corpus")
        self.docs = list(docs)
        self.embedder = embedder
        if vectors is None:
            vectors = embedder.embed_many([d.text for d in self.docs])
        if vectors.shape != (len(self.docs), embedder.dim):
            raise ValueError(f"vector table shape {vectors.shape} does not fit corpus")
        self.doc_vectors = vectors
        self.doc_vectors.flags.writeable = False
        self.query_encoder: QueryEncoder = embedder.embed

    def with_query_encoder(self, encoder: QueryEncoder) -> "DenseIndex":
        """Same frozen document table, different query side."""
        other = DenseIndex.__new__(DenseIndex)
        other.docs, other.embedder, other.doc_vectors = self.docs, self.embedder, self.doc_vectors
        other.query_encoder = encoder
        return other

    def dense_score(self, text: str, doc_id: int) -> float:
        return float(self.query_encoder(text) @ self.doc_vectors[doc_id])

    def scores(self, text: str) -> np.ndarray:
        return self.doc_vectors @ self.query_encoder(text)

    def search(self, text: str, k: int) -> list[RetrievedDoc]:
        s = self.scores(text)
        return [RetrievedDoc(i, float(s[i])) for i in _rank(s, k)]

    def payload(self) -> dict:
        return {"kind": self.kind, "embedder": self.embedder.config(),
                "docs": [d.to_record() for d in self.docs]}


def build_sparse_index(corpus: Sequence[Document], k1: float = DEFAULT_K1,
                       b: float = DEFAULT_B) -> SparseIndex:
    return SparseIndex(corpus, k1, b)


def build_dense_index(corpus: Sequence[Document], embedder: Embedder) -> DenseIndex:
    return DenseIndex(corpus, embedder)


def save_index(index: SparseIndex | DenseIndex, path: str | Path) -> Path:
    """Write ``MAGIC`` + newline + JSON payload (+ raw float64 table for dense)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = json.dumps(index.payload(), ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    with open(path, "wb") as fh:
        fh.write(f"{MAGIC}\n".encode())
        fh.write(head.encode("utf-8") + b"\n")
        if isinstance(index, DenseIndex):
            fh.write(np.ascontiguousarray(index.doc_vectors, dtype="<f8").tobytes())
    return path


def load_index(path: str | Path) -> SparseIndex | DenseIndex:
    with open(path, "rb") as fh:
        magic = fh.readline().decode().strip()
        if magic != MAGIC:
            raise ValueError(f"{path}: not an index file (header {magic!r})")
        payload = json.loads(fh.readline())
        rest = fh.read()
    docs = [Document.from_record(r) for r in payload["docs"]]
    if payload["kind"] == "sparse":
        idx = SparseIndex(docs, payload["k1"], payload["b"])
        if idx.payload()["postings"] != payload["postings"]:
            raise ValueError(f"{path}: stored postings do not match the stored corpus")
        return idx
    emb = embedder_from_config(payload["embedder"])
    vecs = np.frombuffer(rest, dtype="<f8").reshape(len(docs), emb.dim).copy()
    return DenseIndex(docs, emb, vecs)


def concat_query_rule(query_text: str, rule_text: str) -> str:
    if not query_text:
        raise ValueError("query text is empty")
    return f"{query_text} {rule_text}" if rule_text else query_text


def retrieve_topk(index, text: str, k: int) -> list[RetrievedDoc]:
    if k < 1:
        raise ValueError("k must be >= 1")
    return index.search(text, k)


def rule_guided_retrieve(query_text: str, matched_rules: Sequence[Rule | RuleMatch | str],
                         index, k: int) -> list[RetrievedDoc]:
    """Union of per-rule top-k blocks in rule order, first occurrence kept.

    With no rules this is a single plain-query block.
    """
    if not matched_rules:
        return retrieve_topk(index, query_text, k)
    out: list[RetrievedDoc] = []
    seen: set[int] = set()
    for r in matched_rules:
        if isinstance(r, RuleMatch):
            r = r.rule
        rule_text = r if isinstance(r, str) else r.text
        for hit in retrieve_topk(index, concat_query_rule(query_text, rule_text), k):
            if hit.doc_id in seen:
                continue
            seen.add(hit.doc_id)
            out.append(RetrievedDoc(hit.doc_id, hit.score, rule_text or None))
    return out


def recall_at_k(retrieved: Sequence[RetrievedDoc], docs: Sequence[Document],
                gold_answers: Sequence[str], k: int) -> int:
    """1 when a gold answer occurs in the object or text of a top-k document."""
    if not gold_answers:
        raise ValueError("gold answers must be non-empty")
    for hit in retrieved[: max(k, 0)]:
        doc = docs[hit.doc_id]
        for g in gold_answers:
            if g in doc.source.object or g in doc.text:
                return 1
    return 0


def mean_recall(hits: Sequence[int]) -> float:
    return sum(hits) / len(hits) if hits else 0.0
