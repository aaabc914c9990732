"""Rule-guided contrastive training of the dense query encoder.

The query side is ``normalize(W @ featurize(text))`` over a frozen featurizer
shared with the document index; only ``W`` is trained. Documents stay frozen.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from rulerag.jsonl import iter_jsonl, write_jsonl
from rulerag.matching import Embedder, embedder_from_config
from rulerag.retrieval import concat_query_rule
from rulerag.rules import Rule, textualize

log = logging.getLogger(__name__)

ENC_MAGIC = "RULERAG-ENC-1"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class FtPair:
    query_text: str
    rule: Rule | None
    oracle_doc_ids: tuple[int, ...]

    def __post_init__(self):
        if not self.oracle_doc_ids:
            raise ValueError("a training pair needs at least one oracle document")

    @property
    def input_text(self) -> str:
        return concat_query_rule(self.query_text, self.rule.text if self.rule else "")

    def without_rule(self) -> "FtPair":
        return FtPair(self.query_text, None, self.oracle_doc_ids)

    def to_record(self) -> dict:
        return {
            "query_text": self.query_text,
            "rule_text": self.rule.text if self.rule else "",
            "body_relation": self.rule.body_relation if self.rule else "",
            "head_relation": self.rule.head_relation if self.rule else "",
            "oracle_doc_ids": list(self.oracle_doc_ids),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "FtPair":
        rule = None
        if rec.get("body_relation"):
            # support/confidence are not part of the pair file
            rule = Rule(rec["body_relation"], rec["head_relation"], 1, 1.0,
                        rec.get("rule_text") or textualize(rec["body_relation"], rec["head_relation"]))
        return cls(rec["query_text"], rule, tuple(int(i) for i in rec["oracle_doc_ids"]))


def save_pairs(pairs: Sequence[FtPair], path) -> Path:
    return write_jsonl(path, (p.to_record() for p in pairs))


def load_pairs(path) -> list[FtPair]:
    return [FtPair.from_record(rec) for _, rec in iter_jsonl(path)]


@dataclass
class TrainConfig:
    learning_rate: float = 1e-5
    batch_size: int = 32
    temperature: float = 0.01
    epochs: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2")
        if self.learning_rate < 0 or self.epochs < 0:
            raise ValueError("learning_rate and epochs must be non-negative")


class TrainableQueryEncoder:
    def __init__(self, featurizer: Embedder, W: np.ndarray | None = None):
        self.featurizer = featurizer
        self.W = np.eye(featurizer.dim) if W is None else np.asarray(W, dtype=float)
        if self.W.shape[1] != featurizer.dim:
            raise ValueError(f"W has {self.W.shape[1]} columns, featurizer gives {featurizer.dim}")

    def features(self, text: str) -> np.ndarray:
        # raw counts when available: normalize(I @ counts) is bit-identical to embed()
        if hasattr(self.featurizer, "counts"):
            return self.featurizer.counts(text)
        return self.featurizer.embed(text)

    def feature_matrix(self, texts: Sequence[str]) -> np.ndarray:
        return np.stack([self.features(t) for t in texts])

    def encode(self, text: str) -> np.ndarray:
        u = self.W @ self.features(text)
        norm = np.linalg.norm(u)
        if norm == 0:
            raise ValueError(f"query {text!r} maps to the zero vector")
        return u / norm

    __call__ = encode

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        head = {"d_out": self.W.shape[0], "d_in": self.W.shape[1],
                "featurizer": self.featurizer.config()}
        with open(path, "wb") as fh:
            fh.write(f"{ENC_MAGIC}\n".encode())
            fh.write(json.dumps(head, sort_keys=True).encode() + b"\n")
            fh.write(np.ascontiguousarray(self.W, dtype="<f8").tobytes())
        return path

    @classmethod
    def load(cls, path) -> "TrainableQueryEncoder":
        with open(path, "rb") as fh:
            if fh.readline().decode().strip() != ENC_MAGIC:
                raise ValueError(f"{path}: not an encoder file")
            head = json.loads(fh.readline())
            W = np.frombuffer(fh.read(), dtype="<f8").reshape(head["d_out"], head["d_in"]).copy()
        return cls(embedder_from_config(head["featurizer"]), W)


def _batch_terms(W, F, batch, doc_vectors, tau):
    """Loss and gradient w.r.t. W for one batch of feature rows ``F``."""
    pool = sorted({d for p in batch for d in p.oracle_doc_ids})
    col = {d: j for j, d in enumerate(pool)}
    D = doc_vectors[pool]
    with np.errstate(over="ignore", invalid="ignore"):
        U = F @ W.T
        norms = np.linalg.norm(U, axis=1, keepdims=True)
    if not np.all(np.isfinite(norms)) or np.any(norms == 0):
        return float("nan"), np.full_like(W, np.nan)
    Q = U / norms
    S = (Q @ D.T) / tau

    loss = 0.0
    dS = np.zeros_like(S)
    for i, pair in enumerate(batch):
        pos = [col[d] for d in pair.oracle_doc_ids]
        neg = np.array([j for j in range(len(pool)) if j not in set(pos)], dtype=int)
        if len(neg) == 0:
            log.warning("pair %r has no in-batch negatives", pair.query_text)
            continue
        neg_s = S[i, neg]
        for p in pos:
            logits = np.concatenate(([S[i, p]], neg_s))
            m = logits.max()
            lse = m + np.log(np.exp(logits - m).sum())
            loss += lse - S[i, p]
            prob = np.exp(logits - lse)
            dS[i, p] += prob[0] - 1.0
            dS[i, neg] += prob[1:]
    G = (dS / tau) @ D
    dU = (G - Q * np.sum(Q * G, axis=1, keepdims=True)) / norms
    return float(loss), dU.T @ F


def contrastive_loss(encoder: TrainableQueryEncoder, batch: Sequence[FtPair],
                     doc_vectors: np.ndarray, tau: float) -> float:
    """Sum over every (pair, positive) of -log softmax of the positive against
    the batch's other oracle documents, with scores divided by ``tau``."""
    if len(batch) < 2:
        raise ValueError("a batch needs at least two pairs")
    F = encoder.feature_matrix([p.input_text for p in batch])
    return _batch_terms(encoder.W, F, batch, doc_vectors, tau)[0]


def loss_gradient(encoder: TrainableQueryEncoder, batch: Sequence[FtPair],
                  doc_vectors: np.ndarray, tau: float) -> np.ndarray:
    if len(batch) < 2:
        raise ValueError("a batch needs at least two pairs")
    F = encoder.feature_matrix([p.input_text for p in batch])
    return _batch_terms(encoder.W, F, batch, doc_vectors, tau)[1]


@dataclass
class TrainResult:
    encoder: TrainableQueryEncoder
    epoch_losses: list[float] = field(default_factory=list)


def _batches(order: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [order[i : i + size] for i in range(0, len(order), size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate(chunks[-2:])
        chunks.pop()
    return [c for c in chunks if len(c) >= 2]


def train(pairs: Sequence[FtPair], doc_vectors: np.ndarray, featurizer: Embedder,
          config: TrainConfig | None = None) -> TrainResult:
    """Plain gradient descent on the summed in-batch contrastive loss.

    Returns the encoder and the per-epoch mean loss per positive.
    """
    config = config or TrainConfig()
    if not pairs:
        raise ValueError("no training pairs")
    enc = TrainableQueryEncoder(featurizer)
    if config.epochs == 0:
        return TrainResult(enc, [])
    F_all = enc.feature_matrix([p.input_text for p in pairs])
    rng = np.random.default_rng(config.seed)
    trace = []
    for epoch in range(config.epochs):
        total, n_pos = 0.0, 0
        for idx in _batches(rng.permutation(len(pairs)), config.batch_size):
            batch = [pairs[i] for i in idx]
            loss, grad = _batch_terms(enc.W, F_all[idx], batch, doc_vectors, config.temperature)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}; learning rate {config.learning_rate} too high?"
                )
            with np.errstate(over="ignore", invalid="ignore"):
                enc.W -= config.learning_rate * grad
            if not np.all(np.isfinite(enc.W)):
                raise TrainingError(
                    f"weights overflowed at epoch {epoch}; learning rate {config.learning_rate} too high?"
                )
            total += loss
            n_pos += sum(len(p.oracle_doc_ids) for p in batch)
        trace.append(total / max(n_pos, 1))
        log.info("epoch %d mean loss %.6f", epoch, trace[-1])
    return TrainResult(enc, trace)


def mean_margin(encoder, pairs: Sequence[FtPair], doc_vectors: np.ndarray) -> float:
    """Mean of (best oracle score - best non-oracle score) over the corpus."""
    margins = []
    for p in pairs:
        s = doc_vectors @ encoder(p.input_text)
        mask = np.zeros(len(s), dtype=bool)
        mask[list(p.oracle_doc_ids)] = True
        margins.append(s[mask].max() - s[~mask].max())
    return float(np.mean(margins))


def oracle_recall_at_k(encoder, pairs: Sequence[FtPair], doc_vectors: np.ndarray, k: int) -> float:
    """Fraction of pairs with an oracle document among the top-k (ties by doc_id)."""
    if not pairs:
        return 0.0
    hits = 0
    for p in pairs:
        s = doc_vectors @ encoder(p.input_text)
        top = np.lexsort((np.arange(len(s)), -s))[:k]
        hits += bool(set(top.tolist()) & set(p.oracle_doc_ids))
    return hits / len(pairs)
