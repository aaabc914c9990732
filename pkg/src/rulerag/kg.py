"""Knowledge-graph ingestion: facts in, linearized retrieval corpus out."""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from rulerag.jsonl import iter_jsonl, write_jsonl


class KGFormatError(ValueError):
    """Raised for malformed KG input lines or corpus records."""


@dataclass(frozen=True)
class Fact:
    subject: str
    relation: str
    object: str
    timestamp: dt.date | None = None

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            if not getattr(self, name).strip():
                raise KGFormatError(f"fact field {name!r} is empty")

    @property
    def temporal(self) -> bool:
        return self.timestamp is not None

    def to_record(self) -> dict:
        rec = {"subject": self.subject, "relation": self.relation, "object": self.object}
        if self.timestamp is not None:
            rec["timestamp"] = self.timestamp.isoformat()
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Fact":
        ts = rec.get("timestamp")
        return cls(
            rec["subject"], rec["relation"], rec["object"],
            dt.date.fromisoformat(ts) if ts else None,
        )


@dataclass(frozen=True)
class Document:
    doc_id: int
    text: str
    source: Fact

    def to_record(self) -> dict:
        rec = {"doc_id": self.doc_id, "text": self.text}
        rec.update(self.source.to_record())
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Document":
        return cls(int(rec["doc_id"]), rec["text"], Fact.from_record(rec))


_DATE_FORMATS = ("%Y-%m-%d", "%Y/%m/%d", "%Y%m%d", "%d.%m.%Y")


def parse_timestamp(raw: str) -> dt.date:
    """Normalize a timestamp to a calendar date.

    Accepts ISO dates, a few common separators, and ISO datetimes (the time
    part is dropped since facts are kept at day precision).
    """
    raw = raw.strip()
    for fmt in _DATE_FORMATS:
        try:
            return dt.datetime.strptime(raw, fmt).date()
        except ValueError:
            pass
    try:
        return dt.datetime.fromisoformat(raw).date()
    except ValueError:
        raise KGFormatError(f"unparseable timestamp {raw!r}") from None


def parse_kg(lines: Iterable[str], temporal: bool = False, delimiter: str = "\t") -> list[Fact]:
    """Parse one fact per line; duplicates are kept in input order."""
    expected = 4 if temporal else 3
    facts = []
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        fields = line.split(delimiter)
        if len(fields) != expected:
            raise KGFormatError(
                f"line {lineno}: expected {expected} fields, got {len(fields)}: {line!r}"
            )
        ts = None
        if temporal:
            try:
                ts = parse_timestamp(fields[3])
            except KGFormatError as exc:
                raise KGFormatError(f"line {lineno}: {exc} in {line!r}") from None
        try:
            facts.append(Fact(fields[0], fields[1], fields[2], ts))
        except KGFormatError as exc:
            raise KGFormatError(f"line {lineno}: {exc}") from None
    return facts


def read_kg(path: str | Path, temporal: bool = False, delimiter: str = "\t") -> list[Fact]:
    with open(path, encoding="utf-8") as fh:
        return parse_kg(fh, temporal=temporal, delimiter=delimiter)


def write_kg(path: str | Path, facts: Iterable[Fact], delimiter: str = "\t") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for f in facts:
            fields = [f.subject, f.relation, f.object]
            if f.timestamp is not None:
                fields.append(f.timestamp.isoformat())
            fh.write(delimiter.join(fields) + "\n")
    return path


def linearize(fact: Fact) -> str:
    if fact.timestamp is not None:
        return f"Time {fact.timestamp.isoformat()} {fact.subject} {fact.relation} {fact.object}."
    return f"{fact.subject} {fact.relation} {fact.object}."


def build_corpus(facts: Iterable[Fact], path: str | Path | None = None) -> list[Document]:
    """One document per fact, ids assigned in input order from 0.

    When ``path`` is given the corpus is also written as JSON lines carrying
    the structured fact fields next to the text.
    """
    docs = [Document(i, linearize(f), f) for i, f in enumerate(facts)]
    if path is not None:
        save_corpus(docs, path)
    return docs


def save_corpus(docs: Iterable[Document], path: str | Path) -> Path:
    return write_jsonl(path, (d.to_record() for d in docs))


def load_corpus(path: str | Path) -> list[Document]:
    docs = []
    for idx, rec in iter_jsonl(path):
        try:
            doc = Document.from_record(rec)
        except (KeyError, TypeError, ValueError) as exc:
            raise KGFormatError(f"{path}: bad corpus record {idx}: {exc}") from exc
        if doc.doc_id != idx:
            raise KGFormatError(f"{path}: record {idx} has doc_id {doc.doc_id}")
        if doc.text != linearize(doc.source):
            raise KGFormatError(f"{path}: record {idx} text does not match its fact")
        docs.append(doc)
    return docs
