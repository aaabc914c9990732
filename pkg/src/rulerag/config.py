"""Run configuration: defaults, then a JSON config file, then command-line flags."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, fields
from pathlib import Path

from rulerag.errors import ConfigError
from rulerag.matching import DEFAULT_N_MAX, DEFAULT_THETA


@dataclass
class RunConfig:
    # paths
    kg_train: str | None = None
    kg_valid: str | None = None
    kg_test: str | None = None
    kg: str | None = None
    corpus: str | None = None
    rules: str | None = None
    index: str | None = None
    encoder: str | None = None
    pairs: str | None = None
    records: str | None = None
    benchmark: str | None = None
    out: str | None = None
    # data
    temporal: bool = True
    delimiter: str = "\t"
    min_support: int = 3
    min_confidence: float = 0.5
    test_size: int | None = None
    sample_n: int = 2048
    banks: int = 4
    # matching / retrieval
    n_max: int = DEFAULT_N_MAX
    theta: float = DEFAULT_THETA
    k: int = 10
    k_list: tuple = (1, 5, 10)
    k1: float = 0.9
    b: float = 0.4
    retriever: str = "bm25"
    embed_dim: int = 4096
    ngram: int = 3
    # training
    lr: float = 1e-5
    batch: int = 32
    tau: float = 0.01
    epochs: int = 10
    seed: int = 0
    # generation
    variant: str = "rulerag-icl"
    generator: str = "mock"
    three_shot: bool = False
    base_url: str = "http://localhost:8000/v1"
    model: str = "gpt-3.5-turbo"
    max_tokens: int = 64
    timeout: float = 60.0
    retries: int = 3
    concurrency: int = 4
    fail_fast: bool = True
    threads: int = 1

    def validate(self) -> "RunConfig":
        checks = [
            (self.tau > 0, "tau must be > 0"),
            (self.batch >= 2, "batch must be >= 2"),
            (self.lr >= 0, "lr must be >= 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.n_max >= 1, "n_max must be >= 1"),
            (-1 <= self.theta <= 1, "theta must lie in [-1, 1]"),
            (self.k >= 1, "k must be >= 1"),
            (all(int(k) >= 1 for k in self.k_list), "k_list entries must be >= 1"),
            (self.k1 >= 0, "k1 must be >= 0"),
            (0 <= self.b <= 1, "b must lie in [0, 1]"),
            (0 < self.min_confidence <= 1, "min_confidence must lie in (0, 1]"),
            (self.min_support >= 1, "min_support must be >= 1"),
            (self.embed_dim >= 1 and self.ngram >= 1, "embed_dim and ngram must be >= 1"),
            (self.retriever in ("bm25", "dense"), "retriever must be bm25 or dense"),
            (self.generator in ("mock", "http"), "generator must be mock or http"),
            (self.banks >= 1, "banks must be >= 1"),
            (self.sample_n >= 0, "sample_n must be >= 0"),
            (self.threads >= 1 and self.concurrency >= 1, "threads and concurrency must be >= 1"),
            (self.retries >= 0, "retries must be >= 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["k_list"] = list(self.k_list)
        return d


_FIELDS = {f.name for f in fields(RunConfig)}


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the JSON file at ``path``, then non-None ``overrides``.

    Unknown keys are rejected.
    """
    values: dict = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} does not parse: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"config file {path} must hold an object")
        unknown = sorted(set(data) - _FIELDS)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        values.update(data)
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key: {key}")
        if val is not None:
            values[key] = val
    if "k_list" in values:
        values["k_list"] = tuple(int(k) for k in values["k_list"])
    return RunConfig(**values).validate()


def dump_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
