"""``rulerag`` command line: one binary, one subcommand per pipeline stage.

Exit codes: 0 success, 1 user error (bad flags, missing or malformed inputs),
2 internal error.
"""

from __future__ import annotations

import argparse
import datetime as dt
import json
import logging
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from rulerag.config import RunConfig, load_config
from rulerag.errors import ConfigError
from rulerag.jsonl import dumps, iter_jsonl, write_jsonl

log = logging.getLogger("rulerag")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad usage; 2 is reserved for internal errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# -- argument plumbing --------------------------------------------------------


def _add(p, *names, **kw):
    """Add a flag whose value lands in the config unless left unset."""
    kw.setdefault("default", None)
    p.add_argument(*names, **kw)


def _common(p, top=False):
    # subcommands repeat the global flags; SUPPRESS keeps them from erasing a value given earlier
    default = None if top else argparse.SUPPRESS
    p.add_argument("--config", default=default, help="JSON config file; flags override it")
    p.add_argument("--threads", type=int, default=default, help="cap on worker threads")
    p.add_argument("-v", "--verbose", action="store_true",
                   default=False if top else argparse.SUPPRESS, help="debug logging")


def _static(p):
    p.add_argument("--static", dest="temporal", action="store_false", default=None,
                   help="facts have no timestamp column")


def _retrieval_flags(p):
    _add(p, "--k", type=int, help="documents per rule (default 10)")
    _add(p, "--n-max", dest="n_max", type=int, help="max rules per query (default 3)")
    _add(p, "--theta", type=float, help="rule similarity threshold")


def _train_flags(p):
    _add(p, "--lr", type=float, help="learning rate (default 1e-5)")
    _add(p, "--batch", type=int, help="batch size (default 32)")
    _add(p, "--tau", type=float, help="softmax temperature (default 0.01)")
    _add(p, "--epochs", type=int, help="training epochs (default 10)")
    _add(p, "--embed-dim", dest="embed_dim", type=int, help="hashed n-gram dimension")


def _generator_flags(p):
    _add(p, "--generator", choices=["mock", "http"], help="answer generator (default mock)")
    _add(p, "--base-url", dest="base_url", help="OpenAI-compatible endpoint root")
    _add(p, "--model", help="model name sent to the endpoint")
    p.add_argument("--three-shot", dest="three_shot", action="store_true", default=None,
                   help="prepend three worked cases to each prompt")


def build_parser() -> argparse.ArgumentParser:
    root = _Parser(prog="rulerag", description="Rule-guided retrieval-augmented QA.")
    _common(root, top=True)
    sub = root.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("ingest", help="linearize a KG file into a document corpus")
    _common(p)
    _add(p, "--kg", required=True, help="fact file: subject, relation, object[, time]")
    _add(p, "--out", required=True, help="corpus JSONL to write")
    _static(p)

    p = sub.add_parser("mine-rules", help="mine body -> head relation rules")
    _common(p)
    _add(p, "--kg-train", dest="kg_train", required=True)
    _add(p, "--out", required=True, help="rule bank JSONL to write")
    _add(p, "--min-support", dest="min_support", type=int, help="default 3")
    _add(p, "--min-confidence", dest="min_confidence", type=float, help="default 0.5")
    _static(p)

    p = sub.add_parser("build-benchmark", help="corpus, queries and fine-tuning sets")
    _common(p)
    _add(p, "--kg-train", dest="kg_train", required=True)
    _add(p, "--kg-valid", dest="kg_valid", required=True)
    _add(p, "--kg-test", dest="kg_test", required=True)
    _add(p, "--rules", required=True)
    _add(p, "--out", required=True, help="benchmark directory")
    _add(p, "--seed", type=int)
    _add(p, "--test-size", dest="test_size", type=int)
    _add(p, "--k", type=int, help="documents per rule for F_G prompts")
    _static(p)

    p = sub.add_parser("index", help="build a BM25 or dense index over a corpus")
    _common(p)
    _add(p, "--corpus", required=True)
    _add(p, "--out", required=True)
    _add(p, "--k1", type=float, help="BM25 k1 (default 0.9)")
    _add(p, "--b", type=float, help="BM25 b (default 0.4)")
    p.add_argument("--dense", dest="retriever", action="store_const", const="dense", default=None,
                   help="hashed n-gram dense index instead of BM25")
    _add(p, "--embed-dim", dest="embed_dim", type=int)

    p = sub.add_parser("train-retriever", help="contrastive training of the query encoder")
    _common(p)
    _add(p, "--pairs", required=True, help="F_R pairs JSONL")
    _add(p, "--index", required=True, help="dense index")
    _add(p, "--out", required=True, help="encoder file to write")
    _add(p, "--seed", type=int)
    _train_flags(p)
    p.add_argument("--no-rules", dest="no_rules", action="store_true",
                   help="drop rules from the inputs (standard supervised fine-tuning)")

    p = sub.add_parser("retrieve", help="top-k documents for one query")
    _common(p)
    _add(p, "--index", required=True)
    _add(p, "--query", required=True)
    _add(p, "--rules", help="rule bank; omit for plain-query retrieval")
    _add(p, "--encoder", help="trained query encoder for a dense index")
    _add(p, "--out", help="write hits here instead of stdout")
    _retrieval_flags(p)

    p = sub.add_parser("answer", help="retrieve and generate an answer for one query")
    _common(p)
    _add(p, "--index", required=True)
    _add(p, "--rules")
    _add(p, "--query", required=True)
    _add(p, "--subject", help="query subject, when it cannot be read off the query")
    _add(p, "--encoder")
    _add(p, "--seed", type=int, help="exemplar sampling seed")
    _retrieval_flags(p)
    _generator_flags(p)

    p = sub.add_parser("evaluate", help="run a variant over a benchmark's test queries")
    _common(p)
    _add(p, "--benchmark", required=True)
    _add(p, "--variant", help="default rulerag-icl")
    _add(p, "--rules", help="rule bank (default: the benchmark's rules.jsonl)")
    _add(p, "--retriever", choices=["bm25", "dense"])
    _add(p, "--encoder", help="trained query encoder; otherwise trained from F_R")
    _add(p, "--out", required=True, help="report JSONL to write")
    _add(p, "--seed", type=int)
    _add(p, "--k1", type=float)
    _add(p, "--b", type=float)
    _retrieval_flags(p)
    _train_flags(p)
    _generator_flags(p)

    p = sub.add_parser("generalize", help="train on one rule bank, test on each other")
    _common(p)
    _add(p, "--benchmark", required=True)
    _add(p, "--banks", type=int, help="number of disjoint rule banks (default 4)")
    _add(p, "--seed", type=int)
    _add(p, "--out", required=True, help="grid JSON to write")
    _retrieval_flags(p)
    _train_flags(p)

    p = sub.add_parser("emit-ft", help="sample instruction-tuning records")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--benchmark", default=None, help="take the benchmark's F_G records")
    src.add_argument("--records", default=None, help="a {prompt, answer} JSONL file")
    _add(p, "--sample-n", dest="sample_n", type=int, help="default 2048")
    _add(p, "--seed", type=int)
    _add(p, "--out", required=True)
    return root


_NOT_CONFIG = {"command", "config", "verbose", "no_rules", "query", "subject"}


def _config(ns: argparse.Namespace) -> RunConfig:
    over = {k: v for k, v in vars(ns).items() if k not in _NOT_CONFIG}
    return load_config(ns.config, over)


def _need(path: str | None, flag: str) -> Path:
    if path is None:
        raise ConfigError(f"{flag} is required")
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"{flag}: no such file or directory: {path}")
    return p


# -- shared loading -----------------------------------------------------------


def _matcher(cfg: RunConfig, rules_path: Path | None):
    from rulerag.matching import RuleMatcher
    from rulerag.rules import load_rules

    if rules_path is None:
        return None
    return RuleMatcher(load_rules(rules_path), n_max=cfg.n_max, theta=cfg.theta)


def _query_index(cfg: RunConfig, encoder_path: str | None):
    from rulerag.retrieval import DenseIndex, load_index
    from rulerag.training import TrainableQueryEncoder

    index = load_index(_need(cfg.index, "--index"))
    if encoder_path is not None:
        if not isinstance(index, DenseIndex):
            raise ConfigError("--encoder needs a dense index (build it with index --dense)")
        enc = TrainableQueryEncoder.load(_need(encoder_path, "--encoder"))
        index = index.with_query_encoder(enc)
    return index


def _generator(cfg: RunConfig):
    if cfg.generator == "mock":
        return None
    from rulerag.generation import HttpConfig, HttpGenerator

    return HttpGenerator(HttpConfig(cfg.base_url, cfg.model, cfg.max_tokens, cfg.timeout,
                                    cfg.retries, concurrency=min(cfg.concurrency, cfg.threads),
                                    fail_fast=cfg.fail_fast))


@dataclass(frozen=True)
class _AdHocQuery:
    query_text: str
    subject: str
    timestamp: dt.date | None


_QUERY = re.compile(r"^(?:Time (\d{4}-\d{2}-\d{2}) )?what does (.+) \?$")


def _parse_query(text: str, subject: str | None, docs) -> _AdHocQuery:
    """Recover subject and time from a rendered query.

    The subject is the longest corpus subject that prefixes the text after
    "what does"; ``--subject`` overrides.
    """
    m = _QUERY.match(text.strip())
    ts = dt.date.fromisoformat(m.group(1)) if m and m.group(1) else None
    if subject is None and m:
        rest = m.group(2)
        known = sorted({d.source.subject for d in docs if rest.startswith(d.source.subject + " ")},
                       key=len, reverse=True)
        subject = known[0] if known else None
    if subject is None:
        raise ConfigError("cannot read the subject off --query; pass --subject")
    return _AdHocQuery(text, subject, ts)


# -- subcommands --------------------------------------------------------------


def cmd_ingest(cfg: RunConfig, ns) -> int:
    from rulerag.kg import build_corpus, read_kg

    facts = read_kg(_need(cfg.kg, "--kg"), temporal=cfg.temporal, delimiter=cfg.delimiter)
    docs = build_corpus(facts, cfg.out)
    print(f"{len(docs)} documents -> {cfg.out}")
    return 0


def cmd_mine_rules(cfg: RunConfig, ns) -> int:
    from rulerag.kg import read_kg
    from rulerag.rules import mine_rules, save_rules

    facts = read_kg(_need(cfg.kg_train, "--kg-train"), temporal=cfg.temporal,
                    delimiter=cfg.delimiter)
    rules = mine_rules(facts, cfg.min_support, cfg.min_confidence, temporal=cfg.temporal)
    save_rules(rules, cfg.out)
    print(f"{len(rules)} rules -> {cfg.out}")
    return 0


def cmd_build_benchmark(cfg: RunConfig, ns) -> int:
    from rulerag.benchmark import build_benchmark
    from rulerag.kg import read_kg
    from rulerag.rules import load_rules

    splits = [read_kg(_need(p, flag), temporal=cfg.temporal, delimiter=cfg.delimiter)
              for p, flag in ((cfg.kg_train, "--kg-train"), (cfg.kg_valid, "--kg-valid"),
                              (cfg.kg_test, "--kg-test"))]
    rules_path = _need(cfg.rules, "--rules")
    report = build_benchmark(*splits, load_rules(rules_path), cfg.out, seed=cfg.seed,
                             test_size=cfg.test_size, matcher=_matcher(cfg, rules_path),
                             k=cfg.k, k1=cfg.k1, b=cfg.b)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_index(cfg: RunConfig, ns) -> int:
    from rulerag.kg import load_corpus
    from rulerag.matching import LexicalEmbedder
    from rulerag.retrieval import DenseIndex, SparseIndex, save_index

    docs = load_corpus(_need(cfg.corpus, "--corpus"))
    if cfg.retriever == "dense":
        index = DenseIndex(docs, LexicalEmbedder(cfg.embed_dim, cfg.ngram))
    else:
        index = SparseIndex(docs, cfg.k1, cfg.b)
    save_index(index, cfg.out)
    print(f"{index.kind} index over {len(docs)} documents -> {cfg.out}")
    return 0


def cmd_train_retriever(cfg: RunConfig, ns) -> int:
    from rulerag.retrieval import DenseIndex, load_index
    from rulerag.training import TrainConfig, load_pairs, train

    pairs = load_pairs(_need(cfg.pairs, "--pairs"))
    if ns.no_rules:
        pairs = [p.without_rule() for p in pairs]
    index = load_index(_need(cfg.index, "--index"))
    if not isinstance(index, DenseIndex):
        raise ConfigError("--index must be a dense index (build it with index --dense)")
    result = train(pairs, index.doc_vectors, index.embedder,
                   TrainConfig(cfg.lr, cfg.batch, cfg.tau, cfg.epochs, cfg.seed))
    result.encoder.save(cfg.out)
    trace = Path(str(cfg.out) + ".log.jsonl")
    write_jsonl(trace, ({"epoch": i + 1, "mean_loss": v} for i, v in enumerate(result.epoch_losses)))
    for i, v in enumerate(result.epoch_losses):
        print(f"epoch {i + 1}: mean loss {v:.6f}")
    return 0


def cmd_retrieve(cfg: RunConfig, ns) -> int:
    from rulerag.retrieval import rule_guided_retrieve

    index = _query_index(cfg, cfg.encoder)
    matcher = _matcher(cfg, _need(cfg.rules, "--rules") if cfg.rules else None)
    rules = [m.rule for m in matcher.match(ns.query)] if matcher else []
    hits = rule_guided_retrieve(ns.query, rules, index, cfg.k)
    lines = [{"doc_id": h.doc_id, "score": h.score, "via_rule": h.via_rule,
              "text": index.docs[h.doc_id].text} for h in hits]
    if cfg.out:
        write_jsonl(cfg.out, lines)
    else:
        for rec in lines:
            print(dumps(rec))
    return 0


def cmd_answer(cfg: RunConfig, ns) -> int:
    from rulerag.evaluation import exemplars_from_corpus
    from rulerag.generation import PromptSpec, mock_rule_follower, render_fewshot, render_prompt
    from rulerag.retrieval import rule_guided_retrieve

    matcher = _matcher(cfg, _need(cfg.rules, "--rules"))
    index = _query_index(cfg, cfg.encoder)
    rules = [m.rule for m in matcher.match(ns.query)]
    hits = rule_guided_retrieve(ns.query, rules, index, cfg.k)
    docs = [index.docs[h.doc_id] for h in hits]
    gen = _generator(cfg)
    if gen is None:
        q = _parse_query(ns.query, ns.subject, index.docs)
        print(mock_rule_follower(q, docs, rules))
        return 0
    spec = PromptSpec(ns.query, tuple(d.text for d in docs), tuple(r.text for r in rules),
                      temporal=ns.query.startswith("Time "))
    if cfg.three_shot:
        prompt = render_fewshot(exemplars_from_corpus(index.docs, index, matcher, cfg.k, cfg.seed),
                                spec)
    else:
        prompt = render_prompt(spec)
    print(gen.generate(prompt))
    return 0


def _benchmark_rules(cfg: RunConfig, bench) -> Path | None:
    if cfg.rules is not None:
        return _need(cfg.rules, "--rules")
    return bench.rules if bench.rules.exists() else None


def cmd_evaluate(cfg: RunConfig, ns) -> int:
    from rulerag.benchmark import BenchmarkPaths, load_queries
    from rulerag.evaluation import (exemplars_from_corpus, resolve_variant, run_experiment,
                                    summary_table, train_for_variant)
    from rulerag.kg import load_corpus
    from rulerag.matching import LexicalEmbedder
    from rulerag.retrieval import DenseIndex, SparseIndex
    from rulerag.training import TrainableQueryEncoder, TrainConfig, load_pairs

    bench = BenchmarkPaths(_need(cfg.benchmark, "--benchmark"))
    variant = resolve_variant(cfg.variant, cfg.retriever)
    rules_path = _benchmark_rules(cfg, bench)
    if (variant.rules_at_retrieval or variant.rules_in_prompt) and rules_path is None:
        raise ConfigError(f"--variant {variant.name} is rule-guided and needs --rules "
                          f"(no rules.jsonl in {bench.root})")
    matcher = _matcher(cfg, rules_path)
    docs = load_corpus(_need(str(bench.corpus), "--benchmark corpus"))
    queries = load_queries(_need(str(bench.queries), "--benchmark queries"))
    if cfg.retriever == "bm25":
        index = SparseIndex(docs, cfg.k1, cfg.b)
    else:
        index = DenseIndex(docs, LexicalEmbedder(cfg.embed_dim, cfg.ngram))
        if cfg.encoder is not None:
            index = index.with_query_encoder(TrainableQueryEncoder.load(_need(cfg.encoder, "--encoder")))
        else:
            pairs = load_pairs(_need(str(bench.ft_retriever), "--benchmark F_R"))
            index = train_for_variant(variant, pairs, index,
                                      TrainConfig(cfg.lr, cfg.batch, cfg.tau, cfg.epochs, cfg.seed))
    exemplars = None
    if cfg.three_shot:
        exemplars = exemplars_from_corpus(docs, index, matcher, cfg.k, cfg.seed,
                                          with_rules=variant.rules_in_prompt)
    report = run_experiment(variant, queries, docs, index, matcher, cfg.k, cfg.k_list,
                            _generator(cfg), exemplars,
                            {"retriever": cfg.retriever, "seed": cfg.seed,
                             "three_shot": cfg.three_shot})
    report.save(cfg.out)
    print(summary_table([report]))
    return 0


def cmd_generalize(cfg: RunConfig, ns) -> int:
    from rulerag.benchmark import BenchmarkPaths, load_queries, split_rule_banks
    from rulerag.evaluation import generalization_experiment
    from rulerag.kg import load_corpus
    from rulerag.matching import LexicalEmbedder
    from rulerag.retrieval import DenseIndex
    from rulerag.rules import load_rules
    from rulerag.training import TrainConfig, load_pairs

    bench = BenchmarkPaths(_need(cfg.benchmark, "--benchmark"))
    rules = load_rules(_need(str(bench.rules), "--benchmark rules"))
    banks = split_rule_banks(rules, cfg.banks, cfg.seed)
    dense = DenseIndex(load_corpus(_need(str(bench.corpus), "--benchmark corpus")),
                       LexicalEmbedder(cfg.embed_dim, cfg.ngram))
    res = generalization_experiment(
        banks, load_queries(_need(str(bench.queries), "--benchmark queries")),
        load_pairs(_need(str(bench.ft_retriever), "--benchmark F_R")), dense,
        TrainConfig(cfg.lr, cfg.batch, cfg.tau, cfg.epochs, cfg.seed), k=cfg.k,
        n_max=cfg.n_max, theta=cfg.theta)
    out = Path(cfg.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(res.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"Recall@{res.k} delta vs Standard RAG (rows: trained on R_i, cols: tested on R_j)")
    for i, row in enumerate(res.recall_delta):
        print(f"R_{i + 1}  " + "  ".join(f"{v:+6.1f}" for v in row))
    return 0


def cmd_emit_ft(cfg: RunConfig, ns) -> int:
    from rulerag.benchmark import BenchmarkPaths
    from rulerag.generation import FtGenRecord, emit_rgft_dataset

    src = (BenchmarkPaths(_need(cfg.benchmark, "--benchmark")).ft_generator
           if cfg.benchmark else _need(cfg.records, "--records"))
    records = []
    for idx, rec in iter_jsonl(src):
        if not isinstance(rec, dict) or not {"prompt", "answer"} <= set(rec):
            raise ConfigError(f"{src}: record {idx} lacks prompt/answer")
        records.append(FtGenRecord(rec["prompt"], rec["answer"]))
    emit_rgft_dataset(records, cfg.sample_n, cfg.seed, cfg.out)
    print(f"{min(cfg.sample_n, len(records))} records -> {cfg.out}")
    return 0


COMMANDS = {
    "ingest": cmd_ingest, "mine-rules": cmd_mine_rules, "build-benchmark": cmd_build_benchmark,
    "index": cmd_index, "train-retriever": cmd_train_retriever, "retrieve": cmd_retrieve,
    "answer": cmd_answer, "evaluate": cmd_evaluate, "generalize": cmd_generalize,
    "emit-ft": cmd_emit_ft,
}


def main(argv: list[str] | None = None) -> int:
    from rulerag.generation import AuthError
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    if ns.command is None:
        parser.print_help(sys.stderr)
        return 1
    logging.basicConfig(level=logging.DEBUG if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(ns)
        return COMMANDS[ns.command](cfg, ns)
    except (ConfigError, ValueError, OSError, AuthError) as exc:
        print(f"rulerag {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort boundary
        log.debug("internal error", exc_info=True)
        print(f"rulerag {ns.command}: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
