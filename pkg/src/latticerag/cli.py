"""Command line: ``latticerag index | query | eval | stats``.

Exit codes: 0 ok, 2 configuration error, 3 provider/model failure,
4 corrupt or locked index.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

from .accounting import EvalRecord, UsageLedger, activation_partition, cost_report
from .config import Config, ConfigError, load_config, validate
from .corpus import load_corpus
from .embeddings import EmbeddingError
from .index import (CorruptIndexError, IndexLockedError, build_index, client_from_config,
                    index_size_on_disk, load_index, provider_from_config)
from .query_pipeline import ModelClientError, QueryPipeline, StubClient

logger = logging.getLogger("latticerag")

EXIT_CONFIG, EXIT_PROVIDER, EXIT_INDEX = 2, 3, 4


def _open(args, stub: bool = False):
    index = load_index(args.index)
    cfg = index.config
    if getattr(args, "config", None):
        # runtime sections (provider, client, pipeline) may be overridden at query time
        override = load_config(args.config)
        cfg = Config(**{**{k: getattr(cfg, k) for k in ("chunking", "rq", "graph", "summaries", "retrieval")},
                        "pipeline": override.pipeline, "provider": override.provider, "client": override.client})
    cfg = validate(cfg)
    provider = provider_from_config(cfg)
    if provider.dimension != index.vectors.shape[1]:
        raise CorruptIndexError(
            f"index embedding dimension {index.vectors.shape[1]} != provider dimension {provider.dimension}"
        )
    client = StubClient() if stub else client_from_config(cfg)
    return index, cfg, provider, client


def cmd_index(args) -> int:
    cfg = load_config(args.config) if args.config else Config()
    if args.no_summaries:
        cfg = cfg.replace("summaries", enabled=False)
    if args.seed is not None:
        cfg = cfg.replace("rq", seed=args.seed)
    try:
        documents = load_corpus(args.corpus)
    except (OSError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    start = time.perf_counter()
    index = build_index(documents, cfg, args.out)
    m = index.manifest
    print(f"indexed {m['n_chunks']} chunks into {args.out} in {time.perf_counter() - start:.2f}s")
    print(f"  levels {m['level_sizes']} (effective {m['effective_level_sizes']})")
    print(f"  nodes {m['node_count']}, edges {m['edge_count']}, summaries {m['n_summaries']}")
    print(f"  LLM calls {index.ledger.total_calls}, tokens {index.ledger.total_tokens}")
    print(f"  index size {m['total_bytes'] / 1e6:.2f} MB")
    return 0


def _format_candidate(c) -> str:
    prov = ",".join(c.provenance) if c.provenance else "-"
    return (f"{c.rank:>3} {c.chunk_id:<28} final={c.final_score:.4f} bm25={c.bm25_norm:.3f} "
            f"({c.bm25_raw:.3f}) cos={c.cosine:.4f} fuzzy={c.fuzzy:.4f} boost={c.boost:.1f} via {prov}")


def cmd_query(args) -> int:
    index, cfg, provider, client = _open(args, args.stub_llm)
    pipeline = QueryPipeline(index.retriever(provider, cfg.retrieval), client, UsageLedger(), cfg.pipeline)
    result = pipeline.run(args.q, args.doc_id)
    if args.json:
        print(json.dumps({
            "query": args.q,
            "reformulations": list(result.plan.reformulations),
            "answer": result.answer,
            "rerank_fallback": result.rerank.fallback,
            "lattice_active": result.lattice_active,
            "calls": result.calls,
            "context": [{"rank": i, "chunk_id": c.chunk_id, "kind": c.kind, "final": c.final_score,
                         "bm25": c.bm25_norm, "bm25_raw": c.bm25_raw, "cosine": c.cosine, "fuzzy": c.fuzzy,
                         "boost": c.boost, "provenance": list(c.provenance)}
                        for i, c in enumerate(result.context, 1)],
        }, indent=2))
        return 0
    print(f"answer: {result.answer}")
    print(f"reformulations: {list(result.plan.reformulations)}")
    print(f"model calls: {result.calls}   rerank fallback: {result.rerank.fallback}   "
          f"lattice-derived in top-5: {result.lattice_active}")
    print("context (retrieval scores from the best-ranked hit list):")
    for i, c in enumerate(result.context, 1):
        print(f"{i:>2}. {_format_candidate(c)}")
    return 0


def read_tasks(path) -> list[dict]:
    """JSONL: ``{"id"?, "query", "answer", "doc_id"?}`` per line."""
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                tasks.append({"id": str(rec.get("id", lineno)), "query": rec["query"],
                              "answer": rec["answer"], "doc_id": rec.get("doc_id")})
            except (json.JSONDecodeError, KeyError) as exc:
                raise ConfigError(f"{path}:{lineno}: bad task record ({exc})") from None
    if not tasks:
        raise ConfigError(f"{path} has no tasks")
    return tasks


def cmd_eval(args) -> int:
    index, cfg, provider, client = _open(args, args.stub_llm)
    ledger = UsageLedger(index.ledger.entries())
    pipeline = QueryPipeline(index.retriever(provider, cfg.retrieval), client, ledger, cfg.pipeline)
    records = []
    for task in read_tasks(args.tasks):
        result = pipeline.run(task["query"], task["doc_id"])
        rec = EvalRecord(task["id"], result.answer or "", task["answer"], result.lattice_active)
        records.append(rec)
        logger.info("%s f1=%.3f active=%s", rec.query_id, rec.f1, rec.lattice_active)

    part = activation_partition(records)
    report = cost_report(ledger, len(records), args.snapshot_queries)
    mean_f1 = sum(r.f1 for r in records) / len(records)
    print(f"tasks: {len(records)}   mean token F1: {100 * mean_f1:.1f}%")
    print()
    print(part.format())
    print()
    print(report.format())
    if args.report:
        out = {
            "records": [{"query_id": r.query_id, "f1": r.f1, "lattice_active": r.lattice_active,
                         "predicted": r.predicted, "gold": r.gold} for r in records],
            "mean_f1": mean_f1,
            "activation": {"active_mean": part.active_mean, "inactive_mean": part.inactive_mean,
                           "delta_pp": part.delta_pp, "active_count": part.active_count,
                           "inactive_count": part.inactive_count, "note": part.note},
            "cost": report.to_records(),
        }
        Path(args.report).write_text(json.dumps(out, indent=2), encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    index = load_index(args.index)
    m = index.manifest
    print(f"index: {args.index}")
    print(f"  format v{m['format_version']}  corpus {m['corpus_hash'][:12]}  built {m['built_at']}")
    print(f"  chunks {m['n_chunks']}  summaries {m['n_summaries']}  dimension {m['embedding_dim']}")
    print("occupancy:")
    for o in index.occupancy.per_level:
        print(f"  L{o.level}  |C|={o.cluster_count:<4} occupancy {o.occupancy:.2f}  {o.label}")
    print("graph census:")
    for k, v in index.graph.census().items():
        print(f"  {k:<20} {v}")
    print(f"size on disk: {index_size_on_disk(args.index) / 1e6:.3f} MB")
    print(f"build LLM calls {index.ledger.total_calls}, tokens {index.ledger.total_tokens}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latticerag", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("index", help="build an index from a corpus")
    p.add_argument("--corpus", required=True, help="directory of .txt/.md files or a .jsonl file")
    p.add_argument("--out", required=True, help="index directory to write")
    p.add_argument("--config", help="JSON config overrides")
    p.add_argument("--no-summaries", action="store_true", help="skip summary virtual chunks (no LLM calls)")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("query", help="answer one query")
    p.add_argument("--index", required=True)
    p.add_argument("--q", required=True, help="query text")
    p.add_argument("--doc-id", help="restrict retrieval to one document")
    p.add_argument("--stub-llm", action="store_true", help="use the deterministic offline model client")
    p.add_argument("--config", help="JSON overrides for provider/client/pipeline")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("eval", help="run a task file and report F1, activation split and cost")
    p.add_argument("--index", required=True)
    p.add_argument("--tasks", required=True, help="JSONL task file")
    p.add_argument("--stub-llm", action="store_true")
    p.add_argument("--config")
    p.add_argument("--report", help="write a JSON report here")
    p.add_argument("--snapshot-queries", type=int, nargs="*", default=[10, 100, 1000, 10000],
                   help="query volumes per corpus snapshot for the amortization table")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("stats", help="describe an index")
    p.add_argument("--index", required=True)
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EmbeddingError, ModelClientError) as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (CorruptIndexError, IndexLockedError) as exc:
        print(f"index error: {exc}", file=sys.stderr)
        return EXIT_INDEX


if __name__ == "__main__":
    sys.exit(main())
