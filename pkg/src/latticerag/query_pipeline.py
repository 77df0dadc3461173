"""Query-time orchestration: three reformulations, RRF, LLM rerank, answer.

A fully successful query costs five model calls (three rewrites, one rerank,
one answer). Every completed call lands in the :class:`UsageLedger`; failed
or timed-out calls fall back without being charged.
"""

from __future__ import annotations

import abc
import logging
import math
import re
import time
from concurrent.futures import ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

from .accounting import QUERY_ANSWER, QUERY_EXPAND, QUERY_RERANK, UsageLedger

logger = logging.getLogger(__name__)

ROLES = ("expand", "rerank", "answer", "summarize")
VARIANTS = ("paraphrase", "decompose", "entity")
DEFAULT_K_RRF = 60


class ModelClientError(Exception):
    """A model call failed or returned something unusable."""


@dataclass(frozen=True)
class ModelRequest:
    """``role`` and ``prompt`` go over the wire; ``fields`` are the structured
    inputs the prompt was rendered from (the stub client reads them)."""

    role: str
    prompt: str
    fields: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")


@dataclass(frozen=True)
class Completion:
    text: str
    input_tokens: int
    output_tokens: int

    def __post_init__(self):
        if self.input_tokens < 0 or self.output_tokens < 0:
            raise ValueError("token counts must be non-negative")


class ModelClient(abc.ABC):
    @abc.abstractmethod
    def complete(self, request: ModelRequest) -> Completion:
        ...


def _first_sentence(text: str, max_words: int = 40) -> str:
    sentence = re.split(r"(?<=[.!?])\s", text.strip(), maxsplit=1)[0]
    return " ".join(sentence.split()[:max_words])


class StubClient(ModelClient):
    """Deterministic offline client.

    expand returns the query unchanged, rerank echoes the candidate order,
    answer and summarize concatenate leading sentences of their passages.
    Token counts are whitespace word counts of prompt and reply.
    """

    def __init__(self, answer_passages: int = 2):
        self.answer_passages = answer_passages
        self.requests: list[ModelRequest] = []

    def complete(self, request: ModelRequest) -> Completion:
        self.requests.append(request)
        f = request.fields
        if request.role == "expand":
            text = f["query"]
        elif request.role == "rerank":
            text = " ".join(f["candidate_ids"])
        elif request.role == "answer":
            text = " ".join(_first_sentence(p) for p in f["passages"][: self.answer_passages])
        else:
            text = " ".join(_first_sentence(p, 25) for p in f["passages"])
        return Completion(text, len(request.prompt.split()), len(text.split()))


class RemoteClient(ModelClient):
    """JSON-over-HTTP model service.

    Request ``{"role", "prompt"}``; response ``{"text", "input_tokens",
    "output_tokens"}``.
    """

    def __init__(self, endpoint: str, timeout: float = 60.0, headers: dict | None = None, client=None):
        import httpx

        self.endpoint = endpoint
        self._client = client or httpx.Client(timeout=timeout, headers=headers or {})

    def complete(self, request: ModelRequest) -> Completion:
        import httpx

        try:
            resp = self._client.post(self.endpoint, json={"role": request.role, "prompt": request.prompt})
            resp.raise_for_status()
            body = resp.json()
            return Completion(str(body["text"]), int(body["input_tokens"]), int(body["output_tokens"]))
        except (httpx.HTTPError, ValueError, KeyError, TypeError) as exc:
            raise ModelClientError(f"model service failed: {exc}") from exc


@lru_cache(maxsize=None)
def load_prompt(name: str) -> str:
    return resources.files("latticerag").joinpath(f"data/prompts/{name}.txt").read_text(encoding="utf-8")


def call_model(client: ModelClient, ledger: UsageLedger | None, category: str,
               request: ModelRequest) -> Completion:
    """Issue one call and charge it to ``category`` once it completes."""
    start = time.perf_counter()
    try:
        completion = client.complete(request)
    except ModelClientError:
        raise
    except Exception as exc:
        raise ModelClientError(str(exc)) from exc
    if ledger is not None:
        ledger.record(category, 1, completion.input_tokens, completion.output_tokens,
                      time.perf_counter() - start)
    return completion


# expansion


@dataclass(frozen=True)
class QueryPlan:
    original: str
    reformulations: tuple
    doc_filter: str | None = None
    fallbacks: tuple = (False, False, False)

    def __post_init__(self):
        if len(self.reformulations) != 3:
            raise ValueError("a query plan has exactly three reformulations")
        if any(not r.strip() for r in self.reformulations):
            raise ValueError("reformulations must be non-empty")


def _clean_rewrite(text: str) -> str:
    lines = [ln.strip() for ln in text.strip().splitlines() if ln.strip()]
    return lines[0] if lines else ""


def expand_query(query: str, client: ModelClient, ledger: UsageLedger | None = None,
                 doc_filter: str | None = None, timeout: float | None = 30.0) -> QueryPlan:
    """Ask for a paraphrase, a sub-question and an entity-focused variant.

    The three calls run concurrently. A slot whose call fails, times out or
    comes back empty keeps the original query.
    """
    def one(variant):
        req = ModelRequest("expand", load_prompt(variant).format(query=query),
                           {"query": query, "variant": variant})
        return _clean_rewrite(call_model(client, ledger, QUERY_EXPAND, req).text)

    out, fallbacks = [], []
    pool = ThreadPoolExecutor(max_workers=3)
    try:
        futures = [pool.submit(one, v) for v in VARIANTS]
        for variant, fut in zip(VARIANTS, futures):
            try:
                text = fut.result(timeout=timeout)
            except (ModelClientError, FutureTimeout) as exc:
                logger.warning("expansion %s failed: %s", variant, exc or "timeout")
                text = ""
            out.append(text or query)
            fallbacks.append(not text)
    finally:
        pool.shutdown(wait=False)
    return QueryPlan(query, tuple(out), doc_filter, tuple(fallbacks))


# fusion


@dataclass(frozen=True)
class FusedEntry:
    chunk_id: str
    score: float
    ranks: tuple


@dataclass(frozen=True)
class FusedRanking:
    entries: tuple

    def ids(self) -> list[str]:
        return [e.chunk_id for e in self.entries]

    def top(self, n: int) -> "FusedRanking":
        return FusedRanking(self.entries[:n])

    def __len__(self):
        return len(self.entries)


def rrf_fuse(lists, k_rrf: int = DEFAULT_K_RRF) -> FusedRanking:
    """Reciprocal rank fusion of 1-based ranked id lists.

    Scores are summed with ``math.fsum`` so they do not depend on list order.
    """
    lists = [list(l) for l in lists]
    if not lists:
        raise ValueError("rrf_fuse needs at least one ranked list")
    ranks: dict = {}
    for li, lst in enumerate(lists):
        if len(set(lst)) != len(lst):
            raise ValueError("a ranked list contains duplicate ids")
        for rank, cid in enumerate(lst, 1):
            ranks.setdefault(cid, [None] * len(lists))[li] = rank
    entries = [
        FusedEntry(cid, math.fsum(1.0 / (k_rrf + r) for r in rs if r is not None), tuple(rs))
        for cid, rs in ranks.items()
    ]
    entries.sort(key=lambda e: (-e.score, e.chunk_id))
    return FusedRanking(tuple(entries))


# rerank and answer


@dataclass(frozen=True)
class RerankResult:
    chunk_ids: tuple
    fallback: bool
    reason: str = ""


def parse_rerank(text: str, allowed) -> list[str] | None:
    """First line made only of allowed ids (spaces/commas between them)."""
    allowed = set(allowed)
    for line in text.splitlines():
        tokens = [t for t in re.split(r"[\s,]+", line.strip()) if t]
        if tokens and all(t in allowed for t in tokens):
            seen = []
            for t in tokens:
                if t not in seen:
                    seen.append(t)
            return seen
    return None


def rerank(candidates: FusedRanking, query: str, client: ModelClient, snippets: dict,
           ledger: UsageLedger | None = None, n_keep: int = 12, max_in: int = 25) -> RerankResult:
    """Reduce up to ``max_in`` fused candidates to ``min(n_keep, len)``.

    If the reply names fewer ids than needed, the rest are filled in fusion
    order. An unparsable reply or a failed call falls back to fusion order.
    """
    ids = candidates.ids()
    if len(ids) > max_in:
        raise ValueError(f"rerank accepts at most {max_in} candidates, got {len(ids)}")
    n_out = min(n_keep, len(ids))
    if not ids:
        return RerankResult((), False)
    passages = "\n".join(f"[{cid}] {' '.join(snippets.get(cid, '').split()[:80])}" for cid in ids)
    req = ModelRequest("rerank", load_prompt("rerank").format(query=query, n_keep=n_out, passages=passages),
                       {"query": query, "candidate_ids": ids})
    try:
        reply = call_model(client, ledger, QUERY_RERANK, req)
    except ModelClientError as exc:
        logger.warning("rerank call failed: %s", exc)
        return RerankResult(tuple(ids[:n_out]), True, f"client failure: {exc}")
    chosen = parse_rerank(reply.text, ids)
    if chosen is None:
        return RerankResult(tuple(ids[:n_out]), True, "unparsable rerank reply")
    chosen = chosen[:n_out]
    chosen += [c for c in ids if c not in chosen][: n_out - len(chosen)]
    return RerankResult(tuple(chosen), False)


def answer(query: str, context_texts, client: ModelClient,
           ledger: UsageLedger | None = None) -> tuple[str, Completion]:
    """Generate the final answer from the context passages."""
    context_texts = list(context_texts)
    if not context_texts:
        raise ValueError("answer generation needs at least one context chunk")
    context = "\n\n".join(f"[{i}] {t}" for i, t in enumerate(context_texts, 1))
    req = ModelRequest("answer", load_prompt("answer").format(query=query, context=context),
                       {"query": query, "passages": context_texts})
    completion = call_model(client, ledger, QUERY_ANSWER, req)
    return completion.text.strip(), completion


# pipeline


@dataclass(frozen=True)
class PipelineConfig:
    k_rrf: int = DEFAULT_K_RRF
    retrieve_k: int = 25
    rerank_in: int = 25
    rerank_out: int = 12
    lattice_top: int = 5
    expand: bool = True
    rerank: bool = True
    answer: bool = True
    timeout: float = 30.0


@dataclass
class QueryResult:
    plan: QueryPlan
    hit_lists: list
    fused: FusedRanking
    rerank: RerankResult
    context: list
    answer: str | None
    calls: int
    lattice_active: bool


class QueryPipeline:
    """Expansion -> hybrid search per variant -> RRF -> rerank -> answer."""

    def __init__(self, retriever, client: ModelClient, ledger: UsageLedger | None = None,
                 config: PipelineConfig = PipelineConfig()):
        self.retriever = retriever
        self.client = client
        self.ledger = ledger if ledger is not None else UsageLedger()
        self.config = config
        self._texts = {item.id: item.text for item in retriever.items}

    def run(self, query: str, doc_filter: str | None = None) -> QueryResult:
        cfg = self.config
        usage = UsageLedger()
        if cfg.expand:
            plan = expand_query(query, self.client, usage, doc_filter, cfg.timeout)
        else:
            plan = QueryPlan(query, (query,) * 3, doc_filter, (True,) * 3)

        cache: dict = {}
        hit_lists = []
        for text in plan.reformulations:
            if text not in cache:
                cache[text] = self.retriever.search(text, doc_filter, cfg.retrieve_k)
            hit_lists.append(cache[text])

        fused = rrf_fuse([[c.chunk_id for c in hits] for hits in hit_lists], cfg.k_rrf)
        top = fused.top(cfg.rerank_in)
        if cfg.rerank:
            rr = rerank(top, query, self.client, self._texts, usage, cfg.rerank_out, cfg.rerank_in)
        else:
            rr = RerankResult(tuple(top.ids()[: cfg.rerank_out]), True, "rerank disabled")

        best = {}
        for hits in hit_lists:
            for c in hits:
                if c.chunk_id not in best or c.rank < best[c.chunk_id].rank:
                    best[c.chunk_id] = c
        context = [best[cid] for cid in rr.chunk_ids]

        text = None
        if cfg.answer:
            text, _ = answer(query, [self._texts[c.chunk_id] for c in context], self.client, usage)

        self.ledger.extend(usage)
        active = any(c.lattice_derived for c in context[: cfg.lattice_top])
        return QueryResult(plan, hit_lists, fused, rr, context, text, usage.total_calls, active)
