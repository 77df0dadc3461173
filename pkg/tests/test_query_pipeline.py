import json
import time

import httpx
import pytest

from _synthetic import build_retriever, planted_corpus
from latticerag.accounting import QUERY_ANSWER, QUERY_EXPAND, QUERY_RERANK, UsageLedger
from latticerag.query_pipeline import (Completion, FusedRanking, ModelClient, ModelClientError, PipelineConfig,
                                       QueryPipeline, RemoteClient, StubClient, answer, expand_query,
                                       load_prompt, parse_rerank, rerank, rrf_fuse)


class Scripted(ModelClient):
    """Replies by role; a callable reply may raise."""

    def __init__(self, **replies):
        self.replies = replies
        self.roles = []

    def complete(self, request):
        self.roles.append(request.role)
        reply = self.replies[request.role]
        text = reply(request) if callable(reply) else reply
        return Completion(text, 10, 2)


def fail(_request):
    raise ModelClientError("down")


def test_prompts_have_placeholders():
    for name in ("paraphrase", "decompose", "entity"):
        assert "{query}" in load_prompt(name)
    assert "{passages}" in load_prompt("rerank") and "{n_keep}" in load_prompt("rerank")
    assert "{context}" in load_prompt("answer")
    assert "{passages}" in load_prompt("summarize")


def test_rrf_hand_arithmetic_and_ties():
    fused = rrf_fuse([["a", "b", "c"], ["b", "a"]], 60)
    assert fused.ids() == ["a", "b", "c"]
    assert fused.entries[0].score == fused.entries[1].score == 1 / 61 + 1 / 62
    assert fused.entries[2].score == 1 / 63
    assert fused.entries[0].ranks == (1, 2) and fused.entries[2].ranks == (3, None)
    with pytest.raises(ValueError):
        rrf_fuse([])
    with pytest.raises(ValueError):
        rrf_fuse([["a", "a"]])


def test_expand_with_fallbacks():
    def by_variant(req):
        if req.fields["variant"] == "decompose":
            raise ModelClientError("nope")
        return "\n  rewritten " + req.fields["variant"] + "\nextra line"

    ledger = UsageLedger()
    plan = expand_query("original q", Scripted(expand=by_variant), ledger)
    assert plan.reformulations == ("rewritten paraphrase", "original q", "rewritten entity")
    assert plan.fallbacks == (False, True, False)
    # the failed call is not charged
    assert ledger.totals()[QUERY_EXPAND].calls == 2


def test_expand_timeout_falls_back():
    def slow(req):
        time.sleep(0.5)
        return "late"

    plan = expand_query("q", Scripted(expand=slow), timeout=0.05)
    assert plan.reformulations == ("q", "q", "q") and all(plan.fallbacks)


def test_parse_rerank():
    assert parse_rerank("Here you go:\nb, a c\n", ["a", "b", "c"]) == ["b", "a", "c"]
    assert parse_rerank("b b a", ["a", "b"]) == ["b", "a"]
    assert parse_rerank("no ids at all", ["a"]) is None


def _fused(n):
    return rrf_fuse([[f"c{i}" for i in range(n)]])


def test_rerank_fills_and_falls_back():
    snippets = {f"c{i}": f"text {i}" for i in range(20)}
    res = rerank(_fused(20), "q", Scripted(rerank="c5 c3"), snippets, n_keep=4, max_in=25)
    assert res.chunk_ids == ("c5", "c3", "c0", "c1") and not res.fallback
    res = rerank(_fused(20), "q", Scripted(rerank="I cannot"), snippets, n_keep=4)
    assert res.chunk_ids == ("c0", "c1", "c2", "c3") and res.fallback
    ledger = UsageLedger()
    res = rerank(_fused(20), "q", Scripted(rerank=fail), snippets, ledger, n_keep=4)
    assert res.fallback and "client failure" in res.reason and ledger.total_calls == 0
    assert rerank(_fused(3), "q", Scripted(rerank="c2"), snippets, n_keep=12).chunk_ids == ("c2", "c0", "c1")
    with pytest.raises(ValueError):
        rerank(_fused(30), "q", StubClient(), snippets)
    assert rerank(FusedRanking(()), "q", StubClient(), snippets).chunk_ids == ()


def test_answer_requires_context():
    with pytest.raises(ValueError):
        answer("q", [], StubClient())
    text, comp = answer("q", ["First one. Second.", "Other passage."], StubClient())
    assert text == "First one. Other passage."
    assert comp.output_tokens == 4


def test_stub_client_counts_words():
    client = StubClient()
    ledger = UsageLedger()
    answer("q", ["Alpha beta."], client, ledger)
    req = client.requests[0]
    assert ledger.totals()[QUERY_ANSWER].input_tokens == len(req.prompt.split())


def test_remote_client_contract():
    def handler(request):
        body = json.loads(request.content)
        assert body["role"] == "answer"
        return httpx.Response(200, json={"text": "Paris", "input_tokens": 12, "output_tokens": 1})

    client = RemoteClient("http://llm.test", client=httpx.Client(transport=httpx.MockTransport(handler)))
    text, comp = answer("capital?", ["France has Paris."], client)
    assert text == "Paris" and comp.input_tokens == 12

    broken = RemoteClient("http://llm.test", client=httpx.Client(
        transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"text": "x"}))))
    with pytest.raises(ModelClientError):
        answer("q", ["p"], broken)


@pytest.fixture(scope="module")
def pipeline_parts():
    ids, texts, vectors = planted_corpus(21, n=60, d=6, k=3)
    r = build_retriever(ids, texts, vectors, level_sizes=(4, 2))
    lookup = {t: v for t, v in zip(texts, vectors)}

    class Provider:
        def embed_query(self, text):
            return lookup.get(text, vectors[0])

    r.provider = Provider()
    return r, texts


def test_pipeline_call_budget(pipeline_parts):
    r, texts = pipeline_parts
    ledger = UsageLedger()
    result = QueryPipeline(r, StubClient(), ledger).run(texts[4])
    assert result.calls == 5 and ledger.total_calls == 5
    t = ledger.totals()
    assert (t[QUERY_EXPAND].calls, t[QUERY_RERANK].calls, t[QUERY_ANSWER].calls) == (3, 1, 1)
    assert len(result.context) == 12
    assert result.context[0].chunk_id == result.fused.ids()[0]
    assert result.answer


def test_pipeline_without_llm_stages(pipeline_parts):
    r, texts = pipeline_parts
    cfg = PipelineConfig(expand=False, rerank=False, answer=False)
    result = QueryPipeline(r, StubClient(), config=cfg).run(texts[2])
    assert result.calls == 0 and result.answer is None and result.rerank.fallback
    assert len(result.context) == 12


def test_pipeline_is_deterministic(pipeline_parts):
    r, texts = pipeline_parts
    a = QueryPipeline(r, StubClient()).run(texts[7])
    b = QueryPipeline(r, StubClient()).run(texts[7])
    assert [c.chunk_id for c in a.context] == [c.chunk_id for c in b.context]
    assert a.answer == b.answer and a.lattice_active == b.lattice_active


def test_pipeline_lattice_flag(pipeline_parts):
    r, texts = pipeline_parts
    result = QueryPipeline(r, StubClient()).run(texts[9])
    assert result.lattice_active == any(c.lattice_derived for c in result.context[:5])


def test_pipeline_answer_failure_propagates(pipeline_parts):
    r, texts = pipeline_parts
    client = Scripted(expand="q", rerank="", answer=fail)
    ledger = UsageLedger()
    with pytest.raises(ModelClientError):
        QueryPipeline(r, client, ledger).run(texts[1])
    assert ledger.total_calls == 0
