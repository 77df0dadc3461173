"""LLM usage ledger, token-level F1, activation partition and cost report."""

from __future__ import annotations

import re
import string
import threading
from collections import Counter
from dataclasses import asdict, dataclass, field

INDEXING_SUMMARY = "indexing.summary"
QUERY_EXPAND = "query.expand"
QUERY_RERANK = "query.rerank"
QUERY_ANSWER = "query.answer"
CATEGORIES = (INDEXING_SUMMARY, QUERY_EXPAND, QUERY_RERANK, QUERY_ANSWER)

DIAGNOSTIC_NOTE = (
    "Diagnostic split only: queries with lattice-derived items in the top-5 may "
    "differ in difficulty or topic, so the delta is correlational, not causal."
)


@dataclass(frozen=True)
class UsageEntry:
    category: str
    calls: int
    input_tokens: int
    output_tokens: int
    wall_time: float = 0.0

    @property
    def total_tokens(self) -> int:
        return self.input_tokens + self.output_tokens


class UsageLedger:
    """Thread-safe append-only record of LLM calls by category."""

    def __init__(self, entries=()):
        self._lock = threading.Lock()
        self._entries: list[UsageEntry] = []
        for e in entries:
            self.record(e.category, e.calls, e.input_tokens, e.output_tokens, e.wall_time)

    def record(self, category: str, calls: int = 1, input_tokens: int = 0,
               output_tokens: int = 0, wall_time: float = 0.0) -> UsageEntry:
        if category not in CATEGORIES:
            raise ValueError(f"unknown ledger category {category!r}")
        if min(calls, input_tokens, output_tokens) < 0 or wall_time < 0:
            raise ValueError("ledger counts must be non-negative")
        entry = UsageEntry(category, int(calls), int(input_tokens), int(output_tokens), float(wall_time))
        with self._lock:
            self._entries.append(entry)
        return entry

    def extend(self, other: "UsageLedger") -> None:
        for e in other.entries():
            self.record(e.category, e.calls, e.input_tokens, e.output_tokens, e.wall_time)

    def entries(self) -> list[UsageEntry]:
        with self._lock:
            return list(self._entries)

    def totals(self) -> dict[str, UsageEntry]:
        """Per-category sums over a consistent snapshot."""
        sums = {c: [0, 0, 0, 0.0] for c in CATEGORIES}
        for e in self.entries():
            s = sums[e.category]
            s[0] += e.calls
            s[1] += e.input_tokens
            s[2] += e.output_tokens
            s[3] += e.wall_time
        return {c: UsageEntry(c, *v) for c, v in sums.items()}

    @property
    def total_calls(self) -> int:
        return sum(e.calls for e in self.entries())

    @property
    def total_tokens(self) -> int:
        return sum(e.total_tokens for e in self.entries())

    def to_records(self) -> list[dict]:
        return [asdict(e) for e in self.entries()]

    @classmethod
    def from_records(cls, records) -> "UsageLedger":
        return cls(UsageEntry(**r) for r in records)


# token F1

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def normalize_answer(text: str) -> list[str]:
    """Lower-case, drop punctuation, split on whitespace. Articles are kept."""
    return _PUNCT.sub(" ", text.lower()).split()


def token_f1(predicted: str, gold: str) -> float:
    pred = normalize_answer(predicted)
    ref = normalize_answer(gold)
    if not pred and not ref:
        return 1.0
    if not pred or not ref:
        return 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


@dataclass
class EvalRecord:
    query_id: str
    predicted: str
    gold: str
    lattice_active: bool
    f1: float = field(default=None)

    def __post_init__(self):
        if self.f1 is None:
            self.f1 = token_f1(self.predicted, self.gold)


@dataclass(frozen=True)
class ActivationPartition:
    active_mean: float | None
    inactive_mean: float | None
    delta_pp: float | None
    active_count: int
    inactive_count: int
    note: str = DIAGNOSTIC_NOTE

    @property
    def total(self) -> int:
        return self.active_count + self.inactive_count

    def format(self) -> str:
        def pct(v):
            return "n/a (no queries)" if v is None else f"{100 * v:.1f}%"

        n = max(self.total, 1)
        lines = [
            "Activation analysis (lattice-derived items in top-5)",
            f"  active    F1 {pct(self.active_mean):>18}  queries {self.active_count} ({100 * self.active_count / n:.0f}%)",
            f"  inactive  F1 {pct(self.inactive_mean):>18}  queries {self.inactive_count} ({100 * self.inactive_count / n:.0f}%)",
            "  delta     " + ("n/a" if self.delta_pp is None else f"{self.delta_pp:+.1f} pp"),
            f"  {self.note}",
        ]
        return "\n".join(lines)


def activation_partition(records) -> ActivationPartition:
    records = list(records)
    if not records:
        raise ValueError("activation partition needs at least one record")
    active = [r.f1 for r in records if r.lattice_active]
    inactive = [r.f1 for r in records if not r.lattice_active]
    a = sum(active) / len(active) if active else None
    i = sum(inactive) / len(inactive) if inactive else None
    delta = 100 * (a - i) if a is not None and i is not None else None
    return ActivationPartition(a, i, delta, len(active), len(inactive))


# cost report


@dataclass(frozen=True)
class AmortizationRow:
    queries_per_snapshot: int
    indexing_tokens: int
    query_tokens: float
    total_tokens: float
    indexing_share: float


@dataclass(frozen=True)
class CostReport:
    by_category: dict
    indexing_calls: int
    indexing_tokens: int
    query_calls: int
    query_input_tokens: int
    query_output_tokens: int
    query_tokens: int
    n_queries: int
    calls_per_query: float
    tokens_per_query: float
    grand_total_calls: int
    grand_total_tokens: int
    amortization: tuple

    def to_records(self) -> list[dict]:
        """One machine-readable record per category plus a summary record."""
        rows = [
            {"category": c, "calls": e.calls, "input_tokens": e.input_tokens,
             "output_tokens": e.output_tokens, "total_tokens": e.total_tokens,
             "wall_time": e.wall_time}
            for c, e in self.by_category.items()
        ]
        rows.append({
            "category": "summary",
            "indexing_calls": self.indexing_calls,
            "indexing_tokens": self.indexing_tokens,
            "query_calls": self.query_calls,
            "query_tokens": self.query_tokens,
            "n_queries": self.n_queries,
            "calls_per_query": self.calls_per_query,
            "tokens_per_query": self.tokens_per_query,
            "grand_total_calls": self.grand_total_calls,
            "grand_total_tokens": self.grand_total_tokens,
            "amortization": [asdict(r) for r in self.amortization],
        })
        return rows

    def format(self) -> str:
        lines = [f"{'Operation':<18}{'Calls':>8}{'In':>12}{'Out':>12}{'Total':>12}"]
        for c, e in self.by_category.items():
            lines.append(f"{c:<18}{e.calls:>8,}{e.input_tokens:>12,}{e.output_tokens:>12,}{e.total_tokens:>12,}")
        lines.append(f"{'indexing total':<18}{self.indexing_calls:>8,}{'':>24}{self.indexing_tokens:>12,}")
        lines.append(
            f"{'query total':<18}{self.query_calls:>8,}{self.query_input_tokens:>12,}"
            f"{self.query_output_tokens:>12,}{self.query_tokens:>12,}"
        )
        lines.append(
            f"{'per query':<18}{self.calls_per_query:>8.2f}{'':>24}{self.tokens_per_query:>12,.0f}"
            f"   ({self.n_queries} queries)"
        )
        lines.append(f"{'grand total':<18}{self.grand_total_calls:>8,}{'':>24}{self.grand_total_tokens:>12,}")
        if self.amortization:
            lines.append("")
            lines.append(f"{'queries/snapshot':>16}{'index tok':>12}{'query tok':>14}{'total':>14}{'index share':>13}")
            for r in self.amortization:
                lines.append(
                    f"{r.queries_per_snapshot:>16,}{r.indexing_tokens:>12,}{r.query_tokens:>14,.0f}"
                    f"{r.total_tokens:>14,.0f}{100 * r.indexing_share:>12.1f}%"
                )
        return "\n".join(lines)


def cost_report(ledger: UsageLedger, n_queries: int = 0, queries_per_snapshot=()) -> CostReport:
    """Summarise a ledger into indexing/query subtotals and per-query averages.

    ``queries_per_snapshot`` lists expected query volumes per corpus snapshot;
    each gets a row showing what one re-index costs relative to the queries
    it serves.
    """
    totals = ledger.totals()
    idx = totals[INDEXING_SUMMARY]
    q_entries = [totals[c] for c in CATEGORIES if c.startswith("query.")]
    q_calls = sum(e.calls for e in q_entries)
    q_in = sum(e.input_tokens for e in q_entries)
    q_out = sum(e.output_tokens for e in q_entries)
    q_tokens = q_in + q_out
    calls_pq = q_calls / n_queries if n_queries else 0.0
    tokens_pq = q_tokens / n_queries if n_queries else 0.0

    rows = []
    for volume in queries_per_snapshot:
        query_tok = volume * tokens_pq
        total = idx.total_tokens + query_tok
        rows.append(AmortizationRow(int(volume), idx.total_tokens, query_tok, total,
                                    idx.total_tokens / total if total else 0.0))
    return CostReport(
        by_category=totals,
        indexing_calls=idx.calls,
        indexing_tokens=idx.total_tokens,
        query_calls=q_calls,
        query_input_tokens=q_in,
        query_output_tokens=q_out,
        query_tokens=q_tokens,
        n_queries=n_queries,
        calls_per_query=calls_pq,
        tokens_per_query=tokens_pq,
        grand_total_calls=idx.calls + q_calls,
        grand_total_tokens=idx.total_tokens + q_tokens,
        amortization=tuple(rows),
    )
