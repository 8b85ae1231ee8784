"""Ranking evaluation: intersection ratio against a gold standard, and
entropy novelty of the recommended-document distribution."""

from __future__ import annotations

import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .similarity import RankingTable


class GoldFormatError(ValueError):
    pass


class NoGoldData(KeyError):
    pass


class EvaluationError(ValueError):
    pass


class GoldStandard:
    """Symmetric sparse pairwise similarity, looked up in either order."""

    def __init__(self):
        self._by_doc: dict[str, dict[str, float]] = {}

    def __len__(self) -> int:
        return sum(len(v) for v in self._by_doc.values()) // 2

    def __contains__(self, doc) -> bool:
        return doc in self._by_doc

    def docs(self):
        return self._by_doc.keys()

    def add(self, a: str, b: str, score: float) -> None:
        if not math.isfinite(score):
            raise ValueError(f"non-finite gold score for ({a}, {b})")
        prev = self._by_doc.get(a, {}).get(b)
        if prev is not None:
            if prev != score:
                raise ValueError(f"conflicting gold scores for ({a}, {b}): {prev} vs {score}")
            return
        self._by_doc.setdefault(a, {})[b] = score
        self._by_doc.setdefault(b, {})[a] = score

    def score(self, a: str, b: str) -> float | None:
        return self._by_doc.get(a, {}).get(b)

    def row(self, doc: str) -> dict[str, float]:
        try:
            return self._by_doc[doc]
        except KeyError:
            raise NoGoldData(doc) from None


def load_gold(source) -> GoldStandard:
    """Read ``id_a<TAB>id_b<TAB>score`` lines from a path or text stream."""
    if isinstance(source, str) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8") as fh:
            return load_gold(fh)
    gold = GoldStandard()
    for lineno, line in enumerate(source, start=1):
        line = line.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not parts[0] or not parts[1]:
            raise GoldFormatError(f"line {lineno}: expected 'id_a<TAB>id_b<TAB>score'")
        try:
            gold.add(parts[0], parts[1], float(parts[2]))
        except ValueError as exc:
            raise GoldFormatError(f"line {lineno}: {exc}") from None
    return gold


def write_gold(pairs: Iterable[tuple[str, str, float]], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for a, b, s in pairs:
            fh.write(f"{a}\t{b}\t{s:.9g}\n")


def _sorted_row(gold: GoldStandard, doc: str) -> list[tuple[str, float]]:
    row = gold.row(doc)
    return sorted(((d, s) for d, s in row.items() if d != doc), key=lambda t: (-t[1], t[0]))


def gold_top_k(gold: GoldStandard, doc: str, k: int) -> list[tuple[str, float]]:
    """Best ``k`` gold partners of ``doc``; ties broken by ascending id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return _sorted_row(gold, doc)[:k]


def _tie_aware_hits(ranked: set[str], row: list[tuple[str, float]], k: int) -> int:
    # Best overlap over every gold top-k set consistent with the score order.
    if len(row) <= k:
        return len(ranked & {d for d, _ in row})
    cut = row[k - 1][1]
    above = {d for d, s in row if s > cut}
    tied = {d for d, s in row if s == cut}
    return len(ranked & above) + min(len(ranked & tied), k - len(above))


@dataclass
class MetricReport:
    metric: str
    k: int | None
    value: float
    evaluated: int
    skipped: int
    per_query: dict[str, float] = field(default_factory=dict)

    def line(self) -> str:
        k = "" if self.k is None else str(self.k)
        return f"{self.metric}\t{k}\t{self.value:.9g}\t{self.evaluated}\t{self.skipped}\n"


def intersection_ratio(system: RankingTable, gold: GoldStandard, k: int, queries=None,
                       denominator: str = "k", ties: str = "id") -> MetricReport:
    """Mean over queries of ``|top-k(system) ∩ top-k(gold)| / k``.

    ``queries`` defaults to every query in ``system``; listed queries absent
    from ``system`` count as empty rankings. Queries without gold data are
    skipped and counted. ``denominator="list"`` divides by the system list
    length instead of ``k``. ``ties="shared"`` lets any gold document tied
    with the k-th gold score stand in for it, taking the best overlap.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if denominator not in ("k", "list"):
        raise ValueError("denominator must be 'k' or 'list'")
    if ties not in ("id", "shared"):
        raise ValueError("ties must be 'id' or 'shared'")
    queries = list(system) if queries is None else list(queries)
    per_query: dict[str, float] = {}
    skipped = 0
    for q in queries:
        if q not in gold:
            skipped += 1
            continue
        ranked = [d for d, _ in (system.lists.get(q) or [])][:k]
        got = set(ranked)
        if len(got) != len(ranked):
            raise EvaluationError(f"duplicate document in ranking of {q!r}")
        if ties == "shared":
            hits = _tie_aware_hits(got, _sorted_row(gold, q), k)
        else:
            hits = len(got & {d for d, _ in gold_top_k(gold, q, k)})
        if denominator == "k":
            per_query[q] = hits / k
        else:
            per_query[q] = hits / len(ranked) if ranked else 0.0
    if not per_query:
        raise EvaluationError("no evaluable queries: no ranked document has gold data")
    value = math.fsum(per_query.values()) / len(per_query)
    return MetricReport("intersection_ratio", k, value, len(per_query), skipped, per_query)


def recommendation_distribution(table: RankingTable) -> dict[str, float]:
    """``p_i``: lists containing ``i`` over the summed list lengths."""
    counts: Counter[str] = Counter()
    total = 0
    for q, ranked in table.items():
        docs = [d for d, _ in ranked]
        if len(set(docs)) != len(docs):
            raise EvaluationError(f"duplicate document in ranking of {q!r}")
        counts.update(docs)
        total += len(docs)
    if total == 0:
        raise EvaluationError("all rankings are empty")
    return {d: c / total for d, c in counts.items()}


def entropy_novelty(table: RankingTable, k: int | None = None) -> MetricReport:
    """Shannon entropy (natural log) of how often each document is recommended."""
    p = recommendation_distribution(table)
    probs = np.fromiter(p.values(), dtype=np.float64)
    value = float(-np.sum(probs * np.log(probs))) + 0.0  # no -0.0
    nonempty = sum(1 for _, r in table.items() if r)
    return MetricReport("entropy_novelty", k, value, nonempty, len(table) - nonempty)


def write_reports(reports: Iterable[MetricReport], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in reports:
            fh.write(r.line())


def read_reports(path: str) -> list[MetricReport]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            metric, k, value, ev, sk = line.rstrip("\r\n").split("\t")
            out.append(MetricReport(metric, int(k) if k else None, float(value), int(ev), int(sk)))
    return out


def write_per_query(report: MetricReport, path: str) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["query", report.metric])
    for q, v in report.per_query.items():
        w.writerow([q, f"{v:.9g}"])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(buf.getvalue())
