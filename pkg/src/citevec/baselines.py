"""Co-occurrence citation similarity: Amsler, co-citation, bibliographic coupling.

All three are zero unless the two documents share a neighbour, so ranking
only needs to scan the two-hop ball around the query.
"""

from __future__ import annotations

from typing import Callable

from .graph import CitationGraph
from .similarity import RankingTable


def amsler(graph: CitationGraph, a, b) -> float:
    """Jaccard overlap of the combined citing+cited sets; 0 when both are empty."""
    sa, sb = graph.neighbors(a), graph.neighbors(b)
    union = len(sa | sb)
    if union == 0:
        return 0.0
    return len(sa & sb) / union


def cocitation(graph: CitationGraph, a, b) -> int:
    """Number of documents citing both."""
    return len(graph.citing[graph.lookup(a)] & graph.citing[graph.lookup(b)])


def bibliographic_coupling(graph: CitationGraph, a, b) -> int:
    """Number of shared references."""
    return len(graph.cited[graph.lookup(a)] & graph.cited[graph.lookup(b)])


MEASURES: dict[str, Callable] = {
    "amsler": amsler,
    "cocitation": cocitation,
    "coupling": bibliographic_coupling,
}


def _measure(measure) -> Callable:
    if callable(measure):
        return measure
    try:
        return MEASURES[measure]
    except KeyError:
        raise ValueError(f"unknown measure {measure!r}; choose from {sorted(MEASURES)}") from None


def two_hop_candidates(graph: CitationGraph, doc) -> list[int]:
    i = graph.lookup(doc)
    ball = graph.within_hops([i], 2)
    ball.discard(i)
    return sorted(ball)


def _ranked(graph, fn, i, candidates, k):
    scored = [(j, fn(graph, i, j)) for j in candidates]
    scored = [(j, s) for j, s in scored if s > 0]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [(graph.ids[j], float(s)) for j, s in scored[:k]]


def baseline_top_k(graph: CitationGraph, measure, doc, k: int) -> list[tuple[str, float]]:
    """Nonzero-scoring documents ranked by ``measure``; may return fewer than ``k``."""
    if k < 1:
        raise ValueError("k must be >= 1")
    fn = _measure(measure)
    i = graph.lookup(doc)
    return _ranked(graph, fn, i, two_hop_candidates(graph, i), k)


def full_scan_top_k(graph: CitationGraph, measure, doc, k: int) -> list[tuple[str, float]]:
    """Same ranking as :func:`baseline_top_k` but scoring every document."""
    fn = _measure(measure)
    i = graph.lookup(doc)
    return _ranked(graph, fn, i, [j for j in range(graph.node_count) if j != i], k)


def baseline_table(graph: CitationGraph, measure, k: int) -> RankingTable:
    """Rankings for every document, empty lists included."""
    return RankingTable({graph.ids[i]: baseline_top_k(graph, measure, i, k) for i in range(graph.node_count)})
