"""Citation graph ingestion.

Directed citation records are interned to dense indices and collapsed to an
undirected simple graph for the random walk. The directed citing/cited sets
are kept alongside because the co-occurrence baselines need them.
"""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable, Iterator, TextIO

import numpy as np
import scipy.sparse as sp


class EdgeFormatError(ValueError):
    """Raised for a malformed line in an edge file."""

    def __init__(self, lineno: int, line: str, reason: str = "expected 'citing<TAB>cited'"):
        self.lineno = lineno
        super().__init__(f"line {lineno}: {reason}: {line!r}")


@dataclass(frozen=True)
class CitationGraph:
    """Immutable citation graph over ``V`` documents.

    ``adjacency[i]`` is the sorted tuple of undirected neighbours of ``i``.
    ``cited[i]`` (C_d) holds the documents ``i`` cites and ``citing[i]``
    (P_d) the documents citing ``i``. Self-citations appear in neither.
    """

    ids: tuple[str, ...]
    adjacency: tuple[tuple[int, ...], ...]
    cited: tuple[frozenset[int], ...]
    citing: tuple[frozenset[int], ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {d: i for i, d in enumerate(self.ids)})

    @property
    def node_count(self) -> int:
        return len(self.ids)

    def __len__(self) -> int:
        return len(self.ids)

    def lookup(self, doc) -> int:
        """Resolve an external id (str) or internal index (int) to an index."""
        if isinstance(doc, (int, np.integer)) and not isinstance(doc, bool):
            if 0 <= doc < len(self.ids):
                return int(doc)
            raise KeyError(f"unknown node index {doc}")
        try:
            return self.index[doc]
        except KeyError:
            raise KeyError(f"unknown document {doc!r}") from None

    def degree(self, doc) -> int:
        return len(self.adjacency[self.lookup(doc)])

    def degrees(self) -> np.ndarray:
        return np.fromiter((len(a) for a in self.adjacency), dtype=np.int64, count=len(self.ids))

    def neighbors(self, doc) -> frozenset[int]:
        """P_d ∪ C_d as a set of indices."""
        i = self.lookup(doc)
        return self.cited[i] | self.citing[i]

    def edges(self) -> list[tuple[int, int]]:
        """Deduplicated directed citation pairs, sorted by (citing, cited)."""
        return [(i, j) for i in range(len(self.ids)) for j in sorted(self.cited[i])]

    def undirected_edge_count(self) -> int:
        return sum(len(a) for a in self.adjacency) // 2

    def transition_matrix(self) -> sp.csr_matrix:
        """Row-stochastic uniform random-walk matrix A (zero rows for isolated nodes)."""
        n = len(self.ids)
        deg = self.degrees()
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        indices = np.fromiter(
            (j for adj in self.adjacency for j in adj), dtype=np.int64, count=int(indptr[-1])
        )
        data = np.repeat(1.0 / np.maximum(deg, 1), deg)
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))

    def within_hops(self, sources: Iterable[int], hops: int) -> set[int]:
        """All nodes at undirected distance <= ``hops`` from any of ``sources``."""
        seen = set(sources)
        frontier = list(seen)
        for _ in range(hops):
            nxt = []
            for u in frontier:
                for v in self.adjacency[u]:
                    if v not in seen:
                        seen.add(v)
                        nxt.append(v)
            frontier = nxt
            if not frontier:
                break
        return seen


def parse_edge_lines(lines: Iterable[str]) -> Iterator[tuple[str, str]]:
    """Yield (citing, cited) pairs from tab-separated text lines.

    Blank lines and lines starting with ``#`` are skipped; trailing CR/LF is
    stripped so CRLF files read the same as LF files.
    """
    for lineno, raw in enumerate(lines, start=1):
        line = raw.rstrip("\r\n")
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise EdgeFormatError(lineno, line)
        citing, cited = parts[0].strip(), parts[1].strip()
        if not citing or not cited:
            raise EdgeFormatError(lineno, line, "empty document id")
        yield citing, cited


def ingest_edges(records: Iterable[tuple[str, str]]) -> CitationGraph:
    """Build a :class:`CitationGraph` from (citing, cited) records.

    Indices are assigned in first-seen order. Duplicate records collapse and
    self-citations are dropped, but every mentioned document becomes a node.
    """
    index: dict[str, int] = {}
    ids: list[str] = []
    cited: list[set[int]] = []
    citing: list[set[int]] = []

    def intern(doc: str) -> int:
        k = index.get(doc)
        if k is None:
            k = index[doc] = len(ids)
            ids.append(doc)
            cited.append(set())
            citing.append(set())
        return k

    for lineno, rec in enumerate(records, start=1):
        try:
            a, b = rec
        except (TypeError, ValueError):
            raise EdgeFormatError(lineno, repr(rec), "expected a (citing, cited) pair") from None
        if not isinstance(a, str) or not isinstance(b, str) or not a or not b:
            raise EdgeFormatError(lineno, repr(rec), "document ids must be nonempty strings")
        i, j = intern(a), intern(b)
        if i == j:
            continue
        cited[i].add(j)
        citing[j].add(i)

    adjacency = tuple(tuple(sorted(cited[i] | citing[i])) for i in range(len(ids)))
    return CitationGraph(
        ids=tuple(ids),
        adjacency=adjacency,
        cited=tuple(frozenset(s) for s in cited),
        citing=tuple(frozenset(s) for s in citing),
    )


def read_edges(source: str | TextIO) -> CitationGraph:
    """Read an edge file (path or open text stream) into a graph."""
    if isinstance(source, (str, bytes)) or hasattr(source, "__fspath__"):
        with open(source, encoding="utf-8", newline="") as fh:
            return ingest_edges(parse_edge_lines(fh))
    return ingest_edges(parse_edge_lines(source))


def write_edges(graph: CitationGraph, target: str | TextIO) -> None:
    """Export the deduplicated directed edge set.

    Isolated documents cannot be expressed as edges, so they are lost on a
    round trip unless they are also listed elsewhere.
    """
    buf = io.StringIO()
    for i, j in graph.edges():
        buf.write(f"{graph.ids[i]}\t{graph.ids[j]}\n")
    if isinstance(target, (str, bytes)) or hasattr(target, "__fspath__"):
        with open(target, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(buf.getvalue())
    else:
        target.write(buf.getvalue())


def transition_row(graph: CitationGraph, doc) -> dict[int, float]:
    """Sparse row ``A[i, :]``: ``1/degree(i)`` on each neighbour, empty when isolated."""
    i = graph.lookup(doc)
    adj = graph.adjacency[i]
    if not adj:
        return {}
    p = 1.0 / len(adj)
    return {j: p for j in adj}
