"""Cosine similarity over finalised document vectors and exact top-K retrieval."""

from __future__ import annotations

import io
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"P2V1"


class NoEmbeddingError(LookupError):
    pass


@dataclass(frozen=True, eq=False)
class PaperVectors:
    """Unit-norm document vectors; zero rows are flagged as unembedded."""

    ids: tuple[str, ...]
    vectors: np.ndarray
    flagged: np.ndarray
    index: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "index", {d: i for i, d in enumerate(self.ids)})
        if self.vectors.shape[0] != len(self.ids):
            raise ValueError("one vector per id required")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def lookup(self, doc) -> int:
        if isinstance(doc, (int, np.integer)) and not isinstance(doc, bool):
            if 0 <= doc < len(self.ids):
                return int(doc)
            raise KeyError(f"unknown node index {doc}")
        try:
            return self.index[doc]
        except KeyError:
            raise KeyError(f"unknown document {doc!r}") from None

    def _embedded(self, doc) -> int:
        i = self.lookup(doc)
        if self.flagged[i]:
            raise NoEmbeddingError(f"no embedding for document {self.ids[i]!r}")
        return i


@dataclass
class RankingTable:
    """Per-query ranked neighbour lists of ``(doc_id, score)``.

    A query mapped to an empty list is still a query; a document with no key
    was never ranked.
    """

    lists: dict[str, list[tuple[str, float]]] = field(default_factory=dict)

    def __getitem__(self, query: str) -> list[tuple[str, float]]:
        return self.lists[query]

    def __contains__(self, query) -> bool:
        return query in self.lists

    def __len__(self) -> int:
        return len(self.lists)

    def __iter__(self):
        return iter(self.lists)

    def items(self):
        return self.lists.items()

    def ids(self, query: str) -> list[str]:
        return [d for d, _ in self.lists[query]]


def cosine(vectors: PaperVectors, a, b) -> float:
    i, j = vectors._embedded(a), vectors._embedded(b)
    return float(np.dot(vectors.vectors[i], vectors.vectors[j]))


def _rank(scores: np.ndarray, candidates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` best candidates: score descending, index ascending."""
    if candidates.size > k:
        s = scores[candidates]
        kth = np.partition(s, s.size - k)[s.size - k]
        candidates = candidates[s >= kth]
    order = np.lexsort((candidates, -scores[candidates]))
    return candidates[order[:k]]


def top_k(vectors: PaperVectors, doc, k: int) -> list[tuple[str, float]]:
    """Exhaustive top-``k`` by cosine among other embedded documents."""
    if k < 1:
        raise ValueError("k must be >= 1")
    i = vectors._embedded(doc)
    scores = vectors.vectors @ vectors.vectors[i]
    mask = ~vectors.flagged
    mask[i] = False
    best = _rank(scores, np.flatnonzero(mask), k)
    return [(vectors.ids[j], float(scores[j])) for j in best]


def all_top_k(vectors: PaperVectors, k: int, workers: int = 1) -> RankingTable:
    """:func:`top_k` for every embedded document, in index order."""
    queries = [i for i in range(len(vectors)) if not vectors.flagged[i]]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda q: top_k(vectors, q, k), queries))
    else:
        results = [top_k(vectors, q, k) for q in queries]
    return RankingTable({vectors.ids[q]: r for q, r in zip(queries, results)})


# -- ranking files --------------------------------------------------------------


class RankingFormatError(ValueError):
    pass


def write_rankings(table: RankingTable, path: str) -> None:
    buf = io.StringIO()
    for query, ranked in table.items():
        for rank, (doc, score) in enumerate(ranked, start=1):
            buf.write(f"{query}\t{rank}\t{doc}\t{score:.9g}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def read_rankings(path: str) -> RankingTable:
    """Parse a ranking file; lists are re-ordered by their rank column."""
    staged: dict[str, list[tuple[int, str, float]]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise RankingFormatError(f"line {lineno}: expected 'query<TAB>rank<TAB>doc<TAB>score'")
            try:
                rank, score = int(parts[1]), float(parts[3])
            except ValueError:
                raise RankingFormatError(f"line {lineno}: bad rank or score") from None
            staged.setdefault(parts[0], []).append((rank, parts[2], score))
    table = RankingTable()
    for query, rows in staged.items():
        rows.sort(key=lambda r: r[0])
        table.lists[query] = [(d, s) for _, d, s in rows]
    return table


# -- vector files -----------------------------------------------------------------


def write_vectors(vectors: PaperVectors, path: str) -> None:
    """Binary model file: ``P2V1``, u32 dim, u64 V, then (u16 len, id, dim x f32) per doc."""
    out = io.BytesIO()
    out.write(MAGIC)
    out.write(struct.pack("<IQ", vectors.dim, len(vectors)))
    data = vectors.vectors.astype("<f4")
    for doc, row in zip(vectors.ids, data):
        raw = doc.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"document id too long: {doc[:40]!r}...")
        out.write(struct.pack("<H", len(raw)))
        out.write(raw)
        out.write(row.tobytes())
    with open(path, "wb") as fh:
        fh.write(out.getvalue())


def read_vectors(path: str) -> PaperVectors:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a vector file (bad magic)")
    dim, n = struct.unpack_from("<IQ", blob, 4)
    pos = 16
    ids = []
    rows = np.zeros((n, dim), dtype=np.float64)
    for k in range(n):
        (length,) = struct.unpack_from("<H", blob, pos)
        pos += 2
        ids.append(blob[pos:pos + length].decode("utf-8"))
        pos += length
        rows[k] = np.frombuffer(blob, dtype="<f4", count=dim, offset=pos)
        pos += 4 * dim
    if pos != len(blob):
        raise ValueError(f"{path}: {len(blob) - pos} trailing bytes")
    flagged = ~np.any(rows != 0, axis=1)
    return PaperVectors(ids=tuple(ids), vectors=rows, flagged=flagged)


def write_vectors_text(vectors: PaperVectors, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc, row in zip(vectors.ids, vectors.vectors):
            fh.write(doc + " " + " ".join(f"{v:.9g}" for v in row) + "\n")
