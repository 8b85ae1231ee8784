"""Weighted citation-link context.

For a source document ``i`` the context mass of ``j`` is the
coefficient-weighted expected number of visits to ``j`` by a uniform random
walk of at most ``win`` steps::

    M_ij = sum_{o=1..win} sum_{k=1..o} [A^k]_ij = sum_{k=1..win} (win+1-k) [A^k]_ij

Each stored entry carries the regression target ``x = max(0, ln M_ij + lam)``
and the confidence weight ``f = M_ij``.
"""

from __future__ import annotations

import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Iterator, NamedTuple

import numpy as np
import scipy.sparse as sp

from .graph import CitationGraph

HEADER_TAG = "#paper2vec-context v1"

# Sources propagated together in one sparse product.
_BLOCK = 512


class ContextError(ValueError):
    pass


@dataclass(frozen=True)
class ContextConfig:
    win: int = 3
    lam: float | str = "auto"
    q: float = 0.05
    exclude_diagonal: bool = True
    prune_threshold: float = 0.0

    def __post_init__(self):
        if int(self.win) != self.win or self.win < 1:
            raise ValueError(f"win must be a positive integer, got {self.win!r}")
        if self.lam == "auto":
            if not 0.0 < self.q < 1.0:
                raise ValueError(f"q must lie in (0, 1), got {self.q!r}")
        elif isinstance(self.lam, str) or not math.isfinite(self.lam):
            raise ValueError(f"lam must be a finite real or 'auto', got {self.lam!r}")
        if self.prune_threshold < 0:
            raise ValueError("prune_threshold must be >= 0")

    @property
    def auto(self) -> bool:
        return self.lam == "auto"


class ContextEntry(NamedTuple):
    source: int
    context: int
    x: float
    f: float


@dataclass(frozen=True, eq=False)
class ContextMatrix:
    """Sparse training corpus stored column-wise as parallel arrays.

    Entries are ordered by source index, then context index.
    """

    rows: np.ndarray
    cols: np.ndarray
    x: np.ndarray
    f: np.ndarray
    node_count: int
    config: ContextConfig
    resolved_lambda: float

    def __len__(self) -> int:
        return len(self.rows)

    def __iter__(self) -> Iterator[ContextEntry]:
        for i, j, x, f in zip(self.rows.tolist(), self.cols.tolist(), self.x.tolist(), self.f.tolist()):
            yield ContextEntry(i, j, x, f)

    @property
    def entries(self) -> list[ContextEntry]:
        return list(self)

    def as_dict(self) -> dict[tuple[int, int], tuple[float, float]]:
        return {(e.source, e.context): (e.x, e.f) for e in self}

    def select_sources(self, sources) -> "ContextMatrix":
        """Sub-matrix restricted to the given source indices."""
        mask = np.isin(self.rows, np.fromiter(sources, dtype=np.int64))
        return replace(self, rows=self.rows[mask], cols=self.cols[mask], x=self.x[mask], f=self.f[mask])


def _propagate(A: sp.csr_matrix, start: sp.csr_matrix, win: int) -> sp.csr_matrix:
    """sum_{k=1..win} (win+1-k) * start @ A^k by repeated row propagation."""
    acc = None
    cur = start
    for k in range(1, win + 1):
        cur = cur @ A
        term = cur * float(win + 1 - k)
        acc = term if acc is None else acc + term
    acc = sp.csr_matrix(acc)
    acc.sum_duplicates()
    acc.sort_indices()
    return acc


def expected_visits(graph: CitationGraph, win: int, doc) -> dict[int, float]:
    """Context masses ``M_i[j]`` for one source, diagonal included."""
    if win < 1:
        raise ValueError("win must be >= 1")
    i = graph.lookup(doc)
    n = graph.node_count
    start = sp.csr_matrix(([1.0], ([0], [i])), shape=(1, n))
    row = _propagate(graph.transition_matrix(), start, win)
    return {int(j): float(v) for j, v in zip(row.indices, row.data) if v != 0.0}


def visit_matrix(graph: CitationGraph, win: int) -> sp.csr_matrix:
    """All rows of ``M`` as one sparse matrix (diagonal included)."""
    n = graph.node_count
    return _propagate(graph.transition_matrix(), sp.identity(n, format="csr"), win)


def select_lambda(masses, q: float) -> float:
    """Shift that places the lower nearest-rank ``q``-quantile of the masses at zero.

    The quantile is the ``max(1, floor(q*N))``-th smallest mass; it maps to
    ``x = 0`` and is dropped, so at most that many entries (plus ties) clip.
    """
    m = np.asarray(masses, dtype=np.float64).ravel()
    m = m[m > 0]
    if m.size == 0:
        raise ContextError("no context mass; graph has no edges")
    if not 0.0 < q < 1.0:
        raise ValueError(f"q must lie in (0, 1), got {q!r}")
    rank = max(1, math.floor(q * m.size))
    m_q = np.partition(m, rank - 1)[rank - 1]
    return -math.log(m_q)


def _candidate_block(A, n, sources, win, exclude_diagonal, prune_threshold):
    m = len(sources)
    start = sp.csr_matrix((np.ones(m), (np.arange(m), sources)), shape=(m, n))
    M = _propagate(A, start, win).tocoo()
    r = sources[M.row]
    c = M.col.astype(np.int64)
    v = M.data
    keep = v > prune_threshold
    if exclude_diagonal:
        keep &= r != c
    order = np.lexsort((c[keep], r[keep]))
    return r[keep][order], c[keep][order], v[keep][order]


def build_context_matrix(graph: CitationGraph, config: ContextConfig | None = None, workers: int = 1,
                         sources=None) -> ContextMatrix:
    """Materialise every stored (i, j, x, f) entry of the context corpus.

    Source blocks are independent and may be computed by ``workers`` threads;
    results are concatenated in source order, so the output does not depend
    on ``workers``. ``sources`` restricts construction to those rows (the
    automatic shift is then fitted on those rows only).
    """
    config = config or ContextConfig()
    n = graph.node_count
    A = graph.transition_matrix()
    src = np.arange(n, dtype=np.int64) if sources is None else np.unique(np.fromiter(sources, dtype=np.int64))
    blocks = [src[lo:lo + _BLOCK] for lo in range(0, len(src), _BLOCK)]

    def run(b):
        return _candidate_block(A, n, b, config.win, config.exclude_diagonal, config.prune_threshold)

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, blocks))
    else:
        parts = [run(b) for b in blocks]

    if parts:
        rows = np.concatenate([p[0] for p in parts])
        cols = np.concatenate([p[1] for p in parts])
        mass = np.concatenate([p[2] for p in parts])
    else:
        rows = cols = np.zeros(0, dtype=np.int64)
        mass = np.zeros(0)

    if config.auto:
        if mass.size == 0 and len(src) == 0:
            lam = 0.0
        else:
            lam = select_lambda(mass, config.q)
    else:
        lam = float(config.lam)

    with np.errstate(divide="ignore"):
        x = np.log(mass) + lam
    keep = x > 0
    return ContextMatrix(
        rows=rows[keep],
        cols=cols[keep],
        x=x[keep],
        f=mass[keep],
        node_count=n,
        config=config,
        resolved_lambda=lam,
    )


def symmetrize(matrix: ContextMatrix) -> ContextMatrix:
    """Average ``(i, j)`` and ``(j, i)`` weights; a missing direction counts as 0."""
    acc: dict[tuple[int, int], list[float]] = {}
    for e in matrix:
        for key in ((e.source, e.context), (e.context, e.source)):
            slot = acc.setdefault(key, [0.0, 0.0])
            slot[0] += 0.5 * e.x
            slot[1] += 0.5 * e.f
    keys = sorted(acc)
    rows = np.array([k[0] for k in keys], dtype=np.int64)
    cols = np.array([k[1] for k in keys], dtype=np.int64)
    x = np.array([acc[k][0] for k in keys], dtype=np.float64)
    f = np.array([acc[k][1] for k in keys], dtype=np.float64)
    return replace(matrix, rows=rows, cols=cols, x=x, f=f)


def merge_rows(base: ContextMatrix, update: ContextMatrix, sources, node_count: int) -> ContextMatrix:
    """Replace the rows of ``sources`` in ``base`` with those from ``update``."""
    src = np.fromiter(sources, dtype=np.int64)
    keep = ~np.isin(base.rows, src)
    take = np.isin(update.rows, src)
    rows = np.concatenate([base.rows[keep], update.rows[take]])
    cols = np.concatenate([base.cols[keep], update.cols[take]])
    order = np.lexsort((cols, rows))
    return ContextMatrix(
        rows=rows[order],
        cols=cols[order],
        x=np.concatenate([base.x[keep], update.x[take]])[order],
        f=np.concatenate([base.f[keep], update.f[take]])[order],
        node_count=node_count,
        config=base.config,
        resolved_lambda=base.resolved_lambda,
    )


# -- file cache -------------------------------------------------------------


def ids_path(path: str) -> str:
    return str(path) + ".ids"


def write_context(matrix: ContextMatrix, path: str, ids=None) -> None:
    """Write the context cache; ``ids`` (index order) go to a ``.ids`` sidecar."""
    buf = io.StringIO()
    buf.write(f"{HEADER_TAG} V={matrix.node_count} win={matrix.config.win} lambda={matrix.resolved_lambda!r}\n")
    for i, j, x, f in zip(matrix.rows.tolist(), matrix.cols.tolist(), matrix.x.tolist(), matrix.f.tolist()):
        buf.write(f"{i}\t{j}\t{x:.9g}\t{f:.9g}\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())
    if ids is not None:
        with open(ids_path(path), "w", encoding="utf-8", newline="\n") as fh:
            fh.write("".join(f"{d}\n" for d in ids))


def _parse_header(line: str) -> dict[str, str]:
    if not line.startswith(HEADER_TAG):
        raise ContextError(f"not a context file (header {line.strip()!r})")
    fields = dict(tok.split("=", 1) for tok in line[len(HEADER_TAG):].split())
    missing = {"V", "win", "lambda"} - fields.keys()
    if missing:
        raise ContextError(f"context header missing {sorted(missing)}")
    return fields


def read_context(path: str) -> ContextMatrix:
    with open(path, encoding="utf-8") as fh:
        head = _parse_header(fh.readline())
        n = int(head["V"])
        rows, cols, xs, fs = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\r\n")
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise ContextError(f"line {lineno}: expected 'i<TAB>j<TAB>x<TAB>f'")
            i, j = int(parts[0]), int(parts[1])
            if not (0 <= i < n and 0 <= j < n):
                raise ContextError(f"line {lineno}: index out of range for V={n}")
            rows.append(i)
            cols.append(j)
            xs.append(float(parts[2]))
            fs.append(float(parts[3]))
    lam = float(head["lambda"])
    return ContextMatrix(
        rows=np.array(rows, dtype=np.int64),
        cols=np.array(cols, dtype=np.int64),
        x=np.array(xs, dtype=np.float64),
        f=np.array(fs, dtype=np.float64),
        node_count=n,
        config=ContextConfig(win=int(head["win"]), lam=lam),
        resolved_lambda=lam,
    )


def read_context_ids(path: str) -> list[str]:
    with open(ids_path(path), encoding="utf-8") as fh:
        return [line.rstrip("\r\n") for line in fh if line.strip()]
