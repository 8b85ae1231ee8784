"""Incremental inclusion of new citations into a trained model.

Only sources within ``win`` hops of a new link get their context rows
rebuilt (with the original shift), and only those rows are trained further.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from .context import ContextConfig, ContextMatrix, build_context_matrix, merge_rows
from .graph import CitationGraph, ingest_edges
from .trainer import _STREAM_RESUME, EmbeddingModel, TrainConfig, extend_model, train

log = logging.getLogger(__name__)


@dataclass
class OnlineUpdate:
    graph: CitationGraph
    matrix: ContextMatrix
    model: EmbeddingModel
    affected: list[int]
    trace: list[float]


def update(model: EmbeddingModel, matrix: ContextMatrix, old_records, delta_records,
           config: TrainConfig, context_config: ContextConfig | None = None,
           ids=None) -> OnlineUpdate:
    """Fold ``delta_records`` into a model trained on ``old_records``.

    ``matrix`` is the context corpus the model was trained on; its window and
    resolved shift are reused so old and new rows share one scale. New
    documents are appended after the existing ones and get fresh rows.
    """
    old_records = list(old_records)
    delta_records = list(delta_records)
    old_graph = ingest_edges(old_records)
    if old_graph.node_count != matrix.node_count:
        raise ValueError(
            f"context covers {matrix.node_count} documents but the old edges give {old_graph.node_count}"
        )
    if ids is not None and tuple(ids) != old_graph.ids:
        raise ValueError("old edge file does not reproduce the model's document order")
    graph = ingest_edges(old_records + delta_records)

    base = context_config or matrix.config
    cfg = replace(base, win=matrix.config.win, lam=matrix.resolved_lambda)
    touched = {graph.index[d] for rec in delta_records for d in rec}
    affected = sorted(graph.within_hops(touched, cfg.win)) if touched else []

    fresh = build_context_matrix(graph, cfg, sources=affected)
    grown = replace(matrix, node_count=graph.node_count)
    merged = merge_rows(grown, fresh, affected, graph.node_count)

    model = extend_model(model, graph.node_count)
    model, trace = train(merged.select_sources(affected), config, model=model,
                         ids=graph.ids, stream=_STREAM_RESUME)
    log.info("online update: %d new documents, %d affected sources, %d entries retrained",
             graph.node_count - old_graph.node_count, len(affected),
             len(merged.select_sources(affected)))
    return OnlineUpdate(graph=graph, matrix=merged, model=model, affected=affected, trace=trace)
