"""Citation-context document embeddings.

Random-walk context weighting over a citation graph, weighted least-squares
factorisation into document vectors, cosine top-K retrieval, co-occurrence
baselines and ranking metrics.
"""

from .baselines import amsler, baseline_table, baseline_top_k, bibliographic_coupling, cocitation
from .context import ContextConfig, ContextEntry, ContextMatrix, build_context_matrix, expected_visits, select_lambda
from .evaluate import GoldStandard, MetricReport, entropy_novelty, gold_top_k, intersection_ratio, load_gold
from .graph import CitationGraph, ingest_edges, read_edges, transition_row
from .similarity import PaperVectors, RankingTable, all_top_k, cosine, top_k
from .trainer import EmbeddingModel, Optimizer, TrainConfig, finalize, init_model, sgd_step, train

__version__ = "0.1.0"
