"""Planted-community citation graphs with a co-membership gold standard."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticCorpus:
    ids: list[str]
    labels: np.ndarray
    records: list[tuple[str, str]]

    def gold_pairs(self):
        """``(a, b, 1.0)`` for every same-community pair, a before b."""
        for c in np.unique(self.labels):
            members = [self.ids[i] for i in np.flatnonzero(self.labels == c)]
            for x in range(len(members)):
                for y in range(x + 1, len(members)):
                    yield members[x], members[y], 1.0


def generate(communities: int = 2, nodes: int = 200, p_in: float = 0.1, p_out: float = 0.005,
             seed: int = 7, hub_fraction: float = 0.0) -> SyntheticCorpus:
    """Stochastic block model turned into citations.

    Nodes are split into contiguous, near-equal blocks. Each unordered pair is
    linked with ``p_in`` inside a block and ``p_out`` across; the later
    document cites the earlier one. With ``hub_fraction > 0`` document 0 is
    additionally cited by that fraction of all other documents.
    """
    if communities < 1 or nodes < 1:
        raise ValueError("need at least one community and one node")
    for name, p in (("p_in", p_in), ("p_out", p_out), ("hub_fraction", hub_fraction)):
        if not 0.0 <= p <= 1.0:
            raise ValueError(f"{name} must be a probability, got {p}")
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(communities), -(-nodes // communities))[:nodes]
    width = len(str(nodes - 1))
    ids = [f"d{i:0{width}d}" for i in range(nodes)]

    src, dst = np.triu_indices(nodes, k=1)
    prob = np.where(labels[src] == labels[dst], p_in, p_out)
    hit = rng.random(src.size) < prob
    pairs = {(int(b), int(a)) for a, b in zip(src[hit], dst[hit])}

    if hub_fraction > 0 and nodes > 1:
        n_cite = int(round(hub_fraction * (nodes - 1)))
        citers = rng.choice(np.arange(1, nodes), size=n_cite, replace=False)
        pairs.update((int(c), 0) for c in citers)

    records = [(ids[a], ids[b]) for a, b in sorted(pairs)]
    return SyntheticCorpus(ids=ids, labels=labels, records=records)
