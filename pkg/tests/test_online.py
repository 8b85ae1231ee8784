import numpy as np
import pytest

from citevec.context import ContextConfig, build_context_matrix
from citevec.graph import ingest_edges
from citevec.online import update
from citevec.trainer import TrainConfig, train


def chain(n):
    return [(f"n{i + 1}", f"n{i}") for i in range(n - 1)]


@pytest.fixture
def trained():
    old = chain(12)
    g = ingest_edges(old)
    m = build_context_matrix(g, ContextConfig(win=2))
    cfg = TrainConfig(dim=8, epochs=20, optimizer="sgd", seed=3)
    model, _ = train(m, cfg)
    return old, g, m, model, cfg


def test_update_adds_documents_and_touches_only_nearby_rows(trained):
    old, g, m, model, cfg = trained
    before = model.copy()
    delta = [("new", "n11")]
    res = update(model, m, old, delta, cfg, ids=g.ids)

    assert res.graph.ids[:12] == g.ids and res.graph.ids[12] == "new"
    assert res.model.node_count == 13
    # new doc and everything within two hops of n11 / new
    expect = sorted(res.graph.index[d] for d in ("new", "n11", "n10", "n9"))
    assert res.affected == expect

    untouched = [i for i in range(12) if i not in res.affected]
    np.testing.assert_array_equal(res.model.w[untouched], before.w[untouched])
    np.testing.assert_array_equal(res.model.b[untouched], before.b[untouched])
    assert not np.array_equal(res.model.w[res.graph.index["n11"]], before.w[g.index["n11"]])
    assert res.model.is_finite()

    # rebuilt rows equal a full rebuild at the original shift; others are unchanged
    full = build_context_matrix(res.graph, ContextConfig(win=2, lam=m.resolved_lambda))
    want = {k: v for k, v in full.as_dict().items() if k[0] in res.affected}
    got = res.matrix.as_dict()
    for key, (x, f) in want.items():
        assert got[key] == pytest.approx((x, f), rel=1e-12)
    old_entries = m.as_dict()
    for key, val in got.items():
        if key[0] not in res.affected:
            assert old_entries[key] == val
    assert res.matrix.resolved_lambda == m.resolved_lambda
    assert len(res.trace) == cfg.epochs


def test_update_rejects_mismatched_history(trained):
    old, g, m, model, cfg = trained
    with pytest.raises(ValueError):
        update(model, m, old[:-1], [("a", "b")], cfg)


def test_update_is_deterministic(trained):
    old, g, m, model, cfg = trained
    a = update(model.copy(), m, old, [("new", "n3")], cfg)
    b = update(model.copy(), m, old, [("new", "n3")], cfg)
    np.testing.assert_array_equal(a.model.w, b.model.w)
