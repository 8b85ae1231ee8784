import math

import numpy as np
import pytest

from citevec.context import ContextConfig, ContextEntry, build_context_matrix
from citevec.graph import ingest_edges
from citevec.trainer import (
    EmbeddingModel,
    TrainConfig,
    TrainingError,
    cost,
    extend_model,
    finalize,
    init_model,
    load_checkpoint,
    residuals,
    save_checkpoint,
    sgd_step,
    term_gradients,
    term_loss,
    train,
)

from oracles import central_difference


def one_dim_model(w_i, wt_j, b=0.0, bt=0.0):
    cfg = TrainConfig(dim=1, seed=0)
    m = init_model(2, cfg)
    m.w[0, 0], m.w_tilde[1, 0] = w_i, wt_j
    m.b[0], m.b_tilde[1] = b, bt
    return m


def test_hand_step_plain():
    m = one_dim_model(0.1, 0.2)
    loss = sgd_step(m, ContextEntry(0, 1, 1.0, 2.0), 0.05)
    assert abs(loss - 1.9208) <= 1e-12
    assert abs(m.w[0, 0] - 0.1392) <= 1e-12
    assert abs(m.w_tilde[1, 0] - 0.2196) <= 1e-12
    assert abs(m.b[0] - 0.196) <= 1e-12
    assert abs(m.b_tilde[1] - 0.196) <= 1e-12


def test_hand_step_adaptive_first_visit_matches_plain():
    # accumulators start at 1, so the first adaptive step equals the plain one
    a, p = one_dim_model(0.1, 0.2), one_dim_model(0.1, 0.2)
    sgd_step(a, ContextEntry(0, 1, 1.0, 2.0), 0.05, optimizer="adagrad")
    sgd_step(p, ContextEntry(0, 1, 1.0, 2.0), 0.05)
    assert a.w[0, 0] == pytest.approx(p.w[0, 0], abs=1e-15)
    # g = -3.92, grad wrt w_i = g * 0.2
    assert a.acc_w[0, 0] == pytest.approx(1 + (3.92 * 0.2) ** 2)
    assert a.acc_b[0] == pytest.approx(1 + 3.92**2)
    # second visit is damped by the accumulated squares
    before = a.w[0, 0]
    sgd_step(a, ContextEntry(0, 1, 1.0, 2.0), 0.05, optimizer="adagrad")
    sgd_step(p, ContextEntry(0, 1, 1.0, 2.0), 0.05)
    assert abs(a.w[0, 0] - before) < abs(p.w[0, 0] - 0.1392)


def test_fixed_point_no_change():
    m = one_dim_model(0.5, 0.4, b=0.3, bt=0.5)  # 0.2 + 0.8 = 1.0
    snapshot = m.copy()
    assert sgd_step(m, ContextEntry(0, 1, 1.0, 3.0), 0.1) == 0.0
    for k, v in snapshot.arrays().items():
        assert np.array_equal(v, m.arrays()[k])


def test_zero_weight_rejected():
    with pytest.raises(ValueError):
        sgd_step(one_dim_model(0.1, 0.2), ContextEntry(0, 1, 1.0, 0.0), 0.05)


def test_gradients_match_finite_differences(rng):
    for _ in range(50):
        dim = int(rng.integers(1, 9))
        w, wt = rng.normal(size=dim), rng.normal(size=dim)
        b, bt, x, f = rng.normal(), rng.normal(), rng.uniform(0.1, 5), rng.uniform(0.05, 3)
        gw, gwt, gb, gbt = term_gradients(w, wt, b, bt, x, f)
        num_w = central_difference(lambda v: term_loss(v, wt, b, bt, x, f), w)
        num_b = central_difference(lambda v: term_loss(w, wt, v[0], bt, x, f), [b])[0]
        np.testing.assert_allclose(gw, num_w, rtol=1e-4, atol=1e-8)
        assert gb == pytest.approx(num_b, rel=1e-4)


def test_plain_step_is_gradient_step(rng):
    cfg = TrainConfig(dim=5, seed=3)
    m = init_model(4, cfg)
    m.w[:] = rng.normal(size=m.w.shape)
    m.w_tilde[:] = rng.normal(size=m.w.shape)
    e = ContextEntry(2, 3, 1.5, 0.7)
    gw, gwt, gb, gbt = term_gradients(m.w[2], m.w_tilde[3], m.b[2], m.b_tilde[3], e.x, e.f)
    w0, wt0 = m.w[2].copy(), m.w_tilde[3].copy()
    sgd_step(m, e, 0.01)
    np.testing.assert_allclose(m.w[2], w0 - 0.01 * gw, atol=1e-14)
    np.testing.assert_allclose(m.w_tilde[3], wt0 - 0.01 * gwt, atol=1e-14)
    assert m.b[2] == pytest.approx(-0.01 * gb)


def test_same_row_as_source_and_context():
    # w and w_tilde are separate tables, so (i, i) reads old values of both
    m = one_dim_model(0.1, 0.2)
    m.w_tilde[0, 0] = 0.2
    sgd_step(m, ContextEntry(0, 0, 1.0, 2.0), 0.05)
    assert abs(m.w[0, 0] - 0.1392) <= 1e-12 and abs(m.w_tilde[0, 0] - 0.2196) <= 1e-12


def test_non_finite_aborts_and_names_entry():
    m = one_dim_model(1e200, 1e200)
    snapshot = m.copy()
    with pytest.raises(TrainingError, match="source=0, context=1"):
        sgd_step(m, ContextEntry(0, 1, 1.0, 1.0), 0.05)
    assert np.array_equal(m.w, snapshot.w) and m.is_finite()


def test_train_abort_uses_external_ids(path3):
    matrix = build_context_matrix(path3, ContextConfig(win=2, lam=1.0))
    with pytest.raises(TrainingError, match="'1'|'2'|'3'"):
        train(matrix, TrainConfig(dim=2, epochs=3, alpha=1e200, optimizer="sgd"), ids=path3.ids)


def test_init_model():
    cfg = TrainConfig(dim=16, seed=9)
    m = init_model(3, cfg)
    assert np.all(np.abs(m.w) <= 1 / 32) and np.all(np.abs(m.w_tilde) <= 1 / 32)
    assert np.all(m.b == 0) and np.all(m.b_tilde == 0)
    assert np.all(m.acc_w == 1.0) and np.all(m.acc_b_tilde == 1.0)
    again = init_model(3, cfg)
    assert all(np.array_equal(a, b) for a, b in zip(m.arrays().values(), again.arrays().values()))
    assert init_model(0, cfg).w.shape == (0, 16)


def test_config_validation():
    for bad in (dict(dim=0), dict(epochs=0), dict(alpha=0), dict(workers=0), dict(optimizer="adam")):
        with pytest.raises(ValueError):
            TrainConfig(**bad)


def test_empty_matrix_trains_to_nothing():
    g = ingest_edges([])
    matrix = build_context_matrix(g, ContextConfig())
    cfg = TrainConfig(dim=4, epochs=5)
    model, trace = train(matrix, cfg)
    assert trace == [0.0] * 5


def single_entry_matrix(x=2.0, f=1.5):
    g = ingest_edges([("a", "b")])
    m = build_context_matrix(g, ContextConfig(win=1, lam=1.0))
    from dataclasses import replace
    return replace(m, rows=np.array([0]), cols=np.array([1]), x=np.array([x]), f=np.array([f]))


def test_single_entry_descent():
    matrix = single_entry_matrix()
    model, trace = train(matrix, TrainConfig(dim=4, epochs=200, alpha=0.02, optimizer="sgd", seed=1))
    assert all(b < a for a, b in zip(trace, trace[1:]))
    assert abs(residuals(model, matrix)[0]) < 1e-6


def test_trace_matches_step_sequence(path3):
    # one epoch of train == sgd_step over the same shuffled order
    matrix = build_context_matrix(path3, ContextConfig(win=2, lam=1.0))
    cfg = TrainConfig(dim=3, epochs=1, alpha=0.05, optimizer="adagrad", seed=5)
    trained, trace = train(matrix, cfg)
    manual = init_model(3, cfg)
    order = np.random.default_rng(np.random.SeedSequence([5, 1, 0])).permutation(len(matrix))
    entries = matrix.entries
    total = sum(sgd_step(manual, entries[k], 0.05, "adagrad") for k in order)
    assert trace[0] == pytest.approx(total, rel=1e-12)
    np.testing.assert_allclose(trained.w, manual.w, atol=1e-15)


def chain(n=30):
    return ingest_edges([(f"n{i}", f"n{i + 1}") for i in range(n - 1)])


def test_determinism_single_worker():
    matrix = build_context_matrix(chain(), ContextConfig(win=2))
    cfg = TrainConfig(dim=8, epochs=20, seed=4)
    a, ta = train(matrix, cfg)
    b, tb = train(matrix, cfg)
    assert ta == tb
    assert all(np.array_equal(x, y) for x, y in zip(a.arrays().values(), b.arrays().values()))


def test_multi_worker_runs_and_descends():
    matrix = build_context_matrix(chain(), ContextConfig(win=2))
    model, trace = train(matrix, TrainConfig(dim=8, epochs=30, seed=4, workers=3))
    assert model.is_finite()
    assert trace[-1] < 0.1 * trace[0]


def test_cost_matches_trace_scale():
    matrix = build_context_matrix(chain(), ContextConfig(win=2))
    cfg = TrainConfig(dim=16, epochs=200, alpha=0.05, optimizer="sgd", seed=42)
    model, trace = train(matrix, cfg)
    assert cost(model, matrix) == pytest.approx(trace[-1], rel=0.2)
    assert np.median(np.abs(residuals(model, matrix))) < 0.1


def test_finalize():
    m = init_model(3, TrainConfig(dim=2))
    m.w[0] = [3.0, 4.0]
    m.w[1] = [0.0, 0.0]
    pv = finalize(m, ["a", "b", "c"])
    np.testing.assert_allclose(pv.vectors[0], [0.6, 0.8], atol=1e-15)
    assert pv.flagged.tolist() == [False, True, False]
    assert np.all(pv.vectors[1] == 0)
    assert abs(np.linalg.norm(pv.vectors[2]) - 1) < 1e-6


def test_extend_model_keeps_rows():
    cfg = TrainConfig(dim=4, seed=2)
    m = init_model(3, cfg)
    big = extend_model(m, 5)
    assert np.array_equal(big.w[:3], m.w)
    assert big.w.shape == (5, 4) and np.all(np.abs(big.w[3:]) <= 0.125)
    assert np.all(big.acc_w[3:] == 1.0)
    with pytest.raises(ValueError):
        extend_model(big, 2)


def test_checkpoint_round_trip(tmp_path):
    matrix = build_context_matrix(chain(8), ContextConfig(win=2))
    model, _ = train(matrix, TrainConfig(dim=4, epochs=3, seed=11))
    p = tmp_path / "state"
    save_checkpoint(model, str(p), ids=[f"n{i}" for i in range(8)])
    back, ids = load_checkpoint(str(p))
    assert ids == [f"n{i}" for i in range(8)]
    assert back.seed == 11 and back.epochs_done == 3
    assert all(np.array_equal(x, y) for x, y in zip(model.arrays().values(), back.arrays().values()))
