"""Weighted least-squares factorisation of the context matrix.

Minimises::

    J = sum_{(i,j) stored} f_ij * (w_i . wt_j + b_i + bt_j - x_ij)^2

by visiting the stored entries in a fresh shuffle every epoch. Each visit is
one descent step on a single term; the per-entry arithmetic lives in a numba
kernel shared by :func:`sgd_step` and :func:`train`.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from enum import Enum

import numba
import numpy as np

from .context import ContextEntry, ContextMatrix
from .similarity import PaperVectors

log = logging.getLogger(__name__)

if "NUMBA_THREADING_LAYER_PRIORITY" not in os.environ and "NUMBA_THREADING_LAYER" not in os.environ:
    numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

# SeedSequence stream tags, so init and shuffling never share draws.
_STREAM_INIT = 0
_STREAM_SHUFFLE = 1
_STREAM_EXTEND = 2
_STREAM_RESUME = 3


class Optimizer(str, Enum):
    SGD = "sgd"
    ADAGRAD = "adagrad"


class TrainingError(RuntimeError):
    """A step produced a non-finite gradient or parameter."""

    def __init__(self, epoch: int, entry: ContextEntry, ids=None):
        self.epoch = epoch
        self.entry = entry
        src, ctx = entry.source, entry.context
        if ids is not None:
            src, ctx = f"{ids[src]!r}", f"{ids[ctx]!r}"
        super().__init__(
            f"non-finite update in epoch {epoch} at entry (source={src}, context={ctx}, "
            f"x={entry.x:.6g}, f={entry.f:.6g}); aborting"
        )


@dataclass(frozen=True)
class TrainConfig:
    dim: int = 500
    epochs: int = 50
    alpha: float = 0.05
    optimizer: Optimizer = Optimizer.ADAGRAD
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "optimizer", Optimizer(self.optimizer))
        for name in ("dim", "epochs", "workers"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise ValueError(f"alpha must be positive, got {self.alpha!r}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")


@dataclass(eq=False)
class EmbeddingModel:
    """Trainable parameters plus per-parameter squared-gradient accumulators."""

    w: np.ndarray
    w_tilde: np.ndarray
    b: np.ndarray
    b_tilde: np.ndarray
    acc_w: np.ndarray
    acc_w_tilde: np.ndarray
    acc_b: np.ndarray
    acc_b_tilde: np.ndarray
    seed: int = 0
    epochs_done: int = field(default=0)

    @property
    def dim(self) -> int:
        return self.w.shape[1]

    @property
    def node_count(self) -> int:
        return self.w.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {
            "w": self.w, "w_tilde": self.w_tilde, "b": self.b, "b_tilde": self.b_tilde,
            "acc_w": self.acc_w, "acc_w_tilde": self.acc_w_tilde,
            "acc_b": self.acc_b, "acc_b_tilde": self.acc_b_tilde,
        }

    def copy(self) -> "EmbeddingModel":
        return EmbeddingModel(**{k: v.copy() for k, v in self.arrays().items()},
                              seed=self.seed, epochs_done=self.epochs_done)

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in (self.w, self.w_tilde, self.b, self.b_tilde))


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *stream]))


def _fresh_rows(rng: np.random.Generator, n: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    half = 0.5 / dim
    w = rng.uniform(-half, half, size=(n, dim))
    wt = rng.uniform(-half, half, size=(n, dim))
    return w, wt


def init_model(V: int, config: TrainConfig) -> EmbeddingModel:
    """Uniform init on [-0.5/dim, 0.5/dim], zero biases, accumulators at 1.0."""
    w, wt = _fresh_rows(_rng(config.seed, _STREAM_INIT), V, config.dim)
    return EmbeddingModel(
        w=w, w_tilde=wt, b=np.zeros(V), b_tilde=np.zeros(V),
        acc_w=np.ones_like(w), acc_w_tilde=np.ones_like(wt),
        acc_b=np.ones(V), acc_b_tilde=np.ones(V),
        seed=config.seed,
    )


def extend_model(model: EmbeddingModel, V: int) -> EmbeddingModel:
    """Append freshly initialised rows so the model covers ``V`` documents."""
    old = model.node_count
    if V < old:
        raise ValueError(f"cannot shrink model from {old} to {V} documents")
    if V == old:
        return model
    w, wt = _fresh_rows(_rng(model.seed, _STREAM_EXTEND, old), V - old, model.dim)
    n = V - old
    return EmbeddingModel(
        w=np.vstack([model.w, w]), w_tilde=np.vstack([model.w_tilde, wt]),
        b=np.concatenate([model.b, np.zeros(n)]), b_tilde=np.concatenate([model.b_tilde, np.zeros(n)]),
        acc_w=np.vstack([model.acc_w, np.ones_like(w)]),
        acc_w_tilde=np.vstack([model.acc_w_tilde, np.ones_like(wt)]),
        acc_b=np.concatenate([model.acc_b, np.ones(n)]),
        acc_b_tilde=np.concatenate([model.acc_b_tilde, np.ones(n)]),
        seed=model.seed, epochs_done=model.epochs_done,
    )


# -- kernels ------------------------------------------------------------------


@numba.njit(cache=True, nogil=True)
def _step(w, wt, b, bt, aw, awt, ab, abt, i, j, x, f, alpha, adaptive):
    """One descent step on f*(w_i.wt_j + b_i + bt_j - x)^2; returns the pre-step loss.

    Returns NaN, leaving every parameter untouched, if any update would be
    non-finite. Accumulators are read before adding the current squared
    gradient.
    """
    dim = w.shape[1]
    dot = 0.0
    for d in range(dim):
        dot += w[i, d] * wt[j, d]
    diff = dot + b[i] + bt[j] - x
    g = 2.0 * f * diff
    loss = f * diff * diff
    if not (math.isfinite(g) and math.isfinite(loss)):
        return math.nan

    # check pass: nothing is written unless every new value is finite
    for d in range(dim):
        gi = g * wt[j, d]
        gj = g * w[i, d]
        if adaptive:
            ni = w[i, d] - alpha * gi / math.sqrt(aw[i, d])
            nj = wt[j, d] - alpha * gj / math.sqrt(awt[j, d])
        else:
            ni = w[i, d] - alpha * gi
            nj = wt[j, d] - alpha * gj
        if not (math.isfinite(ni) and math.isfinite(nj)):
            return math.nan

    for d in range(dim):
        wi = w[i, d]
        wj = wt[j, d]
        gi = g * wj
        gj = g * wi
        if adaptive:
            w[i, d] = wi - alpha * gi / math.sqrt(aw[i, d])
            wt[j, d] = wj - alpha * gj / math.sqrt(awt[j, d])
            aw[i, d] += gi * gi
            awt[j, d] += gj * gj
        else:
            w[i, d] = wi - alpha * gi
            wt[j, d] = wj - alpha * gj
    if adaptive:
        b[i] -= alpha * g / math.sqrt(ab[i])
        bt[j] -= alpha * g / math.sqrt(abt[j])
        ab[i] += g * g
        abt[j] += g * g
    else:
        b[i] -= alpha * g
        bt[j] -= alpha * g
    return loss


@numba.njit(cache=True, nogil=True)
def _run(w, wt, b, bt, aw, awt, ab, abt, rows, cols, xs, fs, order, alpha, adaptive):
    total = 0.0
    for k in range(order.shape[0]):
        e = order[k]
        loss = _step(w, wt, b, bt, aw, awt, ab, abt, rows[e], cols[e], xs[e], fs[e], alpha, adaptive)
        if math.isnan(loss):
            return total, e
        total += loss
    return total, -1


@numba.njit(cache=True, parallel=True)
def _run_parallel(w, wt, b, bt, aw, awt, ab, abt, rows, cols, xs, fs, order, bounds, alpha, adaptive):
    # Unsynchronised updates to shared rows: results are not reproducible.
    nchunks = bounds.shape[0] - 1
    totals = np.zeros(nchunks)
    bad = np.full(nchunks, -1, dtype=np.int64)
    for c in numba.prange(nchunks):
        t, e = _run(w, wt, b, bt, aw, awt, ab, abt, rows, cols, xs, fs,
                    order[bounds[c]:bounds[c + 1]], alpha, adaptive)
        totals[c] = t
        bad[c] = e
    return totals.sum(), bad.max()


# -- public API ---------------------------------------------------------------


def term_gradients(w_i, wt_j, b_i, bt_j, x, f):
    """Analytic gradient of ``f*(w_i.wt_j + b_i + bt_j - x)^2`` per parameter block."""
    diff = float(np.dot(w_i, wt_j)) + b_i + bt_j - x
    g = 2.0 * f * diff
    return g * np.asarray(wt_j, dtype=float), g * np.asarray(w_i, dtype=float), g, g


def term_loss(w_i, wt_j, b_i, bt_j, x, f) -> float:
    diff = float(np.dot(w_i, wt_j)) + b_i + bt_j - x
    return f * diff * diff


def sgd_step(model: EmbeddingModel, entry: ContextEntry, alpha: float,
             optimizer: Optimizer | str = Optimizer.SGD) -> float:
    """Apply one in-place update for ``entry`` and return its pre-update loss."""
    i, j, x, f = entry
    if not f > 0:
        raise ValueError("context entries must have f > 0")
    if not (0 <= i < model.node_count and 0 <= j < model.node_count):
        raise IndexError(f"entry ({i}, {j}) outside model of {model.node_count} documents")
    adaptive = Optimizer(optimizer) is Optimizer.ADAGRAD
    loss = _step(model.w, model.w_tilde, model.b, model.b_tilde,
                 model.acc_w, model.acc_w_tilde, model.acc_b, model.acc_b_tilde,
                 int(i), int(j), float(x), float(f), float(alpha), adaptive)
    if math.isnan(loss):
        raise TrainingError(model.epochs_done + 1, ContextEntry(int(i), int(j), float(x), float(f)))
    return loss


def cost(model: EmbeddingModel, matrix: ContextMatrix) -> float:
    """Full objective J at the current parameters."""
    if len(matrix) == 0:
        return 0.0
    pred = np.einsum("nd,nd->n", model.w[matrix.rows], model.w_tilde[matrix.cols])
    diff = pred + model.b[matrix.rows] + model.b_tilde[matrix.cols] - matrix.x
    return float(np.sum(matrix.f * diff * diff))


def residuals(model: EmbeddingModel, matrix: ContextMatrix) -> np.ndarray:
    """``w_i.wt_j + b_i + bt_j - x`` for every stored entry."""
    pred = np.einsum("nd,nd->n", model.w[matrix.rows], model.w_tilde[matrix.cols])
    return pred + model.b[matrix.rows] + model.b_tilde[matrix.cols] - matrix.x


def train(matrix: ContextMatrix, config: TrainConfig, model: EmbeddingModel | None = None,
          ids=None, stream: int = _STREAM_SHUFFLE) -> tuple[EmbeddingModel, list[float]]:
    """Run ``config.epochs`` shuffled passes over the stored entries.

    Returns the model and the per-epoch total of pre-update term losses.
    When ``model`` is given it is trained further in place.
    """
    if model is None:
        model = init_model(matrix.node_count, config)
    elif model.dim != config.dim:
        raise ValueError(f"model dim {model.dim} != config dim {config.dim}")
    if model.node_count < matrix.node_count:
        raise ValueError("model covers fewer documents than the context matrix")
    if len(matrix) and not np.all(matrix.f > 0):
        raise ValueError("context entries must have f > 0")

    rng = _rng(config.seed, stream, model.epochs_done)
    adaptive = config.optimizer is Optimizer.ADAGRAD
    n = len(matrix)
    params = (model.w, model.w_tilde, model.b, model.b_tilde,
              model.acc_w, model.acc_w_tilde, model.acc_b, model.acc_b_tilde)
    data = (matrix.rows.astype(np.int64), matrix.cols.astype(np.int64),
            matrix.x.astype(np.float64), matrix.f.astype(np.float64))
    trace: list[float] = []
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n).astype(np.int64)
        if config.workers > 1 and n:
            bounds = np.linspace(0, n, config.workers + 1).astype(np.int64)
            total, bad = _run_parallel(*params, *data, order, bounds, float(config.alpha), adaptive)
        else:
            total, bad = _run(*params, *data, order, float(config.alpha), adaptive)
        model.epochs_done += 1
        if bad >= 0:
            e = ContextEntry(int(data[0][bad]), int(data[1][bad]), float(data[2][bad]), float(data[3][bad]))
            raise TrainingError(model.epochs_done, e, ids)
        trace.append(float(total))
        log.debug("epoch %d J=%.6g", epoch, total)
    return model, trace


def finalize(model: EmbeddingModel, ids) -> PaperVectors:
    """Drop context vectors and biases; L2-normalise each document vector.

    Exactly-zero vectors stay zero and are flagged as unembedded.
    """
    w = model.w.astype(np.float64, copy=True)
    norms = np.linalg.norm(w, axis=1)
    flagged = norms == 0
    w[~flagged] /= norms[~flagged, None]
    return PaperVectors(ids=tuple(ids), vectors=w, flagged=flagged)


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(model: EmbeddingModel, path: str, ids=None) -> None:
    """Full trainable state (incl. context vectors) for resumed training."""
    extra = {} if ids is None else {"ids": np.array(list(ids), dtype=object).astype(str)}
    with open(path, "wb") as fh:
        np.savez(fh, **model.arrays(), seed=np.uint64(model.seed),
                 epochs_done=np.int64(model.epochs_done), **extra)


def load_checkpoint(path: str) -> tuple[EmbeddingModel, list[str] | None]:
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in ("w", "w_tilde", "b", "b_tilde", "acc_w", "acc_w_tilde", "acc_b", "acc_b_tilde")}
        ids = [str(s) for s in z["ids"]] if "ids" in z.files else None
        model = EmbeddingModel(**arrays, seed=int(z["seed"]), epochs_done=int(z["epochs_done"]))
    return model, ids
