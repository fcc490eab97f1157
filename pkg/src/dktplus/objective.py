"""Next-step loss, reconstruction and waviness regularizers, and their gradients.

Every term is normalized by N = sum_i (T_i - 1), the number of
(t, t+1) pairs. The list-based functions take one output array (T_i, M)
per student (or anything with an ``outputs`` attribute) aligned with the
interaction sequences; the ``batch_*`` functions work on padded
time-major batches and are what the trainer calls.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Batch

PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossConfig:
    lambda_r: float = 0.0
    lambda_w1: float = 0.0
    lambda_w2: float = 0.0

    def __post_init__(self):
        if min(self.lambda_r, self.lambda_w1, self.lambda_w2) < 0:
            raise ValueError("regularization weights must be non-negative")

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.lambda_r, self.lambda_w1, self.lambda_w2)

    @property
    def is_plain(self) -> bool:
        return self.as_tuple() == (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class BatchLossReport:
    next_loss: float
    recon_term: float
    w1: float
    w2: float
    w2_sq: float
    total: float
    n_terms: int


def xent(p, a):
    """Binary cross-entropy with p clamped to [1e-12, 1 - 1e-12]."""
    p = np.clip(np.asarray(p, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    a = np.asarray(a, dtype=np.float64)
    out = -(a * np.log(p) + (1.0 - a) * np.log1p(-p))
    return float(out) if out.ndim == 0 else out


def _xent_grad(p, a):
    p = np.clip(p, PROB_EPS, 1.0 - PROB_EPS)
    return (p - a) / (p * (1.0 - p))


@dataclass(frozen=True)
class _Pairs:
    """Index arrays of the valid (t, t+1) pairs of a padded batch."""

    t: np.ndarray
    b: np.ndarray
    q_cur: np.ndarray
    a_cur: np.ndarray
    q_next: np.ndarray
    a_next: np.ndarray
    mask: np.ndarray  # (T-1, B)

    @classmethod
    def of(cls, batch: Batch) -> "_Pairs":
        T = batch.T
        mask = np.arange(T - 1)[:, None] + 1 < batch.lengths[None, :]
        t, b = np.nonzero(mask)
        q, a = batch.questions, batch.answers
        return cls(t, b, q[t, b], a[t, b], q[t + 1, b], a[t + 1, b], mask)

    @property
    def n(self) -> int:
        return len(self.t)


def _term_sums(Y, batch: Batch):
    pairs = _Pairs.of(batch)
    p_next = Y[pairs.t, pairs.b, pairs.q_next]
    p_cur = Y[pairs.t, pairs.b, pairs.q_cur]
    D = (Y[1:] - Y[:-1])[pairs.mask]
    return np.array([
        np.sum(xent(p_next, pairs.a_next)),
        np.sum(xent(p_cur, pairs.a_cur)),
        np.abs(D).sum(),
        np.square(D).sum(),
    ]), pairs.n


def _report(sums, n_terms: int, M: int, cfg: LossConfig) -> BatchLossReport:
    if n_terms == 0:
        raise ValueError("no (t, t+1) pairs: every sequence is shorter than 2")
    next_loss = sums[0] / n_terms
    recon = sums[1] / n_terms
    w1 = sums[2] / (M * n_terms)
    w2_sq = sums[3] / (M * n_terms)
    total = next_loss + cfg.lambda_r * recon + cfg.lambda_w1 * w1 + cfg.lambda_w2 * w2_sq
    return BatchLossReport(float(next_loss), float(recon), float(w1), float(np.sqrt(w2_sq)),
                           float(w2_sq), float(total), int(n_terms))


def batch_loss(Y, batch: Batch, cfg: LossConfig) -> BatchLossReport:
    sums, n = _term_sums(Y, batch)
    return _report(sums, n, Y.shape[-1], cfg)


def batch_output_grads(Y, batch: Batch, cfg: LossConfig, n_terms: int | None = None) -> np.ndarray:
    """dL'/dY for a padded batch; zero on padded steps.

    ``n_terms`` overrides the normalizer (used when a batch is part of a
    larger pool).
    """
    T, B, M = Y.shape
    pairs = _Pairs.of(batch)
    N = pairs.n if n_terms is None else n_terms
    if N == 0:
        raise ValueError("no (t, t+1) pairs: every sequence is shorter than 2")
    dY = np.zeros_like(Y)
    # each (t, b) occurs once per index set, so += does not drop duplicates
    dY[pairs.t, pairs.b, pairs.q_next] += _xent_grad(Y[pairs.t, pairs.b, pairs.q_next], pairs.a_next) / N
    if cfg.lambda_r:
        g = _xent_grad(Y[pairs.t, pairs.b, pairs.q_cur], pairs.a_cur)
        dY[pairs.t, pairs.b, pairs.q_cur] += (cfg.lambda_r / N) * g
    if cfg.lambda_w1 or cfg.lambda_w2:
        D = (Y[1:] - Y[:-1]) * pairs.mask[:, :, None]
        G = np.zeros_like(D)
        if cfg.lambda_w1:
            G += (cfg.lambda_w1 / (M * N)) * np.sign(D)
        if cfg.lambda_w2:
            G += (2.0 * cfg.lambda_w2 / (M * N)) * D
        dY[1:] += G
        dY[:-1] -= G
    return dY


# list-based interface

def _outputs(trace) -> np.ndarray:
    return np.asarray(getattr(trace, "outputs", trace), dtype=np.float64)


def iter_aligned(traces, sequences):
    traces, sequences = list(traces), list(sequences)
    if len(traces) != len(sequences):
        raise ValueError(f"{len(traces)} traces for {len(sequences)} sequences")
    for tr, seq in zip(traces, sequences):
        Y = _outputs(tr)
        if Y.ndim != 2 or Y.shape[0] != len(seq):
            raise ValueError(f"trace of shape {Y.shape} for a sequence of length {len(seq)}")
        if max(seq.questions) >= Y.shape[1]:
            raise ValueError("question id outside the output vector")
        yield Y, seq


def _pooled_sums(traces, sequences):
    total, n, M = np.zeros(4), 0, None
    for Y, seq in iter_aligned(traces, sequences):
        sums, k = _term_sums(Y[:, None, :], Batch.from_sequences([seq]))
        total += sums
        n += k
        M = Y.shape[1]
    if n == 0:
        raise ValueError("no (t, t+1) pairs: every sequence is shorter than 2")
    return total, n, M


def next_step_loss(traces, sequences) -> float:
    sums, n, _ = _pooled_sums(traces, sequences)
    return float(sums[0] / n)


def reconstruction_reg(traces, sequences) -> float:
    sums, n, _ = _pooled_sums(traces, sequences)
    return float(sums[1] / n)


def waviness(traces, M: int) -> tuple[float, float]:
    """(w1, w2): mean absolute and root-mean-square change between consecutive outputs."""
    l1 = l2 = 0.0
    n = 0
    for tr in traces:
        Y = _outputs(tr)
        if Y.shape[1] != M:
            raise ValueError(f"trace has {Y.shape[1]} outputs, expected M={M}")
        D = np.diff(Y, axis=0)
        l1 += np.abs(D).sum()
        l2 += np.square(D).sum()
        n += len(D)
    if n == 0:
        raise ValueError("waviness needs at least one sequence of length >= 2")
    return float(l1 / (M * n)), float(np.sqrt(l2 / (M * n)))


def total_loss(traces, sequences, cfg: LossConfig) -> BatchLossReport:
    sums, n, M = _pooled_sums(traces, sequences)
    return _report(sums, n, M, cfg)


def loss_output_grads(traces, sequences, cfg: LossConfig) -> list[np.ndarray]:
    """dL'/dy_t for every student and step, normalized over the whole pool."""
    pairs = list(iter_aligned(traces, sequences))
    N = sum(len(seq) - 1 for _, seq in pairs)
    return [
        batch_output_grads(Y[:, None, :], Batch.from_sequences([seq]), cfg, n_terms=N)[:, 0, :]
        for Y, seq in pairs
    ]
