"""The six evaluation measures and the correctness-matrix tabulation."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .objective import iter_aligned, waviness

REPORT_KEYS = ("auc_n", "auc_c", "w1", "w2", "m1", "m2")


class UndefinedAUCError(ValueError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    auc_n: float
    auc_c: float
    w1: float
    w2: float
    m1: float
    m2: float
    n_pairs_n: int = 0
    n_pairs_c: int = 0

    def selection_score(self) -> float:
        return self.auc_n + self.auc_c + self.m1 + self.m2

    def to_text(self) -> str:
        """One ``key=value`` line per field; floats use round-trip repr."""
        return "".join(f"{k}={v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MetricsReport":
        values = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()
        kwargs = {k: float(values[k]) for k in REPORT_KEYS}
        for k in ("n_pairs_n", "n_pairs_c"):
            if k in values:
                kwargs[k] = int(values[k])
        return cls(**kwargs)

    @classmethod
    def mean(cls, reports) -> "MetricsReport":
        reports = list(reports)
        kw = {k: float(np.mean([getattr(r, k) for r in reports])) for k in REPORT_KEYS}
        kw["n_pairs_n"] = sum(r.n_pairs_n for r in reports)
        kw["n_pairs_c"] = sum(r.n_pairs_c for r in reports)
        return cls(**kw)


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with tie-averaged ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError("AUC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def _pools(traces, sequences):
    """Concatenated (next score, next label, current score, current label) pools."""
    sn, ln, sc, lc = [], [], [], []
    for Y, seq in iter_aligned(traces, sequences):
        q = np.asarray(seq.questions)
        a = np.asarray(seq.answers)
        t = np.arange(len(q) - 1)
        sn.append(Y[t, q[1:]])
        ln.append(a[1:])
        sc.append(Y[t, q[:-1]])
        lc.append(a[:-1])
    if not sn:
        raise ValueError("no sequences")
    return (np.concatenate(sn), np.concatenate(ln), np.concatenate(sc), np.concatenate(lc))


def auc_next(traces, sequences) -> float:
    s, l, _, _ = _pools(traces, sequences)
    return auc(s, l)


def auc_current(traces, sequences) -> float:
    _, _, s, l = _pools(traces, sequences)
    return auc(s, l)


def consistency_m(traces, sequences) -> tuple[float, float]:
    """(m1, m2): agreement in sign / signed size between an answer and the move
    of that question's prediction."""
    s1 = s2 = 0.0
    n = 0
    for Y, seq in iter_aligned(traces, sequences):
        q = np.asarray(seq.questions)
        a = np.asarray(seq.answers)
        t = np.arange(1, len(q))
        delta = Y[t, q[1:]] - Y[t - 1, q[1:]]
        sign = np.where(a[1:] == 1, 1.0, -1.0)
        s1 += float(np.sum(sign * np.sign(delta)))
        s2 += float(np.sum(sign * delta))
        n += len(t)
    if n == 0:
        raise ValueError("m1/m2 need at least one sequence of length >= 2")
    return s1 / n, s2 / n


@dataclass(frozen=True)
class CorrectnessMatrix:
    """Counts of (current answer, next answer) for adjacent pairs skill_a -> skill_b.

    ``counts[i][j]``: i = 0 current correct / 1 incorrect, j likewise for next.
    """

    skill_a: int
    skill_b: int
    counts: tuple[tuple[int, int], tuple[int, int]]

    @property
    def row_totals(self) -> tuple[int, int]:
        return tuple(sum(r) for r in self.counts)

    @property
    def col_totals(self) -> tuple[int, int]:
        return tuple(self.counts[0][j] + self.counts[1][j] for j in range(2))

    @property
    def total(self) -> int:
        return sum(self.row_totals)

    def format_table(self, labels=None) -> str:
        la, lb = labels or (f"s{self.skill_a}", f"s{self.skill_b}")
        (cc, ci), (ic, ii) = self.counts
        r0, r1 = self.row_totals
        c0, c1 = self.col_totals
        w = max(11, len(str(self.total)) + 2)
        head = f"Current = {la}"
        pad = max(len(head), 5) + 12
        lines = [
            f"{'':<{pad}}Next = {lb}",
            f"{'':<{pad}}{'Correct':>{w}}{'Incorrect':>{w}}{'Total':>{w}}",
            f"{head:<{pad - 12}}{'Correct':>12}{cc:>{w}}{ci:>{w}}{r0:>{w}}",
            f"{'':<{pad - 12}}{'Incorrect':>12}{ic:>{w}}{ii:>{w}}{r1:>{w}}",
            f"{'':<{pad - 12}}{'Total':>12}{c0:>{w}}{c1:>{w}}{self.total:>{w}}",
        ]
        return "\n".join(lines) + "\n"


def correctness_matrix(dataset: Dataset, skill_a: int, skill_b: int) -> CorrectnessMatrix:
    M = dataset.num_skills
    if not (0 <= skill_a < M and 0 <= skill_b < M):
        raise ValueError(f"skills must lie in [0, {M})")
    counts = np.zeros((2, 2), dtype=np.int64)
    for seq in dataset.sequences:
        q = np.asarray(seq.questions)
        a = np.asarray(seq.answers)
        hit = np.nonzero((q[:-1] == skill_a) & (q[1:] == skill_b))[0]
        # row/col 0 = correct
        np.add.at(counts, (1 - a[hit], 1 - a[hit + 1]), 1)
    return CorrectnessMatrix(skill_a, skill_b, tuple(tuple(int(v) for v in row) for row in counts))


def full_report(traces, sequences, M: int) -> MetricsReport:
    traces, sequences = list(traces), list(sequences)
    sn, ln, sc, lc = _pools(traces, sequences)
    w1, w2 = waviness(traces, M)
    m1, m2 = consistency_m(traces, sequences)
    return MetricsReport(auc(sn, ln), auc(sc, lc), w1, w2, m1, m2, len(sn), len(sc))
