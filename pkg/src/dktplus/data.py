"""Interaction logs: parsing, encoding, splitting and the synthetic IRT students."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

ENCODINGS = ("compressed", "concat")


class TripletParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class InteractionSequence:
    """One student's ordered (question id, answer) pairs."""

    questions: tuple[int, ...]
    answers: tuple[int, ...]

    def __post_init__(self):
        q = tuple(int(v) for v in self.questions)
        a = tuple(int(v) for v in self.answers)
        object.__setattr__(self, "questions", q)
        object.__setattr__(self, "answers", a)
        if len(q) != len(a):
            raise ValueError(f"{len(q)} questions but {len(a)} answers")
        if len(q) < 2:
            raise ValueError("a sequence needs at least two interactions")
        if min(q) < 0:
            raise ValueError("question ids must be non-negative")
        if any(v not in (0, 1) for v in a):
            raise ValueError("answers must be 0 or 1")

    def __len__(self) -> int:
        return len(self.questions)


@dataclass(frozen=True)
class Dataset:
    sequences: tuple[InteractionSequence, ...]
    num_skills: int
    dropped: int = 0
    # external tag -> id, for labeling reports
    skill_tags: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        seqs = tuple(self.sequences)
        object.__setattr__(self, "sequences", seqs)
        needed = 1 + max((max(s.questions) for s in seqs), default=-1)
        if self.num_skills < max(needed, 1):
            raise ValueError(
                f"num_skills={self.num_skills} but question ids reach {needed - 1}"
            )

    def __len__(self) -> int:
        return len(self.sequences)

    def __iter__(self):
        return iter(self.sequences)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        return Dataset(
            tuple(self.sequences[i] for i in indices),
            self.num_skills,
            skill_tags=self.skill_tags,
        )

    @property
    def num_interactions(self) -> int:
        return sum(len(s) for s in self.sequences)

    def mean_correctness(self) -> float:
        total = sum(sum(s.answers) for s in self.sequences)
        return total / max(self.num_interactions, 1)


def _parse_row(line: str, lineno: int, what: str) -> list[int]:
    try:
        return [int(tok) for tok in line.split(",")]
    except ValueError:
        raise TripletParseError(lineno, f"malformed {what} row {line!r}") from None


def parse_triplet_log(text, num_skills: int | None = None) -> Dataset:
    """Read the 3-lines-per-student format (length, skill ids, answers).

    ``text`` is a string or a text stream. Sequences shorter than two
    interactions are dropped and counted in ``Dataset.dropped``.
    """
    if not isinstance(text, str):
        text = text.read()
    lines = text.replace("\r", "").split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    sequences = []
    dropped = 0
    i = 0
    while i < len(lines):
        if lines[i].strip() == "" and all(not ln.strip() for ln in lines[i:]):
            break
        if i + 3 > len(lines):
            raise TripletParseError(i + 1, "truncated record (expected 3 lines)")
        try:
            n = int(lines[i].strip())
        except ValueError:
            raise TripletParseError(i + 1, f"malformed length {lines[i]!r}") from None
        if n < 0:
            raise TripletParseError(i + 1, "negative sequence length")
        qs = _parse_row(lines[i + 1], i + 2, "skill id")
        ans = _parse_row(lines[i + 2], i + 3, "answer")
        if len(qs) != n:
            raise TripletParseError(i + 2, f"expected {n} skill ids, found {len(qs)}")
        if len(ans) != n:
            raise TripletParseError(i + 3, f"expected {n} answers, found {len(ans)}")
        if any(q < 0 for q in qs):
            raise TripletParseError(i + 2, "negative skill id")
        if any(a not in (0, 1) for a in ans):
            raise TripletParseError(i + 3, "answers must be 0 or 1")
        if num_skills is not None and any(q >= num_skills for q in qs):
            raise TripletParseError(i + 2, f"skill id out of range for M={num_skills}")
        if n < 2:
            dropped += 1
        else:
            sequences.append(InteractionSequence(tuple(qs), tuple(ans)))
        i += 3

    seen = sorted({q for s in sequences for q in s.questions})
    if num_skills is None:
        num_skills = max(1 + (seen[-1] if seen else 0), 1)
    return Dataset(
        tuple(sequences),
        num_skills,
        dropped=dropped,
        skill_tags={f"s{q}": q for q in seen},
    )


def serialize_triplet_log(dataset: Dataset) -> str:
    out = io.StringIO()
    for s in dataset.sequences:
        out.write(f"{len(s)}\n")
        out.write(",".join(map(str, s.questions)) + "\n")
        out.write(",".join(map(str, s.answers)) + "\n")
    return out.getvalue()


def read_triplet_file(path, num_skills: int | None = None) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        return parse_triplet_log(fh, num_skills)


def write_triplet_file(path, dataset: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(serialize_triplet_log(dataset))


def encode_input(q: int, a: int, M: int, scheme: str = "compressed") -> np.ndarray:
    """One interaction as a length-2M indicator vector."""
    if not 0 <= q < M:
        raise ValueError(f"question id {q} outside [0, {M})")
    if a not in (0, 1):
        raise ValueError("answer must be 0 or 1")
    x = np.zeros(2 * M)
    if scheme == "compressed":
        x[q + a * M] = 1.0
    elif scheme == "concat":
        x[q] = 1.0
        if a:
            x[M + q] = 1.0
    else:
        raise ValueError(f"unknown encoding scheme {scheme!r}")
    return x


@dataclass(frozen=True)
class Batch:
    """Time-major padded view of several sequences.

    ``questions``/``answers`` are (T, B) integer arrays padded with zeros past
    each sequence's length.
    """

    questions: np.ndarray
    answers: np.ndarray
    lengths: np.ndarray

    @classmethod
    def from_sequences(cls, sequences) -> "Batch":
        sequences = list(sequences)
        if not sequences:
            raise ValueError("empty batch")
        lengths = np.array([len(s) for s in sequences], dtype=np.int64)
        T, B = int(lengths.max()), len(sequences)
        q = np.zeros((T, B), dtype=np.int64)
        a = np.zeros((T, B), dtype=np.int64)
        for b, s in enumerate(sequences):
            q[: len(s), b] = s.questions
            a[: len(s), b] = s.answers
        return cls(q, a, lengths)

    @property
    def T(self) -> int:
        return self.questions.shape[0]

    @property
    def B(self) -> int:
        return self.questions.shape[1]

    @property
    def mask(self) -> np.ndarray:
        return np.arange(self.T)[:, None] < self.lengths[None, :]

    def encode(self, M: int, scheme: str = "compressed") -> np.ndarray:
        """Indicator inputs of shape (T, B, 2M); padded steps are all-zero."""
        if self.questions.max() >= M:
            raise ValueError(f"question id {int(self.questions.max())} >= M={M}")
        X = np.zeros((self.T, self.B, 2 * M))
        t, b = np.nonzero(self.mask)
        q, a = self.questions[t, b], self.answers[t, b]
        if scheme == "compressed":
            X[t, b, q + a * M] = 1.0
        elif scheme == "concat":
            X[t, b, q] = 1.0
            hit = a == 1
            X[t[hit], b[hit], M + q[hit]] = 1.0
        else:
            raise ValueError(f"unknown encoding scheme {scheme!r}")
        return X


def split_train_test(dataset: Dataset, test_fraction: float, seed: int):
    """Student-level random partition into (train, test)."""
    if not 0 < test_fraction < 1:
        raise ValueError("test_fraction must lie in (0, 1)")
    n = len(dataset)
    if n < 2:
        raise ValueError("need at least two sequences to split")
    n_test = min(max(int(round(n * test_fraction)), 1), n - 1)
    perm = np.random.default_rng(seed).permutation(n)
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    return dataset.subset(train_idx), dataset.subset(test_idx)


def kfold(dataset: Dataset, k: int, seed: int):
    """``k`` (train, validation) pairs with disjoint validation folds."""
    n = len(dataset)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of sequences ({n})")
    perm = np.random.default_rng(seed).permutation(n)
    folds = np.array_split(perm, k)
    pairs = []
    for i, fold in enumerate(folds):
        train_idx = np.sort(np.concatenate([f for j, f in enumerate(folds) if j != i]))
        pairs.append((dataset.subset(train_idx), dataset.subset(np.sort(fold))))
    return pairs


@dataclass(frozen=True)
class SimConfig:
    n_students: int = 2000
    n_exercises: int = 50
    n_concepts: int = 5
    guess_c: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.n_students < 1:
            raise ValueError("n_students must be positive")
        if self.n_exercises < 2:
            raise ValueError("n_exercises must be at least 2")
        if not 1 <= self.n_concepts <= self.n_exercises:
            raise ValueError("n_concepts must lie in [1, n_exercises]")
        if not 0 <= self.guess_c < 1:
            raise ValueError("guess_c must lie in [0, 1)")


def irt_probability(ability, difficulty, guess_c: float):
    """Probability of a correct answer under the guessing logistic model."""
    return guess_c + (1.0 - guess_c) / (1.0 + np.exp(np.subtract(difficulty, ability)))


def _draw_probabilities(cfg: SimConfig):
    # (n_students, n_exercises) success probabilities, plus the generator to keep drawing from
    rng = np.random.default_rng(cfg.seed)
    difficulty = rng.standard_normal(cfg.n_exercises)
    ability = rng.standard_normal((cfg.n_students, cfg.n_concepts))
    concept = np.arange(cfg.n_exercises) % cfg.n_concepts
    return irt_probability(ability[:, concept], difficulty[None, :], cfg.guess_c), rng


def generate_simulated(cfg: SimConfig = SimConfig()) -> Dataset:
    """Every student answers exercises 0..n_exercises-1 in order.

    Exercise ``e`` tests concept ``e % n_concepts``; difficulties and
    per-concept abilities are standard normal.
    """
    p, rng = _draw_probabilities(cfg)
    correct = (rng.random(p.shape) < p).astype(np.int64)
    order = tuple(range(cfg.n_exercises))
    seqs = tuple(InteractionSequence(order, tuple(row)) for row in correct.tolist())
    return Dataset(seqs, cfg.n_exercises, skill_tags={f"s{e}": e for e in order})
