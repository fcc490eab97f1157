"""Minibatch training, evaluation, cross-validated grid search and model selection."""

from __future__ import annotations

import itertools
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .core import clip_global_norm
from .data import Batch, Dataset, InteractionSequence, kfold
from .metrics import REPORT_KEYS, MetricsReport, full_report
from .model import ModelConfig, backward_batch, forward_batch, init_params, predict
from .objective import LossConfig, batch_loss, batch_output_grads

log = logging.getLogger(__name__)

OPTIMIZERS = ("sgd", "adam")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    clip_threshold: float = 3.0
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 5
    optimizer: str = "sgd"
    early_stop_on: str = "validation"
    seed: int = 0
    # False: run all max_epochs and keep the final parameters
    early_stopping: bool = True

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")
        if self.clip_threshold <= 0:
            raise ValueError("clip_threshold must be positive")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValueError("batch_size, max_epochs and patience must be positive")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}")
        if self.early_stop_on not in ("validation", "test"):
            raise ValueError("early_stop_on must be 'validation' or 'test'")


@dataclass(frozen=True)
class GridSpec:
    lambda_r: tuple[float, ...] = (0.0, 0.05, 0.10, 0.15, 0.20, 0.25)
    lambda_w1: tuple[float, ...] = (0.0, 0.01, 0.03, 0.1, 0.3, 1.0)
    lambda_w2: tuple[float, ...] = (0.0, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)

    def __post_init__(self):
        for name in ("lambda_r", "lambda_w1", "lambda_w2"):
            values = tuple(float(v) for v in getattr(self, name))
            if not values or min(values) < 0:
                raise ValueError(f"{name} grid must be non-empty and non-negative")
            object.__setattr__(self, name, values)

    def cells(self) -> list[LossConfig]:
        seen = dict.fromkeys(itertools.product(
            dict.fromkeys(self.lambda_r), dict.fromkeys(self.lambda_w1), dict.fromkeys(self.lambda_w2)))
        return [LossConfig(*t) for t in seen]


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    report: MetricsReport | None
    wall_time: float


@dataclass
class RunHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def to_text(self, timings: bool = False) -> str:
        """Deterministic unless ``timings`` adds the per-epoch wall time."""
        lines = [f"best_epoch={self.best_epoch}", f"stopped_early={int(self.stopped_early)}"]
        for e in self.epochs:
            line = f"epoch={e.epoch} train_loss={e.train_loss!r}"
            if e.report is not None:
                line += "".join(f" {k}={getattr(e.report, k)!r}" for k in REPORT_KEYS)
            if timings:
                line += f" wall_time={e.wall_time:.3f}"
            lines.append(line)
        return "\n".join(lines) + "\n"


class Sgd:
    def __init__(self, lr: float):
        self.lr = lr

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        for p, g in zip(params, grads):
            p -= self.lr * g


class Adam:
    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m: list[np.ndarray] | None = None
        self.v: list[np.ndarray] | None = None

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig):
    return Sgd(cfg.learning_rate) if cfg.optimizer == "sgd" else Adam(cfg.learning_rate)


def batch_step(params, batch: Batch, model_cfg: ModelConfig, loss_cfg: LossConfig,
               rng: np.random.Generator, clip_threshold: float):
    """Forward, loss, BPTT and clipping for one minibatch; returns (report, clipped grads)."""
    trace = forward_batch(batch, params, model_cfg, "train", rng)
    report = batch_loss(trace.outputs, batch, loss_cfg)
    if not math.isfinite(report.total):
        raise TrainingDiverged(f"non-finite loss {report.total}")
    dY = batch_output_grads(trace.outputs, batch, loss_cfg)
    grads = backward_batch(trace, dY, params)
    return report, clip_global_norm(grads.arrays(), clip_threshold)


def evaluate(params, dataset: Dataset, model_cfg: ModelConfig) -> MetricsReport:
    if dataset.num_skills != params.M:
        raise ValueError(f"dataset has M={dataset.num_skills}, model has M={params.M}")
    seqs = dataset.sequences
    return full_report(predict(params, model_cfg, seqs), seqs, params.M)


def train(train_set: Dataset, val_set: Dataset, model_cfg: ModelConfig, loss_cfg: LossConfig,
          train_cfg: TrainConfig, init=None):
    """Train until the monitor set's AUC(N) stops improving.

    ``val_set`` is the monitored set (a validation split, or the test split
    when reproducing the test-set early stopping). Returns the parameters of
    the best epoch and the run history. With ``early_stopping=False`` every
    epoch runs, the final parameters are returned and ``val_set`` may be None.
    """
    if len(train_set) == 0:
        raise ValueError("empty training set")
    if val_set is None:
        if train_cfg.early_stopping:
            raise ValueError("early stopping needs a monitor set")
    elif len(val_set) == 0:
        raise ValueError("empty monitor set")
    elif train_set.num_skills != val_set.num_skills:
        raise ValueError("training and monitor sets disagree on the number of skills")
    params = init.copy() if init is not None else init_params(model_cfg, train_set.num_skills)
    rng = np.random.default_rng(train_cfg.seed)
    opt = make_optimizer(train_cfg)
    seqs = train_set.sequences
    history = RunHistory()
    best, best_score, wait = params.copy(), -math.inf, 0
    initial_loss, blowups = None, 0

    for epoch in range(1, train_cfg.max_epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(len(seqs))
        loss_sum, terms = 0.0, 0
        for lo in range(0, len(seqs), train_cfg.batch_size):
            batch = Batch.from_sequences([seqs[i] for i in order[lo:lo + train_cfg.batch_size]])
            report, grads = batch_step(params, batch, model_cfg, loss_cfg, rng, train_cfg.clip_threshold)
            opt.step(params.arrays(), grads)
            loss_sum += report.total * report.n_terms
            terms += report.n_terms
        epoch_loss = loss_sum / terms

        if initial_loss is None:
            initial_loss = epoch_loss
        blowups = blowups + 1 if epoch_loss > 10 * initial_loss else 0
        if not math.isfinite(epoch_loss) or blowups >= 3:
            raise TrainingDiverged(f"epoch {epoch}: loss {epoch_loss} (initial {initial_loss})")

        if val_set is None:
            history.epochs.append(EpochRecord(epoch, epoch_loss, None, time.perf_counter() - start))
            log.info("epoch %d loss %.5f", epoch, epoch_loss)
            continue
        monitor = evaluate(params, val_set, model_cfg)
        history.epochs.append(EpochRecord(epoch, epoch_loss, monitor, time.perf_counter() - start))
        log.info("epoch %d loss %.5f auc_n %.4f auc_c %.4f w1 %.4f",
                 epoch, epoch_loss, monitor.auc_n, monitor.auc_c, monitor.w1)
        if not train_cfg.early_stopping:
            continue
        if monitor.auc_n > best_score:
            best, best_score, wait = params.copy(), monitor.auc_n, 0
            history.best_epoch = epoch
        else:
            wait += 1
            if wait >= train_cfg.patience:
                history.stopped_early = True
                break
    if not train_cfg.early_stopping:
        history.best_epoch = len(history.epochs)
        return params, history
    return best, history


def _cv_cell(job):
    loss_cfg, fold_train, fold_val, model_cfg, train_cfg = job
    params, _ = train(fold_train, fold_val, model_cfg, loss_cfg, train_cfg)
    return evaluate(params, fold_val, model_cfg)


def grid_search(train_set: Dataset, grid: GridSpec, k: int, model_cfg: ModelConfig,
                train_cfg: TrainConfig, seed: int = 0, workers: int = 1):
    """k-fold cross-validated mean MetricsReport for every lambda triple, in grid order."""
    folds = kfold(train_set, k, seed)
    cells = grid.cells()
    jobs = [(cfg, tr, va, model_cfg, train_cfg) for cfg in cells for tr, va in folds]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(_cv_cell, jobs))
    else:
        reports = [_cv_cell(job) for job in jobs]
    return [(cfg, MetricsReport.mean(reports[i * k:(i + 1) * k])) for i, cfg in enumerate(cells)]


@dataclass(frozen=True)
class Selection:
    loss_config: LossConfig
    report: MetricsReport
    fallback: bool  # True when no candidate beat the baseline's w1


def select_best(results, baseline: MetricsReport) -> Selection:
    """Among triples with lower w1 than plain DKT, the largest AUC(N)+AUC(C)+m1+m2."""
    candidates = [(cfg, rep) for cfg, rep in results if rep.w1 < baseline.w1]
    if not candidates:
        log.warning("no configuration has lower w1 than the baseline; keeping plain DKT")
        return Selection(LossConfig(), baseline, True)
    cfg, rep = min(candidates, key=lambda cr: (-cr[1].selection_score(), cr[0].as_tuple()))
    return Selection(cfg, rep, False)


def baseline_report(results) -> MetricsReport:
    for cfg, rep in results:
        if cfg.is_plain:
            return rep
    raise ValueError("results do not contain the (0, 0, 0) baseline")


def gradient_check(model_cfg: ModelConfig, loss_cfg: LossConfig, seed: int = 0,
                   num_skills: int = 4, max_len: int = 6, n_sequences: int = 3,
                   param_stddev: float = 0.5, eps: float = 1e-5, kink_margin: float = 1e-3) -> float:
    """Max element-wise |analytic - numeric| / max(1, |analytic|) over all parameters.

    Builds a random small model and data set, freezes a dropout draw, and
    compares BPTT gradients of the total loss with central differences. When
    the L1 waviness term is active, instances whose consecutive outputs come
    within ``kink_margin`` of a kink are redrawn.
    """
    if num_skills > 5 or model_cfg.hidden_size > 6 or max_len > 6 or max_len < 2:
        raise ValueError("gradient_check is for small models (M<=5, H<=6, 2<=T<=6)")
    for attempt in range(1000):
        rng = np.random.default_rng([seed, attempt])
        seqs = []
        for _ in range(n_sequences):
            T = int(rng.integers(2, max_len + 1))
            seqs.append(InteractionSequence(rng.integers(0, num_skills, T), rng.integers(0, 2, T)))
        batch = Batch.from_sequences(seqs)
        cfg = replace(model_cfg, init_stddev=param_stddev, seed=int(rng.integers(2**31)))
        params = init_params(cfg, num_skills)
        for name, arr in params.tensors().items():
            if name.startswith("b"):
                arr += rng.normal(0.0, param_stddev, arr.shape)
        dropout = None
        if cfg.dropout_rate > 0:
            dropout = (rng.random((batch.T, batch.B, cfg.hidden_size)) >= cfg.dropout_rate) / (1 - cfg.dropout_rate)

        def loss_at(p):
            Y = forward_batch(batch, p, cfg, "train", dropout=dropout).outputs
            return batch_loss(Y, batch, loss_cfg).total

        trace = forward_batch(batch, params, cfg, "train", dropout=dropout)
        if loss_cfg.lambda_w1:
            D = np.abs(np.diff(trace.outputs, axis=0))[batch.mask[1:]]
            if D.size and D.min() < kink_margin:
                continue
        dY = batch_output_grads(trace.outputs, batch, loss_cfg)
        analytic = backward_batch(trace, dY, params).tensors()
        worst = 0.0
        for name, arr in params.tensors().items():
            grad = analytic[name]
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + eps
                up = loss_at(params)
                arr[idx] = old - eps
                down = loss_at(params)
                arr[idx] = old
                numeric = (up - down) / (2 * eps)
                worst = max(worst, abs(grad[idx] - numeric) / max(1.0, abs(grad[idx])))
        return worst
    raise RuntimeError("could not draw an instance away from the L1 kinks")
