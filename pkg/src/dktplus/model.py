"""The DKT recurrent network: parameters, forward pass, BPTT and checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from typing import Any

import numpy as np

from . import kernels
from .core import affine, sigmoid, tanh_vec
from .data import ENCODINGS, Batch, InteractionSequence

CELL_KINDS = ("lstm", "vanilla")


@dataclass(frozen=True)
class ModelConfig:
    hidden_size: int = 200
    cell_kind: str = "lstm"
    encoding: str = "compressed"
    dropout_rate: float = 0.5
    init_stddev: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.hidden_size < 1:
            raise ValueError("hidden_size must be at least 1")
        if self.cell_kind not in CELL_KINDS:
            raise ValueError(f"cell_kind must be one of {CELL_KINDS}")
        if self.encoding not in ENCODINGS:
            raise ValueError(f"encoding must be one of {ENCODINGS}")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout_rate must lie in [0, 1)")
        if self.init_stddev < 0:
            raise ValueError("init_stddev must be non-negative")


class _ParamSet:
    """Shared behaviour of the parameter dataclasses (fields are float64 arrays)."""

    def tensors(self) -> dict[str, np.ndarray]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_tensors(cls, tensors):
        return cls(**{f.name: np.asarray(tensors[f.name], dtype=np.float64) for f in fields(cls)})

    def arrays(self) -> list[np.ndarray]:
        return list(self.tensors().values())

    def copy(self):
        return self.from_tensors({k: v.copy() for k, v in self.tensors().items()})

    def zeros_like(self):
        return self.from_tensors({k: np.zeros_like(v) for k, v in self.tensors().items()})

    def with_arrays(self, arrays):
        return self.from_tensors(dict(zip(self.tensors(), arrays)))

    @property
    def M(self) -> int:
        return self.W_hy.shape[0]

    @property
    def H(self) -> int:
        return self.W_hy.shape[1]

    def _check_output_shapes(self):
        M, H = self.W_hy.shape
        if self.b_y.shape != (M,):
            raise ValueError("b_y shape mismatch")
        return M, H


@dataclass(eq=False)
class LstmParams(_ParamSet):
    """Gate weights act on the concatenation [x_t, h_{t-1}] of width 2M + H."""

    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_c: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_c: np.ndarray
    W_hy: np.ndarray
    b_y: np.ndarray

    kind = "lstm"

    def __post_init__(self):
        M, H = self._check_output_shapes()
        for W in (self.W_f, self.W_i, self.W_o, self.W_c):
            if W.shape != (H, 2 * M + H):
                raise ValueError(f"gate weight shape {W.shape} != {(H, 2 * M + H)}")
        for b in (self.b_f, self.b_i, self.b_o, self.b_c):
            if b.shape != (H,):
                raise ValueError("gate bias shape mismatch")

    @classmethod
    def shapes(cls, M: int, H: int) -> dict[str, tuple[int, ...]]:
        gate, bias = (H, 2 * M + H), (H,)
        return {"W_f": gate, "W_i": gate, "W_o": gate, "W_c": gate,
                "b_f": bias, "b_i": bias, "b_o": bias, "b_c": bias,
                "W_hy": (M, H), "b_y": (M,)}


@dataclass(eq=False)
class RnnParams(_ParamSet):
    W_hx: np.ndarray
    W_hh: np.ndarray
    b_h: np.ndarray
    W_hy: np.ndarray
    b_y: np.ndarray

    kind = "vanilla"

    def __post_init__(self):
        M, H = self._check_output_shapes()
        if self.W_hx.shape != (H, 2 * M) or self.W_hh.shape != (H, H) or self.b_h.shape != (H,):
            raise ValueError("vanilla RNN parameter shape mismatch")

    @classmethod
    def shapes(cls, M: int, H: int) -> dict[str, tuple[int, ...]]:
        return {"W_hx": (H, 2 * M), "W_hh": (H, H), "b_h": (H,), "W_hy": (M, H), "b_y": (M,)}


def param_class(cell_kind: str):
    return LstmParams if cell_kind == "lstm" else RnnParams


def init_params(cfg: ModelConfig, num_skills: int):
    """Gaussian weights N(0, init_stddev^2), zero biases."""
    if num_skills < 1:
        raise ValueError("num_skills must be positive")
    rng = np.random.default_rng(cfg.seed)
    cls = param_class(cfg.cell_kind)
    tensors = {}
    for name, shape in cls.shapes(num_skills, cfg.hidden_size).items():
        if name.startswith("W"):
            tensors[name] = rng.normal(0.0, cfg.init_stddev, size=shape)
        else:
            tensors[name] = np.zeros(shape)
    return cls.from_tensors(tensors)


# single-step reference path

def lstm_step(x, h_prev, c_prev, p: LstmParams):
    xh = np.concatenate([np.asarray(x, dtype=np.float64), np.asarray(h_prev, dtype=np.float64)])
    f = sigmoid(affine(p.W_f, xh, p.b_f))
    i = sigmoid(affine(p.W_i, xh, p.b_i))
    o = sigmoid(affine(p.W_o, xh, p.b_o))
    c_tilde = tanh_vec(affine(p.W_c, xh, p.b_c))
    c = f * c_prev + i * c_tilde
    h = o * tanh_vec(c)
    return h, c, {"f": f, "i": i, "o": o, "c_tilde": c_tilde, "xh": xh}


def rnn_step(x, h_prev, p: RnnParams):
    return tanh_vec(affine(p.W_hx, x, p.b_h) + p.W_hh @ np.asarray(h_prev, dtype=np.float64))


def output_step(h, p, dropout_mask=None, dropout_rate: float = 0.0):
    """``dropout_mask`` is a 0/1 keep mask; kept units are scaled by 1/(1-rate)."""
    h = np.asarray(h, dtype=np.float64)
    if dropout_mask is not None:
        h = h * (np.asarray(dropout_mask, dtype=np.float64) / (1.0 - dropout_rate))
    return sigmoid(affine(p.W_hy, h, p.b_y))


# batched path used for training and evaluation

@dataclass
class BatchTrace:
    """Outputs Y (T, B, M) plus whatever the backward pass needs."""

    outputs: np.ndarray
    batch: Batch
    cache: dict[str, Any] | None = None


def _lstm_stacked(p: LstmParams):
    W = np.concatenate([p.W_f, p.W_i, p.W_o, p.W_c])
    b = np.concatenate([p.b_f, p.b_i, p.b_o, p.b_c])
    return W, b


def draw_dropout(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout multipliers: 0 or 1/(1-rate)."""
    return (rng.random(shape) >= rate) * (1.0 / (1.0 - rate))


def forward_batch(batch: Batch, p, cfg: ModelConfig, mode: str = "infer",
                  rng: np.random.Generator | None = None, dropout=None) -> BatchTrace:
    """Run the network over a padded batch.

    In ``train`` mode the activations are cached for ``backward_batch`` and
    dropout multipliers are drawn from ``rng`` (one per step, sequence and
    hidden unit) unless ``dropout`` supplies them explicitly.
    """
    if mode not in ("train", "infer"):
        raise ValueError("mode must be 'train' or 'infer'")
    M, H = p.M, p.H
    if cfg.hidden_size != H or p.kind != cfg.cell_kind:
        raise ValueError("parameters do not match the model configuration")
    X = batch.encode(M, cfg.encoding)

    if p.kind == "lstm":
        W, b = _lstm_stacked(p)
        Wh = np.ascontiguousarray(W[:, 2 * M:])
        Zx = np.ascontiguousarray(X @ W[:, : 2 * M].T + b)
        G, C, TC, Hs = kernels.lstm_forward(Zx, Wh)
        cache = {"G": G, "C": C, "TC": TC, "Wh": Wh}
    else:
        Wh = np.ascontiguousarray(p.W_hh)
        Zx = np.ascontiguousarray(X @ p.W_hx.T + p.b_h)
        Hs = kernels.rnn_forward(Zx, Wh)
        cache = {"Wh": Wh}

    D = None
    if mode == "train":
        if dropout is not None:
            D = np.asarray(dropout, dtype=np.float64)
        elif cfg.dropout_rate > 0:
            if rng is None:
                raise ValueError("train mode with dropout needs a random generator")
            D = draw_dropout(rng, Hs.shape, cfg.dropout_rate)
    Hd = Hs * D if D is not None else Hs
    Y = sigmoid(Hd @ p.W_hy.T + p.b_y)

    if mode == "infer":
        return BatchTrace(Y, batch)
    cache.update(X=X, Hs=Hs, Hd=Hd, D=D)
    return BatchTrace(Y, batch, cache)


def backward_batch(trace: BatchTrace, dY, p):
    """Exact gradients of sum_t dY_t . y_t through the whole unrolled network."""
    if trace.cache is None:
        raise ValueError("backward pass needs a train-mode trace")
    Y = trace.outputs
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != Y.shape:
        raise ValueError(f"output gradient shape {dY.shape} != trace shape {Y.shape}")
    cache = trace.cache
    M, H = p.M, p.H
    X, Hs, Hd, D = cache["X"], cache["Hs"], cache["Hd"], cache["D"]
    if Hs.shape[-1] != H or X.shape[-1] != 2 * M:
        raise ValueError("trace was produced with different parameters")
    T, B = Y.shape[:2]

    dlogit = (dY * Y * (1.0 - Y)).reshape(T * B, M)
    grads = {"W_hy": dlogit.T @ Hd.reshape(T * B, H), "b_y": dlogit.sum(axis=0)}
    dHs = (dlogit @ p.W_hy).reshape(T, B, H)
    if D is not None:
        dHs *= D

    Hprev = np.concatenate([np.zeros((1, B, H)), Hs[:-1]]).reshape(T * B, H)
    Xf = X.reshape(T * B, 2 * M)
    if p.kind == "lstm":
        dZ = kernels.lstm_backward(np.ascontiguousarray(dHs), cache["G"], cache["C"],
                                   cache["TC"], cache["Wh"]).reshape(T * B, 4 * H)
        dW = np.concatenate([dZ.T @ Xf, dZ.T @ Hprev], axis=1)
        db = dZ.sum(axis=0)
        for k, gate in enumerate("fioc"):
            grads[f"W_{gate}"] = dW[k * H:(k + 1) * H]
            grads[f"b_{gate}"] = db[k * H:(k + 1) * H]
    else:
        dZ = kernels.rnn_backward(np.ascontiguousarray(dHs), Hs, cache["Wh"]).reshape(T * B, H)
        grads["W_hx"] = dZ.T @ Xf
        grads["W_hh"] = dZ.T @ Hprev
        grads["b_h"] = dZ.sum(axis=0)
    return type(p).from_tensors(grads)


# single-sequence interface

@dataclass
class PredictionTrace:
    """Per-step outputs (T, M) of one sequence; ``batch_trace`` is kept in train mode."""

    outputs: np.ndarray
    batch_trace: BatchTrace | None = None

    def __len__(self) -> int:
        return self.outputs.shape[0]


def forward_sequence(seq: InteractionSequence, p, cfg: ModelConfig, mode: str = "infer",
                     rng: np.random.Generator | None = None, dropout=None) -> PredictionTrace:
    if max(seq.questions) >= p.M:
        raise ValueError(f"question id {max(seq.questions)} >= M={p.M}")
    if dropout is not None:
        dropout = np.asarray(dropout, dtype=np.float64).reshape(len(seq), 1, p.H)
    bt = forward_batch(Batch.from_sequences([seq]), p, cfg, mode, rng, dropout)
    return PredictionTrace(bt.outputs[:, 0, :], bt if mode == "train" else None)


def backward_sequence(trace: PredictionTrace, dY, p, cfg: ModelConfig | None = None):
    if trace.batch_trace is None:
        raise ValueError("backward pass needs a train-mode trace")
    dY = np.asarray(dY, dtype=np.float64)
    if dY.shape != trace.outputs.shape:
        raise ValueError(f"output gradient shape {dY.shape} != trace shape {trace.outputs.shape}")
    return backward_batch(trace.batch_trace, dY[:, None, :], p)


def predict(p, cfg: ModelConfig, sequences, batch_size: int = 256) -> list[np.ndarray]:
    """Inference-mode outputs, one (T_i, M) array per sequence, in input order."""
    sequences = list(sequences)
    out = []
    for start in range(0, len(sequences), batch_size):
        chunk = sequences[start:start + batch_size]
        Y = forward_batch(Batch.from_sequences(chunk), p, cfg, "infer").outputs
        out.extend(Y[: len(s), b, :].copy() for b, s in enumerate(chunk))
    return out


# checkpoints

_MAGIC = b"DKTPLUS-CHECKPOINT 1\n"


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: Any
    config: ModelConfig
    meta: dict

    @property
    def num_skills(self) -> int:
        return self.params.M


def save_checkpoint(path, params, cfg: ModelConfig, meta: dict | None = None) -> None:
    """Write a self-describing, byte-deterministic checkpoint."""
    tensors = params.tensors()
    header = {
        "model": asdict(cfg),
        "num_skills": params.M,
        "hidden_size": params.H,
        "cell_kind": params.kind,
        "encoding": cfg.encoding,
        "meta": meta or {},
        "tensors": [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()],
    }
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n")
        for v in tensors.values():
            fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())


def load_checkpoint(path, num_skills: int | None = None, hidden_size: int | None = None) -> Checkpoint:
    """Read a checkpoint, refusing it when M or H differ from the expected values."""
    with open(path, "rb") as fh:
        if fh.readline() != _MAGIC:
            raise CheckpointError(f"{path}: not a dktplus checkpoint")
        header = json.loads(fh.readline())
        payload = fh.read()
    cfg = ModelConfig(**header["model"])
    M, H = header["num_skills"], header["hidden_size"]
    if num_skills is not None and num_skills != M:
        raise CheckpointError(f"checkpoint has M={M} but the data needs M={num_skills}")
    if hidden_size is not None and hidden_size != H:
        raise CheckpointError(f"checkpoint has H={H}, expected {hidden_size}")
    tensors, offset = {}, 0
    for spec in header["tensors"]:
        n = int(np.prod(spec["shape"], dtype=np.int64))
        chunk = payload[offset: offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError(f"{path}: truncated tensor {spec['name']}")
        tensors[spec["name"]] = np.frombuffer(chunk, dtype="<f8").reshape(spec["shape"]).astype(np.float64)
        offset += 8 * n
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes")
    params = param_class(header["cell_kind"]).from_tensors(tensors)
    return Checkpoint(params, cfg, header["meta"])
