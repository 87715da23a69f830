"""Bidirectional tanh-recurrent acoustic model trained with CTC and Adam.

Architecture: linear input projection (F -> H), ``L`` bidirectional Elman
layers (each direction H units; layer inputs are H wide for the first layer
and 2H for the rest), then a linear output projection (2H -> V+1) followed by
a row-wise log-softmax. Gradients are computed by hand with
backpropagation through time.
"""

from __future__ import annotations

import hashlib
import logging
import math
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from .ctc import (ctc_loss_from_scores, ctc_validity, greedy_decode, log_softmax,
                  min_alignment_length)
from .errors import ContractViolation, CorruptFileError, DataError, InfeasibleTargetError

logger = logging.getLogger(__name__)

MODEL_MAGIC = b"CTCM"
MODEL_VERSION = 1
MAX_LAYERS = 6
INIT_SCALE = 0.08


class ModelParams:
    """Named parameter tensors in a fixed order.

    Order: ``in.W (F,H)``, ``in.b (H)``, then for each layer ``l`` and
    direction ``d`` in (fwd, bwd): ``l.d.W (D,H)``, ``l.d.U (H,H)``,
    ``l.d.b (H)``, and finally ``out.W (2H,C)``, ``out.b (C)``.
    """

    def __init__(self, num_features: int, hidden: int, layers: int, num_classes: int,
                 tensors: Optional[Dict[str, np.ndarray]] = None):
        if not 1 <= layers <= MAX_LAYERS:
            raise ValueError(f"layers must be in [1, {MAX_LAYERS}], got {layers}")
        if hidden < 1 or num_features < 1 or num_classes < 2:
            raise ValueError("hidden, num_features must be >= 1 and num_classes >= 2")
        self.F, self.H, self.L, self.C = num_features, hidden, layers, num_classes
        shapes = self.shapes()
        if tensors is None:
            tensors = {name: np.zeros(shape) for name, shape in shapes.items()}
        self.tensors: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for name, shape in shapes.items():
            arr = np.asarray(tensors[name], dtype=np.float64)
            if arr.shape != shape:
                raise ContractViolation(f"{name} has shape {arr.shape}, expected {shape}")
            self.tensors[name] = arr

    def shapes(self) -> "OrderedDict[str, tuple]":
        F, H, C = self.F, self.H, self.C
        shapes = OrderedDict([("in.W", (F, H)), ("in.b", (H,))])
        for layer in range(self.L):
            width = H if layer == 0 else 2 * H
            for d in ("fwd", "bwd"):
                shapes[f"{layer}.{d}.W"] = (width, H)
                shapes[f"{layer}.{d}.U"] = (H, H)
                shapes[f"{layer}.{d}.b"] = (H,)
        shapes["out.W"] = (2 * H, C)
        shapes["out.b"] = (C,)
        return shapes

    @classmethod
    def init(cls, num_features, hidden, layers, num_classes, seed=0, scale=INIT_SCALE):
        rng = np.random.default_rng(seed)
        params = cls(num_features, hidden, layers, num_classes)
        for name, arr in params.tensors.items():
            arr[...] = rng.uniform(-scale, scale, size=arr.shape)
        return params

    def zeros_like(self) -> "ModelParams":
        return ModelParams(self.F, self.H, self.L, self.C)

    def copy(self) -> "ModelParams":
        return ModelParams(self.F, self.H, self.L, self.C,
                           {k: v.copy() for k, v in self.tensors.items()})

    def __getitem__(self, name):
        return self.tensors[name]

    def __iter__(self):
        return iter(self.tensors.items())

    def num_parameters(self) -> int:
        return sum(v.size for v in self.tensors.values())


# -- forward / backward ------------------------------------------------------

def _run_direction(x, W, U, b, reverse):
    T, H = x.shape[0], U.shape[0]
    pre = x @ W + b
    h = np.zeros((T, H))
    prev = np.zeros(H)
    steps = range(T - 1, -1, -1) if reverse else range(T)
    for t in steps:
        prev = np.tanh(pre[t] + prev @ U)
        h[t] = prev
    return h


def _backprop_direction(x, h, W, U, dh, reverse):
    T, H = h.shape
    da = np.zeros((T, H))
    carry = np.zeros(H)
    steps = range(T) if reverse else range(T - 1, -1, -1)
    for t in steps:
        g = (dh[t] + carry) * (1.0 - h[t] ** 2)
        da[t] = g
        carry = g @ U.T
    # state feeding step t: h[t-1] going forward, h[t+1] going backward
    h_prev = np.zeros_like(h)
    if reverse:
        h_prev[:-1] = h[1:]
    else:
        h_prev[1:] = h[:-1]
    return x.T @ da, h_prev.T @ da, da.sum(axis=0), da @ W.T


def forward(params: ModelParams, frames: np.ndarray, return_cache: bool = False):
    """Per-frame log-probabilities, shape ``(T, V+1)``.

    ``frames`` must already be time-downsampled. With ``return_cache`` the
    activations needed by :func:`backward` are returned as well.
    """
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 2 or frames.shape[1] != params.F:
        raise ContractViolation(
            f"features have shape {frames.shape}, model expects (T, {params.F})"
        )
    x = frames @ params["in.W"] + params["in.b"]
    inputs, states = [x], []
    for layer in range(params.L):
        hf = _run_direction(x, params[f"{layer}.fwd.W"], params[f"{layer}.fwd.U"],
                            params[f"{layer}.fwd.b"], reverse=False)
        hb = _run_direction(x, params[f"{layer}.bwd.W"], params[f"{layer}.bwd.U"],
                            params[f"{layer}.bwd.b"], reverse=True)
        states.append((hf, hb))
        x = np.concatenate([hf, hb], axis=1)
        inputs.append(x)
    scores = x @ params["out.W"] + params["out.b"]
    log_probs = log_softmax(scores)
    if return_cache:
        return log_probs, {"frames": frames, "inputs": inputs, "states": states, "scores": scores}
    return log_probs


def backward(params: ModelParams, cache: dict, dscores: np.ndarray) -> ModelParams:
    """Gradients of a scalar loss w.r.t. every parameter, given d loss / d scores."""
    grads = params.zeros_like()
    g = grads.tensors
    top = cache["inputs"][-1]
    g["out.W"][...] = top.T @ dscores
    g["out.b"][...] = dscores.sum(axis=0)
    dx = dscores @ params["out.W"].T
    H = params.H
    for layer in range(params.L - 1, -1, -1):
        x = cache["inputs"][layer]
        hf, hb = cache["states"][layer]
        dx_in = np.zeros_like(x)
        for d, h, dh, reverse in (("fwd", hf, dx[:, :H], False), ("bwd", hb, dx[:, H:], True)):
            dW, dU, db, dxi = _backprop_direction(
                x, h, params[f"{layer}.{d}.W"], params[f"{layer}.{d}.U"], dh, reverse)
            g[f"{layer}.{d}.W"][...] = dW
            g[f"{layer}.{d}.U"][...] = dU
            g[f"{layer}.{d}.b"][...] = db
            dx_in += dxi
        dx = dx_in
    g["in.W"][...] = cache["frames"].T @ dx
    g["in.b"][...] = dx.sum(axis=0)
    return grads


def loss_and_grads(params: ModelParams, frames: np.ndarray, labels: Sequence[int]):
    """CTC loss of one utterance and its parameter gradients.

    Raises
    ------
    InfeasibleTargetError
        If the (downsampled) frame count cannot hold the label sequence.
    """
    if not ctc_validity(len(frames), labels):
        raise InfeasibleTargetError(len(frames), min_alignment_length(labels))
    _, cache = forward(params, frames, return_cache=True)
    loss, dscores = ctc_loss_from_scores(cache["scores"], labels)
    return loss, backward(params, cache, dscores)


def utterance_loss(params: ModelParams, frames: np.ndarray, labels: Sequence[int]) -> float:
    scores = forward(params, frames, return_cache=True)[1]["scores"]
    return ctc_loss_from_scores(scores, labels)[0]


# -- optimisation ------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    lr_reduce_factor: float = 0.2
    lr_patience_epochs: int = 3
    early_stop_patience: int = 8
    batch_size: int = 8
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 200
    seed: int = 0
    downsample_factor: int = 4
    grad_clip_norm: float = 5.0
    hidden: int = 16
    layers: int = 2
    restore_best: bool = True

    def __post_init__(self):
        if not 0 < self.lr_reduce_factor < 1:
            raise ValueError("lr_reduce_factor must be in (0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")


class Adam:
    def __init__(self, params: ModelParams, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.step_count = 0

    def step(self, params: ModelParams, grads: ModelParams, lr: float) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def clip_global_norm(grads: ModelParams, max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for _, g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for _, g in grads:
            g *= scale
    return norm


class PlateauSchedule:
    """Multiply the learning rate by ``factor`` after ``patience`` epochs without
    dev improvement, and signal a stop after ``stop_patience`` such epochs."""

    def __init__(self, lr, factor, patience, stop_patience):
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.stop_patience = stop_patience
        self.best = math.inf
        self.since_best = 0
        self._wait = 0

    def update(self, dev_loss: float) -> bool:
        """Record one epoch's dev loss; return True if it is a new best."""
        if dev_loss < self.best:
            self.best = dev_loss
            self.since_best = 0
            self._wait = 0
            return True
        self.since_best += 1
        self._wait += 1
        if self._wait >= self.patience:
            self.lr *= self.factor
            self._wait = 0
        return False

    @property
    def should_stop(self) -> bool:
        return self.since_best >= self.stop_patience


# -- training ----------------------------------------------------------------

@dataclass
class Example:
    clip_id: str
    frames: np.ndarray
    labels: List[int]
    text: str = ""


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_loss: float
    dev_cer: float
    lr: float


@dataclass
class TrainState:
    params: ModelParams
    optimizer: Adam
    config: TrainConfig
    epoch: int = 0
    best_dev_loss: float = math.inf
    epochs_since_improvement: int = 0
    lr: float = 0.0
    rng: np.random.Generator = None
    history: List[EpochRecord] = field(default_factory=list)
    skipped: List[str] = field(default_factory=list)


def feasible(examples: Sequence[Example]):
    ok, bad = [], []
    for ex in examples:
        (ok if ctc_validity(len(ex.frames), ex.labels) else bad).append(ex)
    return ok, bad


def evaluate(params: ModelParams, examples: Sequence[Example],
             detokenize: Optional[Callable[[List[int]], str]] = None):
    """Mean CTC loss over feasible examples and pooled greedy-decoding CER."""
    from .metrics import EditCounts, char_counts

    losses = []
    counts = EditCounts()
    for ex in examples:
        log_probs, cache = forward(params, ex.frames, return_cache=True)
        if ctc_validity(len(ex.frames), ex.labels):
            losses.append(ctc_loss_from_scores(cache["scores"], ex.labels)[0])
        if detokenize is not None and ex.text:
            counts = counts + char_counts(ex.text, detokenize(greedy_decode(log_probs)))
    mean_loss = float(np.mean(losses)) if losses else math.inf
    cer = counts.rate() if counts.ref_len else math.nan
    return mean_loss, cer


def train(train_set: Sequence[Example], dev_set: Sequence[Example], num_classes: int,
          config: TrainConfig | None = None, detokenize=None, params: ModelParams | None = None,
          on_epoch: Optional[Callable[[EpochRecord], None]] = None) -> TrainState:
    """Train with Adam under CTC loss, plateau LR decay and early stopping.

    Each epoch shuffles the training set, processes it in batches of
    ``config.batch_size`` (averaging per-utterance gradients in a fixed
    order), clips the global gradient norm and takes one Adam step per
    batch. Dev loss drives the schedule; dev CER is logged alongside.

    Raises
    ------
    DataError
        If the train or dev set is empty or no training pair is feasible.
    """
    config = config or TrainConfig()
    if not train_set or not dev_set:
        raise DataError("training needs non-empty train and dev sets")
    train_ok, train_bad = feasible(train_set)
    if not train_ok:
        raise DataError(
            "every training pair is infeasible: input features smaller than the "
            "length of output labels; reduce downsample_factor"
        )
    for ex in train_bad:
        logger.warning("skipping infeasible training pair %s (%d frames, %d labels)",
                       ex.clip_id, len(ex.frames), len(ex.labels))
    num_features = train_ok[0].frames.shape[1]
    if params is None:
        params = ModelParams.init(num_features, config.hidden, config.layers, num_classes,
                                  seed=config.seed)
    optimizer = Adam(params, config.adam_beta1, config.adam_beta2, config.adam_eps)
    schedule = PlateauSchedule(config.learning_rate, config.lr_reduce_factor,
                               config.lr_patience_epochs, config.early_stop_patience)
    state = TrainState(params, optimizer, config, lr=config.learning_rate,
                       rng=np.random.default_rng(config.seed),
                       skipped=[ex.clip_id for ex in train_bad])
    best_params = params.copy()

    for epoch in range(1, config.max_epochs + 1):
        lr = schedule.lr
        order = state.rng.permutation(len(train_ok))
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = [train_ok[i] for i in order[start:start + config.batch_size]]
            batch.sort(key=lambda ex: (len(ex.frames), ex.clip_id))
            total = params.zeros_like()
            for ex in batch:
                loss, grads = loss_and_grads(params, ex.frames, ex.labels)
                epoch_losses.append(loss)
                for name, g in grads:
                    total.tensors[name] += g
            for _, g in total:
                g /= len(batch)
            clip_global_norm(total, config.grad_clip_norm)
            optimizer.step(params, total, lr)

        dev_loss, dev_cer = evaluate(params, dev_set, detokenize)
        record = EpochRecord(epoch, float(np.mean(epoch_losses)), dev_loss, dev_cer, lr)
        state.history.append(record)
        state.epoch = epoch
        if schedule.update(dev_loss):
            best_params = params.copy()
        state.best_dev_loss = schedule.best
        state.epochs_since_improvement = schedule.since_best
        state.lr = schedule.lr
        logger.info("epoch %d train %.4f dev %.4f cer %.4f lr %.2e",
                    epoch, record.train_loss, dev_loss, dev_cer, lr)
        if on_epoch is not None:
            on_epoch(record)
        if schedule.should_stop:
            logger.info("early stop after %d epochs without improvement", schedule.since_best)
            break

    if config.restore_best:
        state.params = best_params
    return state


# -- persistence -------------------------------------------------------------

def encode_model(params: ModelParams, tokenizer: str, vocab_hash: str) -> bytes:
    tag = tokenizer.encode("utf-8")
    digest = bytes.fromhex(vocab_hash)
    if len(digest) != 32:
        raise ValueError("vocab_hash must be a hex sha256 digest")
    parts = [
        MODEL_MAGIC,
        struct.pack("<B", MODEL_VERSION),
        struct.pack("<IIII", params.H, params.L, params.F, params.C - 1),
        struct.pack("<H", len(tag)), tag,
        digest,
    ]
    parts += [arr.astype("<f8").tobytes() for _, arr in params]
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


@dataclass
class LoadedModel:
    params: ModelParams
    tokenizer: str
    vocab_hash: str


def decode_model(data: bytes, vocab_hash: str | None = None) -> LoadedModel:
    if len(data) < 4 + 1 + 16 + 2 + 32 + 32 or data[:4] != MODEL_MAGIC:
        raise CorruptFileError("not a model file (bad magic)")
    body, checksum = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CorruptFileError("model file checksum mismatch (file tampered or truncated)")
    (version,) = struct.unpack_from("<B", body, 4)
    if version != MODEL_VERSION:
        raise CorruptFileError(f"unsupported model version {version}")
    H, L, F, V = struct.unpack_from("<IIII", body, 5)
    (tag_len,) = struct.unpack_from("<H", body, 21)
    pos = 23
    tokenizer = body[pos:pos + tag_len].decode("utf-8")
    pos += tag_len
    stored_hash = body[pos:pos + 32].hex()
    pos += 32
    skeleton = ModelParams(F, H, L, V + 1)
    tensors = {}
    for name, shape in skeleton.shapes().items():
        n = int(np.prod(shape))
        chunk = body[pos:pos + 8 * n]
        if len(chunk) != 8 * n:
            raise CorruptFileError(f"model file truncated in tensor {name}")
        tensors[name] = np.frombuffer(chunk, dtype="<f8").reshape(shape).copy()
        pos += 8 * n
    if pos != len(body):
        raise CorruptFileError("trailing bytes after model tensors")
    if vocab_hash is not None and vocab_hash != stored_hash:
        raise ContractViolation("vocabulary does not match the one the model was trained with")
    return LoadedModel(ModelParams(F, H, L, V + 1, tensors), tokenizer, stored_hash)


def save_model(path, params: ModelParams, tokenizer: str, vocab_hash: str) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_model(params, tokenizer, vocab_hash))


def load_model(path, vocab_hash: str | None = None) -> LoadedModel:
    """Load a model file, optionally refusing it if ``vocab_hash`` differs from the stored one."""
    with open(path, "rb") as fh:
        return decode_model(fh.read(), vocab_hash)
