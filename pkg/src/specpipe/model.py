"""Compact numpy classifier, hybrid loss, Adam and staged training.

The reference network is three stride-2 3x3 convolutions with ReLU
(channel widths 8/16/32), global average pooling, and two heads on the pooled
features: a linear classifier producing logits and a linear projection whose
output is L2-normalised into the contrastive embedding.  The ``linear`` kind
drops the convolutions and pools the input over time only, which gives a
linear probe on the time-averaged spectrum.

Class index 1 is Fail (the positive class), index 0 is Pass.

Everything is float64 and single-threaded so training is reproducible
bit-for-bit under a fixed seed.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateBatch,
    EmptyClass,
    EmptyDataset,
    IoFailure,
    NonFiniteGradient,
    ShapeMismatch,
)

FAIL = 1
PASS = 0
PARAM_GROUPS = ("conv", "embed", "head")
CHECKPOINT_MAGIC = b"SPCK"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    input_shape: tuple[int, int, int]  # (channels, freq rows, frames)
    kind: str = "cnn"
    widths: tuple[int, ...] = (8, 16, 32)
    embed_dim: int = 32
    n_classes: int = 2

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        object.__setattr__(self, "widths", tuple(int(v) for v in self.widths))
        if self.kind not in ("cnn", "linear"):
            raise ConfigError(f"model kind must be 'cnn' or 'linear', got {self.kind!r}")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError("input_shape must be (channels, rows, frames)")
        if self.n_classes < 2:
            raise ConfigError("need at least two classes")

    @property
    def feature_dim(self) -> int:
        if self.kind == "cnn":
            return self.widths[-1]
        return self.input_shape[0] * self.input_shape[1]


class ModelParams(dict):
    """Mapping of parameter name to array, plus the config and init seed."""

    def __init__(self, config: ModelConfig, seed: int, arrays=None):
        super().__init__(arrays or {})
        self.config = config
        self.seed = seed

    def copy(self) -> "ModelParams":
        return ModelParams(self.config, self.seed, {k: v.copy() for k, v in self.items()})

    def group(self, name: str) -> str:
        return name.split(".")[0].rstrip("0123456789")

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.values())


def _uniform(rng, shape, fan_in, gain):
    limit = np.sqrt(gain / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def _init_head(rng, config: ModelConfig, n_classes: int):
    d = config.feature_dim
    return _uniform(rng, (n_classes, d), d, 3.0), np.zeros(n_classes)


def init_params(config: ModelConfig, seed: int = 0) -> ModelParams:
    """He-style uniform init: limit ``sqrt(6 / fan_in)`` for convolutions,
    ``sqrt(3 / fan_in)`` for the dense layers; zero biases."""
    rng = np.random.default_rng(seed)
    p = ModelParams(config, seed)
    c_in = config.input_shape[0]
    if config.kind == "cnn":
        for i, c_out in enumerate(config.widths):
            p[f"conv{i}.w"] = _uniform(rng, (c_in, 3, 3, c_out), c_in * 9, 6.0)
            p[f"conv{i}.b"] = np.zeros(c_out)
            c_in = c_out
    d = config.feature_dim
    p["embed.w"] = _uniform(rng, (config.embed_dim, d), d, 3.0)
    p["embed.b"] = np.zeros(config.embed_dim)
    p["head.w"], p["head.b"] = _init_head(rng, config, config.n_classes)
    return p


def _conv_forward(x, w, b):
    """Stride-2, pad-1 3x3 convolution on NHWC input; returns (out, cols)."""
    B, H, W, C = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = np.lib.stride_tricks.sliding_window_view(xp, (3, 3), axis=(1, 2))[:, ::2, ::2]
    Ho, Wo = win.shape[1], win.shape[2]
    cols = win.reshape(B, Ho, Wo, C * 9)
    out = cols @ w.reshape(C * 9, -1) + b
    return out, cols


def _conv_backward(dout, cols, w, x_shape):
    B, H, W, C = x_shape
    c_out = w.shape[-1]
    Ho, Wo = dout.shape[1], dout.shape[2]
    dw = (cols.reshape(-1, C * 9).T @ dout.reshape(-1, c_out)).reshape(w.shape)
    db = dout.sum(axis=(0, 1, 2))
    dcols = (dout @ w.reshape(C * 9, c_out).T).reshape(B, Ho, Wo, C, 3, 3)
    dxp = np.zeros((B, H + 2, W + 2, C))
    for ki in range(3):
        for kj in range(3):
            dxp[:, ki : ki + 2 * Ho : 2, kj : kj + 2 * Wo : 2, :] += dcols[..., ki, kj]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def _as_batch(params: ModelParams, x) -> np.ndarray:
    data = getattr(x, "data", x)
    x = np.asarray(data, dtype=np.float64)
    shape = params.config.input_shape
    if x.shape == shape:
        x = x[None]
    if x.ndim != 4 or x.shape[1:] != shape:
        raise ShapeMismatch(f"expected input {shape} (or a batch of them), got {x.shape}")
    return x


def forward(params: ModelParams, x, cache: bool = False):
    """Logits (B, K) and unit-norm embeddings (B, E) for input (B, C, F, T)."""
    x = _as_batch(params, x)
    cfg = params.config
    tape = []
    if cfg.kind == "cnn":
        a = np.ascontiguousarray(np.moveaxis(x, 1, -1))  # NHWC
        for i in range(len(cfg.widths)):
            z, cols = _conv_forward(a, params[f"conv{i}.w"], params[f"conv{i}.b"])
            tape.append((a.shape, cols, z))
            a = np.maximum(z, 0.0)
        h = a.mean(axis=(1, 2))
        pooled_shape = a.shape
    else:
        h = x.mean(axis=3).reshape(len(x), -1)
        pooled_shape = x.shape
    logits = h @ params["head.w"].T + params["head.b"]
    u = h @ params["embed.w"].T + params["embed.b"]
    norm = np.sqrt(np.sum(u * u, axis=1, keepdims=True) + 1e-12)
    emb = u / norm
    if cache:
        return logits, emb, {"tape": tape, "h": h, "emb": emb, "norm": norm, "pooled_shape": pooled_shape}
    return logits, emb


def backward(params: ModelParams, cache: dict, dlogits: np.ndarray, demb: np.ndarray) -> dict:
    """Parameter gradients from upstream gradients on logits and embeddings."""
    cfg = params.config
    h, emb, norm = cache["h"], cache["emb"], cache["norm"]
    g = {}
    g["head.w"] = dlogits.T @ h
    g["head.b"] = dlogits.sum(axis=0)
    du = (demb - emb * np.sum(emb * demb, axis=1, keepdims=True)) / norm
    g["embed.w"] = du.T @ h
    g["embed.b"] = du.sum(axis=0)
    if cfg.kind == "cnn":
        dh = dlogits @ params["head.w"] + du @ params["embed.w"]
        B, Hh, Wh, D = cache["pooled_shape"]
        da = np.broadcast_to(dh[:, None, None, :] / (Hh * Wh), (B, Hh, Wh, D))
        for i in reversed(range(len(cfg.widths))):
            x_shape, cols, z = cache["tape"][i]
            dz = da * (z > 0)
            da, g[f"conv{i}.w"], g[f"conv{i}.b"] = _conv_backward(dz, cols, params[f"conv{i}.w"], x_shape)
    return g


def softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def class_weights(counts: dict) -> dict:
    """Inverse-frequency weights ``N / (n_classes * N_c)``."""
    if not counts:
        raise EmptyClass("no classes given")
    for k, n in counts.items():
        if n <= 0:
            raise EmptyClass(f"class {k!r} has no examples")
    total = sum(counts.values())
    return {k: total / (len(counts) * n) for k, n in counts.items()}


def weight_vector(labels, n_classes: int, mode: str = "inverse") -> np.ndarray:
    if mode == "none":
        return np.ones(n_classes)
    if mode != "inverse":
        raise ConfigError(f"class weighting must be 'inverse' or 'none', got {mode!r}")
    counts = np.bincount(np.asarray(labels, dtype=int), minlength=n_classes)
    w = class_weights({c: int(counts[c]) for c in range(n_classes)})
    return np.array([w[c] for c in range(n_classes)])


def hybrid_loss(logits, embeddings, labels, weights, lam: float = 0.5, margin: float = 1.0, grad: bool = False):
    """``lam * weighted CE + (1 - lam) * pairwise margin contrastive``.

    Weighted CE is normalised by the summed weights of the batch.  The
    contrastive term averages over unordered pairs: ``d^2`` for same-label
    pairs and ``max(0, margin - d)^2`` otherwise.  With ``grad=True`` returns
    ``(loss, dlogits, dembeddings)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    emb = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=int)
    w = np.asarray(weights, dtype=np.float64)
    if not 0.0 <= lam <= 1.0:
        raise ConfigError("lambda must lie in [0, 1]")
    if margin <= 0:
        raise ConfigError("margin must be positive")
    B = len(y)
    if B < 1 or (B < 2 and lam < 1.0):
        raise DegenerateBatch(f"batch of {B} cannot form contrastive pairs")

    wy = w[y]
    logp = log_softmax(logits)
    nll = -logp[np.arange(B), y]
    ce = float(np.sum(wy * nll) / np.sum(wy))
    loss = lam * ce
    dlogits = demb = None
    if grad:
        p = np.exp(logp)
        p[np.arange(B), y] -= 1.0
        dlogits = lam * wy[:, None] * p / np.sum(wy)
        demb = np.zeros_like(emb)

    if lam < 1.0:
        iu, ju = np.triu_indices(B, k=1)
        diff = emb[iu] - emb[ju]
        d = np.sqrt(np.sum(diff * diff, axis=1))
        same = y[iu] == y[ju]
        hinge = np.maximum(0.0, margin - d)
        terms = np.where(same, d * d, hinge * hinge)
        n_pairs = len(iu)
        con = float(terms.mean())
        loss += (1.0 - lam) * con
        if grad:
            safe = np.where(d > 0, d, 1.0)
            coef = np.where(same, 2.0, np.where(d > 0, -2.0 * hinge / safe, 0.0))
            gpair = (1.0 - lam) / n_pairs * coef[:, None] * diff
            np.add.at(demb, iu, gpair)
            np.add.at(demb, ju, -gpair)
    if grad:
        return loss, dlogits, demb
    return loss


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, frozen=()):
    """One bias-corrected Adam update, in place; returns ``(params, state)``.

    Parameters whose name is in ``frozen`` keep their value and moments.
    """
    for k, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for k, g in grads.items():
        if k in frozen:
            continue
        if k not in state.m:
            state.m[k] = np.zeros_like(params[k])
            state.v[k] = np.zeros_like(params[k])
        if np.shape(g) != np.shape(params[k]):
            raise ShapeMismatch(f"gradient shape {np.shape(g)} != parameter shape {np.shape(params[k])} for {k}")
        m = state.m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v = state.v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        params[k] -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def loss_and_grads(params: ModelParams, x, y, weights, lam: float, margin: float):
    logits, emb, cache = forward(params, x, cache=True)
    loss, dlogits, demb = hybrid_loss(logits, emb, y, weights, lam, margin, grad=True)
    return loss, backward(params, cache, dlogits, demb)


def predict_proba(params: ModelParams, x) -> np.ndarray:
    """Class probabilities, shape (B, K)."""
    logits, _ = forward(params, x)
    return softmax(logits)


def predict_clip(params: ModelParams, x) -> float | np.ndarray:
    """Probability of Fail for one input, or a vector for a batch."""
    p = predict_proba(params, x)[:, FAIL]
    data = getattr(x, "data", x)
    return float(p[0]) if np.ndim(data) == 3 else p


@dataclass
class Dataset:
    dataset_id: str
    x: np.ndarray  # (N, C, F, T)
    y: np.ndarray  # (N,) int class indices
    n_classes: int = 2

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=int)
        if len(self.x) == 0:
            raise EmptyDataset(f"dataset {self.dataset_id!r} is empty")
        if len(self.x) != len(self.y):
            raise ShapeMismatch("inputs and labels differ in length")


@dataclass(frozen=True)
class StageConfig:
    dataset_id: str
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 16
    lam: float = 0.5
    margin: float = 1.0
    freeze: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "freeze", tuple(self.freeze))
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError("lam must lie in [0, 1]")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError("batch_size and learning_rate must be positive")
        bad = [g for g in self.freeze if g not in PARAM_GROUPS]
        if bad:
            raise ConfigError(f"unknown parameter group(s) in freeze: {bad}; choose from {PARAM_GROUPS}")


@dataclass(frozen=True)
class TrainConfig:
    stages: tuple[StageConfig, ...]
    seed: int = 0
    class_weighting: str = "inverse"

    def __post_init__(self):
        stages = tuple(s if isinstance(s, StageConfig) else StageConfig(**s) for s in self.stages)
        object.__setattr__(self, "stages", stages)
        if not stages:
            raise ConfigError("at least one training stage is required")
        if self.class_weighting not in ("inverse", "none"):
            raise ConfigError("class_weighting must be 'inverse' or 'none'")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StageLog:
    dataset_id: str
    initial_loss: float
    epoch_losses: list[float] = field(default_factory=list)
    final_loss: float = float("nan")
    train_accuracy: float = float("nan")
    val_loss: float | None = None
    val_accuracy: float | None = None
    head_reset: bool = False


@dataclass
class TrainLog:
    stages: list[StageLog] = field(default_factory=list)
    stage_params: list = field(default_factory=list, repr=False)

    @property
    def losses(self) -> list[float]:
        return [l for s in self.stages for l in s.epoch_losses]

    def to_dict(self) -> dict:
        return {"stages": [asdict(s) for s in self.stages]}


def _evaluate(params, data: Dataset, weights, lam, margin, chunk: int = 256):
    """Full-dataset loss (one batch) and accuracy."""
    logits, emb = [], []
    for s in range(0, len(data.x), chunk):
        lo, em = forward(params, data.x[s : s + chunk])
        logits.append(lo)
        emb.append(em)
    logits, emb = np.concatenate(logits), np.concatenate(emb)
    lam_eff = lam if len(data.y) >= 2 else 1.0
    loss = hybrid_loss(logits, emb, data.y, weights, lam_eff, margin)
    acc = float(np.mean(np.argmax(logits, axis=1) == data.y))
    return float(loss), acc


def train(datasets, cfg: TrainConfig, params: ModelParams | None = None, model_config: ModelConfig | None = None,
          validation: dict | None = None, progress=None):
    """Run the training stages in order, carrying parameters across stages.

    ``datasets`` maps dataset_id to :class:`Dataset` (a single Dataset or a
    list of them is also accepted).  When a stage's dataset
    has a different number of classes than the current head, the head is
    re-initialised from ``(seed, stage index)``.  Each stage starts a fresh
    Adam state.  ``validation`` optionally maps dataset_id to a held-out
    Dataset evaluated at the end of that stage.
    """
    if isinstance(datasets, Dataset):
        datasets = [datasets]
    if not isinstance(datasets, dict):
        datasets = {d.dataset_id: d for d in datasets}
    for st in cfg.stages:
        if st.dataset_id not in datasets:
            raise EmptyDataset(f"stage dataset {st.dataset_id!r} not provided")
    first = datasets[cfg.stages[0].dataset_id]
    if params is None:
        if model_config is None:
            model_config = ModelConfig(first.x.shape[1:], n_classes=first.n_classes)
        params = init_params(model_config, cfg.seed)
    log = TrainLog()
    for si, st in enumerate(cfg.stages):
        data = datasets[st.dataset_id]
        if data.x.shape[1:] != params.config.input_shape:
            raise ShapeMismatch(f"stage {si}: inputs {data.x.shape[1:]} vs model {params.config.input_shape}")
        reset = params["head.w"].shape[0] != data.n_classes
        if reset:
            rng = np.random.default_rng([cfg.seed, si, 1])
            params["head.w"], params["head.b"] = _init_head(rng, params.config, data.n_classes)
        log.stage_params.append(params.copy())
        weights = weight_vector(data.y, data.n_classes, cfg.class_weighting)
        frozen = {k for k in params if params.group(k) in st.freeze}
        init_loss, _ = _evaluate(params, data, weights, st.lam, st.margin)
        slog = StageLog(st.dataset_id, init_loss, head_reset=reset)
        state = AdamState()
        rng = np.random.default_rng([cfg.seed, si])
        n = len(data.y)
        n_batches = max(1, -(-n // st.batch_size))
        for epoch in range(st.epochs):
            order = rng.permutation(n)
            losses = []
            for idx in np.array_split(order, n_batches):
                loss, grads = loss_and_grads(params, data.x[idx], data.y[idx], weights, st.lam, st.margin)
                adam_step(params, grads, state, st.learning_rate, frozen)
                if not params.is_finite():
                    raise NonFiniteGradient(f"non-finite parameters after step {state.t}")
                losses.append(loss)
            slog.epoch_losses.append(float(np.mean(losses)))
            if progress is not None:
                progress(si, epoch, slog.epoch_losses[-1])
        slog.final_loss, slog.train_accuracy = _evaluate(params, data, weights, st.lam, st.margin)
        if validation and st.dataset_id in validation:
            val = validation[st.dataset_id]
            vw = weight_vector(val.y, val.n_classes, cfg.class_weighting) if len(set(val.y)) == val.n_classes else np.ones(val.n_classes)
            slog.val_loss, slog.val_accuracy = _evaluate(params, val, vw, st.lam, st.margin)
        log.stages.append(slog)
    return params, log


def config_hash(obj) -> str:
    """Stable short hash of a JSON-serialisable object."""
    text = json.dumps(obj, sort_keys=True, default=str, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def save_checkpoint(params: ModelParams, path, metadata: dict | None = None) -> None:
    """Binary checkpoint.

    Layout: ``b"SPCK"``, uint32 version, uint32 JSON length, UTF-8 JSON
    metadata (model config, seed, parameter names and shapes, caller fields),
    then each parameter as little-endian float32 in metadata order.
    """
    names = list(params)
    meta = dict(metadata or {})
    meta.update(
        {
            "model_config": asdict(params.config),
            "seed": params.seed,
            "params": [{"name": k, "shape": list(params[k].shape)} for k in names],
        }
    )
    blob = json.dumps(meta, sort_keys=True).encode()
    body = b"".join(np.ascontiguousarray(params[k], dtype="<f4").tobytes() for k in names)
    try:
        Path(path).write_bytes(CHECKPOINT_MAGIC + struct.pack("<II", CHECKPOINT_VERSION, len(blob)) + blob + body)
    except OSError as exc:
        raise IoFailure(f"cannot write checkpoint {path}: {exc}") from exc


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    data = Path(path).read_bytes()
    if data[:4] != CHECKPOINT_MAGIC:
        raise ConfigError(f"{path} is not a checkpoint")
    version, n = struct.unpack("<II", data[4:12])
    if version != CHECKPOINT_VERSION:
        raise ConfigError(f"unsupported checkpoint version {version}")
    meta = json.loads(data[12 : 12 + n])
    mc = meta["model_config"]
    config = ModelConfig(tuple(mc["input_shape"]), mc["kind"], tuple(mc["widths"]), mc["embed_dim"], mc["n_classes"])
    params = ModelParams(config, meta["seed"])
    pos = 12 + n
    for entry in meta["params"]:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
        params[entry["name"]] = arr.reshape(entry["shape"])
        pos += 4 * count
    return params, meta
