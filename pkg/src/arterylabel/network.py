"""Feed-forward classifier over segment features, trained with focal loss.

Architecture (fixed widths): five affine layers 14->50->100->75->50->13,
batch normalization and ReLU after each layer except the output, one 20%
dropout block after the last hidden activation, softmax at the output.
18,438 learnable parameters.

Training is plain mini-batch Adam; every source of randomness (weight
init, epoch shuffling, dropout masks) flows from one seeded generator,
so a run is reproducible bit for bit. The numeric heavy lifting lives in
``arterylabel.kernels`` (compiled core or numpy fallback).
"""

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .errors import (
    ModelFormatError,
    ShapeError,
    TrainingDivergedError,
)
from .features import N_FEATURES, stack_features
from .labels import N_CLASSES, to_index

log = logging.getLogger(__name__)

TABLE1_DIMS = (14, 50, 100, 75, 50, 13)

MODEL_MAGIC = b"ALMLPV01"
MODEL_FORMAT_VERSION = 1

PROB_FLOOR = 1e-12


@dataclass
class TrainConfig:
    epochs: int = 3000
    batch_size: int = 64
    focal_gamma: float = 2.0
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dims: tuple = TABLE1_DIMS
    dropout_rate: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1

    def validate(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.focal_gamma < 0:
            raise ValueError("focal gamma must be >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning rate must be >= 0")
        if not 0 <= self.dropout_rate < 1:
            raise ValueError("dropout rate must be in [0, 1)")
        if len(self.dims) < 2:
            raise ValueError("need at least input and output dims")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dims"] = list(self.dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "dims" in d:
            d["dims"] = tuple(d["dims"])
        return cls(**d).validate()


@dataclass
class Mlp:
    """Model parameters, batch-norm running statistics, and mode flag."""

    dims: tuple
    weights: list
    biases: list
    bn_scale: list
    bn_shift: list
    bn_mean: list
    bn_var: list
    dropout_rate: float = 0.2
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    mode: str = "eval"
    train_config: dict | None = None
    loss_history: list = field(default_factory=list, repr=False)

    @classmethod
    def initialize(cls, rng, dims=TABLE1_DIMS, dropout_rate=0.2,
                   bn_eps=1e-5, bn_momentum=0.1) -> "Mlp":
        """He-uniform affine weights, zero biases, identity batch norm."""
        dims = tuple(int(d) for d in dims)
        weights, biases = [], []
        for d_in, d_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / d_in)
            weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
            biases.append(np.zeros(d_out))
        hidden = dims[1:-1]
        return cls(
            dims=dims,
            weights=weights,
            biases=biases,
            bn_scale=[np.ones(d) for d in hidden],
            bn_shift=[np.zeros(d) for d in hidden],
            bn_mean=[np.zeros(d) for d in hidden],
            bn_var=[np.ones(d) for d in hidden],
            dropout_rate=dropout_rate,
            bn_eps=bn_eps,
            bn_momentum=bn_momentum,
            mode="train",
        )

    def train_mode(self) -> "Mlp":
        self.mode = "train"
        return self

    def eval_mode(self) -> "Mlp":
        self.mode = "eval"
        return self

    @property
    def n_in(self) -> int:
        return self.dims[0]

    @property
    def n_out(self) -> int:
        return self.dims[-1]


def _learnables(model: Mlp) -> list:
    """Learnable tensors in the canonical (and serialized) order."""
    out = []
    n_hidden = len(model.dims) - 2
    for i in range(n_hidden):
        out += [model.weights[i], model.biases[i], model.bn_scale[i], model.bn_shift[i]]
    out += [model.weights[-1], model.biases[-1]]
    return out


def _learnable_names(model: Mlp) -> list:
    names = []
    n_hidden = len(model.dims) - 2
    for i in range(n_hidden):
        names += [f"w{i}", f"b{i}", f"bn_scale{i}", f"bn_shift{i}"]
    names += [f"w{n_hidden}", f"b{n_hidden}"]
    return names


def _running_stats(model: Mlp) -> list:
    out = []
    for i in range(len(model.dims) - 2):
        out += [model.bn_mean[i], model.bn_var[i]]
    return out


def _grads_in_order(model, d_ws, d_bs, d_gammas, d_betas) -> list:
    out = []
    for i in range(len(model.dims) - 2):
        out += [d_ws[i], d_bs[i], d_gammas[i], d_betas[i]]
    out += [d_ws[-1], d_bs[-1]]
    return out


def param_count(model: Mlp) -> int:
    """Learnable parameters only; batch-norm running stats excluded."""
    return int(sum(arr.size for arr in _learnables(model)))


def param_nbytes(model: Mlp) -> int:
    """Size of the serialized 32-bit weight payload."""
    return 4 * param_count(model)


def _as_batch(model, batch) -> np.ndarray:
    x = stack_features(batch) if not isinstance(batch, np.ndarray) else np.asarray(
        batch, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.ndim != 2 or x.shape[1] != model.n_in:
        raise ShapeError(f"expected (n, {model.n_in}) inputs, got shape {x.shape}")
    return np.ascontiguousarray(x)


def _dropout_mask(model, n, rng):
    if model.dropout_rate <= 0.0:
        return None
    if rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")
    keep = rng.random((n, model.dims[-2])) >= model.dropout_rate
    return keep / (1.0 - model.dropout_rate)


def _update_running_stats(model, means, variances, n):
    m = model.bn_momentum
    correction = n / (n - 1.0)
    for i in range(len(model.bn_mean)):
        model.bn_mean[i] = (1.0 - m) * model.bn_mean[i] + m * means[i]
        model.bn_var[i] = (1.0 - m) * model.bn_var[i] + m * (variances[i] * correction)


def forward(model: Mlp, batch, rng=None, backend=None) -> np.ndarray:
    """Class probabilities, one row per input.

    Eval mode is a pure function (running statistics, no dropout). Train
    mode needs a batch of >=2 for batch statistics, draws a dropout mask
    from ``rng``, and updates the running statistics.
    """
    be = backend or kernels.active
    x = _as_batch(model, batch)
    if model.mode == "eval":
        return be.forward_eval(model.weights, model.biases, model.bn_scale,
                               model.bn_shift, model.bn_mean, model.bn_var,
                               x, model.bn_eps)
    if len(x) < 2:
        raise ShapeError("train-mode forward needs a batch of >= 2 for batch norm")
    mask = _dropout_mask(model, len(x), rng)
    probs, means, variances = be.forward_train(
        model.weights, model.biases, model.bn_scale, model.bn_shift,
        x, mask, model.bn_eps)
    _update_running_stats(model, means, variances, len(x))
    return probs


def predict(model: Mlp, feature, backend=None) -> np.ndarray:
    """Probability vector for a single feature vector (eval mode only)."""
    if model.mode != "eval":
        raise ValueError("predict requires eval mode")
    return forward(model, [feature] if np.ndim(feature) <= 1 else feature,
                   backend=backend)[0]


def predict_label(model: Mlp, feature, backend=None) -> int:
    """Raw predicted class index; argmax ties break to the lowest index."""
    return int(np.argmax(predict(model, feature, backend=backend)))


def focal_loss(probs, targets, gamma: float) -> float:
    """Mean of -(1 - p_t)^gamma * ln(p_t) with p_t floored at 1e-12.

    gamma = 0 reduces to plain cross-entropy.
    """
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim == 1:
        p = p.reshape(1, -1)
    if isinstance(targets, (str, int, np.integer)):
        targets = [targets]
    idx = np.asarray([to_index(t) for t in targets], dtype=np.int64)
    if len(p) == 0 or len(idx) == 0:
        raise ValueError("focal loss of an empty batch")
    if len(p) != len(idx):
        raise ShapeError(f"{len(p)} probability rows vs {len(idx)} targets")
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    p_t = p[np.arange(len(idx)), idx]
    return float(np.mean(-((1.0 - p_t) ** gamma) * np.log(np.maximum(p_t, PROB_FLOOR))))


def loss_and_gradients(model: Mlp, batch, targets, gamma: float,
                       dropout_mask=None, backend=None):
    """Focal loss and its gradients w.r.t. every learnable tensor.

    Train-mode pass (batch statistics); ``dropout_mask=None`` keeps
    dropout disabled. Returns (loss, grads, means, variances) with grads
    in the canonical learnable order.
    """
    be = backend or kernels.active
    x = _as_batch(model, batch)
    if len(x) < 2:
        raise ShapeError("batch statistics need >= 2 examples")
    idx = np.asarray([to_index(t) for t in targets], dtype=np.int64)
    loss, d_ws, d_bs, d_gammas, d_betas, means, variances, _ = be.loss_and_grads(
        model.weights, model.biases, model.bn_scale, model.bn_shift,
        x, idx, gamma, dropout_mask, model.bn_eps)
    grads = _grads_in_order(model, d_ws, d_bs, d_gammas, d_betas)
    return loss, grads, means, variances


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def for_model(cls, model: Mlp) -> "AdamState":
        params = _learnables(model)
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def train_step(model: Mlp, batch, targets, config: TrainConfig,
               state: AdamState | None = None, rng=None, backend=None):
    """One optimization step; mutates the model in place.

    Returns (model, loss). Gradients come from backpropagation through
    the full train-mode stack; batch-norm running statistics are updated
    with the configured momentum; parameters move by one Adam step.
    """
    if model.mode != "train":
        raise ValueError("train_step requires train mode")
    if state is None:
        state = AdamState.for_model(model)
    x = _as_batch(model, batch)
    mask = _dropout_mask(model, len(x), rng)
    loss, grads, means, variances = loss_and_gradients(
        model, x, targets, config.focal_gamma, dropout_mask=mask, backend=backend)
    if not np.isfinite(loss):
        raise TrainingDivergedError(
            f"non-finite loss {loss!r} at adam step {state.t + 1}")
    _update_running_stats(model, means, variances, len(x))

    state.t += 1
    b1, b2 = config.adam_beta1, config.adam_beta2
    bias1 = 1.0 - b1 ** state.t
    bias2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(_learnables(model), grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= config.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + config.adam_eps)
    return model, loss


def train(examples, config: TrainConfig, backend=None) -> Mlp:
    """Train a fresh model on labelled examples; returns it in eval mode.

    Mini-batches are reshuffled every epoch from the run's seeded
    generator. A trailing batch of size 1 is skipped (train-mode batch
    norm is undefined on a single example). Per-epoch mean losses are
    recorded on ``model.loss_history``.
    """
    config.validate()
    examples = list(examples)
    if not examples:
        raise ValueError("training needs at least one example")
    x = stack_features([ex.features for ex in examples])
    y = np.asarray([to_index(ex.label) for ex in examples], dtype=np.int64)

    present = set(int(v) for v in np.unique(y))
    missing = [i for i in range(config.dims[-1]) if i not in present]
    if missing:
        log.warning("training data has no examples for %d of %d classes",
                    len(missing), config.dims[-1])

    rng = np.random.default_rng(config.seed)
    model = Mlp.initialize(rng, dims=config.dims, dropout_rate=config.dropout_rate,
                           bn_eps=config.bn_eps, bn_momentum=config.bn_momentum)
    model.train_config = config.to_dict()
    state = AdamState.for_model(model)
    n = len(x)
    bs = config.batch_size
    for _ in range(config.epochs):
        order = rng.permutation(n)
        epoch_losses = []
        for lo in range(0, n, bs):
            sel = order[lo:lo + bs]
            if len(sel) < 2:
                continue
            _, loss = train_step(model, x[sel], y[sel], config,
                                 state=state, rng=rng, backend=backend)
            epoch_losses.append(loss)
        model.loss_history.append(float(np.mean(epoch_losses)))
    return model.eval_mode()


def _header_dict(model: Mlp) -> dict:
    names = _learnable_names(model)
    learnable = _learnables(model)
    arrays = [{"name": nm, "shape": list(arr.shape)} for nm, arr in zip(names, learnable)]
    for i in range(len(model.dims) - 2):
        arrays.append({"name": f"bn_mean{i}", "shape": [int(model.dims[i + 1])]})
        arrays.append({"name": f"bn_var{i}", "shape": [int(model.dims[i + 1])]})
    return {
        "format_version": MODEL_FORMAT_VERSION,
        "dims": list(model.dims),
        "dropout_rate": model.dropout_rate,
        "bn_eps": model.bn_eps,
        "bn_momentum": model.bn_momentum,
        "param_count": param_count(model),
        "param_bytes": param_nbytes(model),
        "arrays": arrays,
        "train_config": model.train_config,
    }


def save_model(model: Mlp, destination) -> Path:
    """Write the versioned binary container (32-bit parameter payload)."""
    path = Path(destination)
    header = json.dumps(_header_dict(model), sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    blobs = [np.asarray(arr, dtype="<f4").tobytes(order="C")
             for arr in _learnables(model) + _running_stats(model)]
    payload = b"".join(blobs)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<I", len(header)))
        fh.write(header)
        fh.write(payload)
    tmp.replace(path)
    return path


def load_model(source) -> Mlp:
    """Read a model container; inverse of save_model. Returns eval mode."""
    path = Path(source)
    raw = path.read_bytes()
    if len(raw) < len(MODEL_MAGIC) + 4 or raw[: len(MODEL_MAGIC)] != MODEL_MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    (header_len,) = struct.unpack_from("<I", raw, len(MODEL_MAGIC))
    header_start = len(MODEL_MAGIC) + 4
    if header_start + header_len > len(raw):
        raise ModelFormatError(f"{path}: truncated header")
    try:
        header = json.loads(raw[header_start: header_start + header_len])
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: corrupt header json: {exc}") from exc
    if header.get("format_version") != MODEL_FORMAT_VERSION:
        raise ModelFormatError(
            f"{path}: unsupported format version {header.get('format_version')!r}")

    dims = tuple(int(d) for d in header["dims"])
    offset = header_start + header_len
    arrays = {}
    for spec in header["arrays"]:
        shape = tuple(int(s) for s in spec["shape"])
        nbytes = 4 * int(np.prod(shape))
        if offset + nbytes > len(raw):
            raise ModelFormatError(f"{path}: truncated payload at {spec['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=int(np.prod(shape)), offset=offset)
        arrays[spec["name"]] = arr.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(raw):
        raise ModelFormatError(f"{path}: {len(raw) - offset} trailing bytes")

    n_hidden = len(dims) - 2
    model = Mlp(
        dims=dims,
        weights=[arrays[f"w{i}"] for i in range(n_hidden + 1)],
        biases=[arrays[f"b{i}"] for i in range(n_hidden + 1)],
        bn_scale=[arrays[f"bn_scale{i}"] for i in range(n_hidden)],
        bn_shift=[arrays[f"bn_shift{i}"] for i in range(n_hidden)],
        bn_mean=[arrays[f"bn_mean{i}"] for i in range(n_hidden)],
        bn_var=[arrays[f"bn_var{i}"] for i in range(n_hidden)],
        dropout_rate=float(header["dropout_rate"]),
        bn_eps=float(header["bn_eps"]),
        bn_momentum=float(header["bn_momentum"]),
        mode="eval",
        train_config=header.get("train_config"),
    )
    if param_count(model) != int(header["param_count"]):
        raise ModelFormatError(f"{path}: parameter count mismatch")
    return model
