"""Brain-response attribute classifier.

Layout: a 1x1 convolution with ``channel_count`` filters over the voxel
axis (BatchNorm + ReLU), flatten, a chain of FC -> BatchNorm -> ReLU ->
Dropout blocks, then a 2-logit linear head. Logit 0 is the negative class,
logit 1 the positive class.

Everything is plain numpy with explicit forward/backward passes.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lbm
from .numerics import make_rng

BN_EPS = 1e-5
ABSTAIN = 0


class ClassifierError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


def default_hidden_dims(input_dim: int) -> list[int]:
    """Scaled copy of the 4720 -> 1024 -> 256 -> 16 chain."""
    v = int(input_dim)
    dims = [v, max(v // 4, 32), max(v // 16, 16), 16]
    # small inputs: never widen along the chain
    for i in range(1, len(dims)):
        dims[i] = min(dims[i], dims[i - 1])
    return dims


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    channel_count: int = 8
    hidden_dims: tuple = None
    dropout_p: float = 0.5
    epochs: int = 8
    batch_size: int = 64
    learning_rate: float = 0.02
    momentum: float = 0.9
    weight_decay: float = 0.0
    bn_momentum: float = 0.1
    seed: int = 7

    def __post_init__(self):
        if self.hidden_dims is None:
            object.__setattr__(self, "hidden_dims", tuple(default_hidden_dims(self.input_dim)))
        else:
            object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        self.validate()

    def validate(self) -> None:
        if self.input_dim < 1 or self.channel_count < 1:
            raise ClassifierError("input_dim and channel_count must be positive")
        dims = self.hidden_dims
        if not dims or any(h < 1 for h in dims):
            raise ClassifierError(f"hidden_dims must be a non-empty list of positive sizes, got {list(dims)}")
        if any(b > a for a, b in zip(dims, dims[1:])):
            raise ClassifierError(f"hidden_dims must not increase along the chain, got {list(dims)}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ClassifierError(f"dropout_p must be in [0, 1), got {self.dropout_p}")
        if self.epochs < 1 or self.batch_size < 1 or not self.learning_rate > 0:
            raise ClassifierError("epochs, batch_size and learning_rate must be positive")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d


def layer_shapes(cfg: MlpConfig) -> list[tuple[int, int]]:
    """Weight shapes of the FC layers and the classifier head, in order."""
    dims = [cfg.channel_count * cfg.input_dim, *cfg.hidden_dims, 2]
    return list(zip(dims[:-1], dims[1:]))


@dataclass(eq=False)
class MlpModel:
    config: MlpConfig
    params: dict[str, np.ndarray]
    running: dict[str, np.ndarray]      # batchnorm running mean/var per block
    training: bool = False
    history: list = field(default_factory=list)

    @property
    def n_blocks(self) -> int:
        return len(self.config.hidden_dims)

    def copy(self) -> "MlpModel":
        return MlpModel(
            self.config,
            {k: v.copy() for k, v in self.params.items()},
            {k: v.copy() for k, v in self.running.items()},
            self.training,
            list(self.history),
        )


def init_model(cfg: MlpConfig) -> MlpModel:
    rng = make_rng(cfg.seed, 0)
    c = cfg.channel_count
    params = {
        # fan-in of a 1x1 kernel on a single-channel input is 1
        "conv_w": rng.standard_normal(c),
        "conv_b": np.zeros(c),
        "bn0_g": np.ones(c),
        "bn0_b": np.zeros(c),
    }
    running = {"bn0_mean": np.zeros(c), "bn0_var": np.ones(c)}
    shapes = layer_shapes(cfg)
    for i, (fan_in, fan_out) in enumerate(shapes[:-1], start=1):
        params[f"fc{i}_w"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        params[f"fc{i}_b"] = np.zeros(fan_out)
        params[f"bn{i}_g"] = np.ones(fan_out)
        params[f"bn{i}_b"] = np.zeros(fan_out)
        running[f"bn{i}_mean"] = np.zeros(fan_out)
        running[f"bn{i}_var"] = np.ones(fan_out)
    fan_in, fan_out = shapes[-1]
    params["head_w"] = rng.standard_normal((fan_in, fan_out)) * np.sqrt(1.0 / fan_in)
    params["head_b"] = np.zeros(fan_out)
    return MlpModel(cfg, params, running, training=False)


# -- forward / backward ------------------------------------------------------

def _bn_forward(x, gamma, beta, axes, mean=None, var=None):
    fixed = mean is not None
    if not fixed:
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
    shape = [1] * x.ndim
    for ax in range(x.ndim):
        if ax not in axes:
            shape[ax] = -1
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
    out = xhat * gamma.reshape(shape) + beta.reshape(shape)
    return out, (xhat, inv, gamma, axes, shape, fixed), mean, var


def _bn_backward(dout, cache):
    xhat, inv, gamma, axes, shape, fixed = cache
    n = np.prod([dout.shape[a] for a in axes])
    dgamma = np.sum(dout * xhat, axis=axes)
    dbeta = np.sum(dout, axis=axes)
    dxhat = dout * gamma.reshape(shape)
    if fixed:
        # running statistics are constants
        return dxhat * inv.reshape(shape), dgamma, dbeta
    dx = (inv.reshape(shape) / n) * (
        n * dxhat
        - np.sum(dxhat, axis=axes).reshape(shape)
        - xhat * np.sum(dxhat * xhat, axis=axes).reshape(shape)
    )
    return dx, dgamma, dbeta


def _as_batch(model: MlpModel, y) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    if y.ndim == 1:
        y = y.reshape(1, -1)
    if y.shape[1] != model.config.input_dim:
        raise ClassifierError(f"brain response has length {y.shape[1]}, classifier expects {model.config.input_dim}")
    return y


def _forward(model: MlpModel, x, train: bool, rng=None, masks=None, update_running=False):
    """Returns logits and the cache needed by ``_backward``."""
    p = model.params
    cfg = model.config
    caches = {}
    h = x[:, None, :] * p["conv_w"][None, :, None] + p["conv_b"][None, :, None]
    stats = (None, None) if train else (model.running["bn0_mean"], model.running["bn0_var"])
    h, caches["bn0"], mean, var = _bn_forward(h, p["bn0_g"], p["bn0_b"], (0, 2), *stats)
    if train and update_running:
        _update_running(model, "bn0", mean, var, cfg.bn_momentum)
    caches["relu0"] = h > 0
    h = (h * caches["relu0"]).reshape(x.shape[0], -1)
    caches["in1"] = h

    used_masks = []
    for i in range(1, model.n_blocks + 1):
        a = h @ p[f"fc{i}_w"] + p[f"fc{i}_b"]
        stats = (None, None) if train else (model.running[f"bn{i}_mean"], model.running[f"bn{i}_var"])
        a, caches[f"bn{i}"], mean, var = _bn_forward(a, p[f"bn{i}_g"], p[f"bn{i}_b"], (0,), *stats)
        if train and update_running:
            _update_running(model, f"bn{i}", mean, var, cfg.bn_momentum)
        relu = a > 0
        h = a * relu
        if train and cfg.dropout_p > 0:
            if masks is not None:
                mask = masks[i - 1]
            else:
                mask = (rng.random(h.shape) >= cfg.dropout_p) / (1.0 - cfg.dropout_p)
            used_masks.append(mask)
            caches[f"relu{i}"] = relu * mask
            h = h * mask
        else:
            caches[f"relu{i}"] = relu
        caches[f"in{i + 1}"] = h
    logits = h @ p["head_w"] + p["head_b"]
    caches["masks"] = used_masks
    return logits, caches


def _update_running(model, name, mean, var, momentum):
    model.running[f"{name}_mean"] = (1 - momentum) * model.running[f"{name}_mean"] + momentum * mean
    model.running[f"{name}_var"] = (1 - momentum) * model.running[f"{name}_var"] + momentum * var


def _softmax_xent(logits, targets):
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    loss = -np.mean(logp[np.arange(len(targets)), targets])
    probs = np.exp(logp)
    probs[np.arange(len(targets)), targets] -= 1.0
    return loss, probs / len(targets)


def _backward(model: MlpModel, x, caches, dlogits) -> dict[str, np.ndarray]:
    p = model.params
    grads = {}
    last = model.n_blocks + 1
    grads["head_w"] = caches[f"in{last}"].T @ dlogits
    grads["head_b"] = dlogits.sum(axis=0)
    dh = dlogits @ p["head_w"].T
    for i in range(model.n_blocks, 0, -1):
        da = dh * caches[f"relu{i}"]
        da, grads[f"bn{i}_g"], grads[f"bn{i}_b"] = _bn_backward(da, caches[f"bn{i}"])
        grads[f"fc{i}_w"] = caches[f"in{i}"].T @ da
        grads[f"fc{i}_b"] = da.sum(axis=0)
        dh = da @ p[f"fc{i}_w"].T
    c = model.config.channel_count
    dh = dh.reshape(x.shape[0], c, -1) * caches["relu0"]
    dh, grads["bn0_g"], grads["bn0_b"] = _bn_backward(dh, caches["bn0"])
    grads["conv_w"] = np.einsum("bcv,bv->c", dh, x)
    grads["conv_b"] = dh.sum(axis=(0, 2))
    return grads


def loss_and_grads(model: MlpModel, x, targets, masks=None, train=True):
    """Mean cross-entropy and its gradient for every parameter.

    ``masks`` pins the dropout masks so the loss is a deterministic function
    of the parameters.
    """
    x = _as_batch(model, x)
    logits, caches = _forward(model, x, train=train, masks=masks, rng=None if masks is not None else make_rng(0))
    loss, dlogits = _softmax_xent(logits, np.asarray(targets))
    return loss, _backward(model, x, caches, dlogits)


def forward(model: MlpModel, y, mode: str = "infer", rng: np.random.Generator | None = None) -> np.ndarray:
    """Logits for one response (2-vector) or a batch of responses (M x 2)."""
    if mode not in ("train", "infer"):
        raise ClassifierError(f"mode must be 'train' or 'infer', got {mode!r}")
    single = np.ndim(y) == 1
    x = _as_batch(model, y)
    if mode == "train" and rng is None:
        raise ClassifierError("train mode needs a random source for dropout")
    logits, _ = _forward(model, x, train=(mode == "train"), rng=rng)
    return logits[0] if single else logits


# -- training ------------------------------------------------------------------

def labels_to_targets(labels) -> np.ndarray:
    labels = np.asarray(labels).reshape(-1)
    bad = ~np.isin(labels, (-1, 1))
    if bad.any():
        raise ClassifierError(f"labels must be -1 or +1, found {labels[bad][0]!r}")
    return (labels > 0).astype(int)


def _finalize_running_stats(model: MlpModel, x, chunk: int = 1024) -> None:
    """Replace running BN statistics with exact training-set statistics.

    Layers are processed in order, each with dropout off and all upstream
    layers already using their finalised statistics.
    """
    p = model.params
    h0 = x[:, None, :] * p["conv_w"][None, :, None] + p["conv_b"][None, :, None]
    model.running["bn0_mean"] = h0.mean(axis=(0, 2))
    model.running["bn0_var"] = h0.var(axis=(0, 2))
    h, _, _, _ = _bn_forward(h0, p["bn0_g"], p["bn0_b"], (0, 2), model.running["bn0_mean"], model.running["bn0_var"])
    h = np.maximum(h, 0).reshape(x.shape[0], -1)
    for i in range(1, model.n_blocks + 1):
        a = h @ p[f"fc{i}_w"] + p[f"fc{i}_b"]
        model.running[f"bn{i}_mean"] = a.mean(axis=0)
        model.running[f"bn{i}_var"] = a.var(axis=0)
        a, _, _, _ = _bn_forward(a, p[f"bn{i}_g"], p[f"bn{i}_b"], (0,), model.running[f"bn{i}_mean"], model.running[f"bn{i}_var"])
        h = np.maximum(a, 0)


def train(model: MlpModel, brain, labels, cfg: MlpConfig | None = None) -> MlpModel:
    """Mini-batch gradient descent on softmax cross-entropy.

    Returns a new model in inference mode; the input model is not modified.
    """
    cfg = cfg or model.config
    x = _as_batch(model, brain)
    targets = labels_to_targets(labels)
    if targets.shape[0] != x.shape[0]:
        raise ClassifierError(f"{x.shape[0]} responses but {targets.shape[0]} labels")
    if np.all(targets == targets[0]):
        raise ClassifierError("training labels contain a single class")
    n = x.shape[0]
    if n < 2 * cfg.batch_size:
        raise ClassifierError(f"need at least {2 * cfg.batch_size} samples for batch size {cfg.batch_size}, got {n}")

    model = model.copy()
    model.training = True
    model.history = []
    rng = make_rng(cfg.seed, 1)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    n_batches = n // cfg.batch_size  # drop the ragged tail so BN never sees a tiny batch
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses, correct = [], 0
        for b in range(n_batches):
            idx = order[b * cfg.batch_size:(b + 1) * cfg.batch_size]
            logits, caches = _forward(model, x[idx], train=True, rng=rng, update_running=True)
            loss, dlogits = _softmax_xent(logits, targets[idx])
            if not np.isfinite(loss):
                raise DivergenceError(f"loss became non-finite at epoch {epoch + 1}")
            grads = _backward(model, x[idx], caches, dlogits)
            for k, g in grads.items():
                if cfg.weight_decay and k.endswith("_w"):
                    g = g + cfg.weight_decay * model.params[k]
                velocity[k] = cfg.momentum * velocity[k] - cfg.learning_rate * g
                model.params[k] += velocity[k]
            losses.append(loss)
            correct += int(np.sum(np.argmax(logits, axis=1) == targets[idx]))
        model.history.append({
            "epoch": epoch + 1,
            "loss": float(np.mean(losses)),
            "train_accuracy": correct / (n_batches * cfg.batch_size),
        })

    _finalize_running_stats(model, x)
    model.training = False
    return model


def predict_batch(model: MlpModel, brain) -> np.ndarray:
    logits = forward(model, _as_batch(model, brain), mode="infer")
    # tie goes to the positive class
    return np.where(logits[:, 1] >= logits[:, 0], 1, -1)


def predict_direction(model: MlpModel, y) -> int:
    return int(predict_batch(model, np.asarray(y).reshape(1, -1))[0])


def majority(predictions) -> int:
    """Strict majority of +/-1 votes; 0 (abstain) on an exact tie."""
    total = int(np.sum(predictions))
    if total > 0:
        return 1
    if total < 0:
        return -1
    return ABSTAIN


def vote_direction(model: MlpModel, trials) -> int:
    trials = _as_batch(model, trials)
    if trials.shape[0] < 1:
        raise ClassifierError("vote needs at least one trial")
    return majority(predict_batch(model, trials))


def accuracy_on(model: MlpModel, brain, labels) -> float:
    return float(np.mean(predict_batch(model, brain) == np.asarray(labels).reshape(-1)))


# -- persistence ---------------------------------------------------------------

def save_model(directory: str | os.PathLike, model: MlpModel, attribute_id: int, extra: dict | None = None) -> None:
    """Weights go to ``mlp_<k>.lbm`` (all tensors flattened into one row each)
    and their layout to ``mlp_<k>.json``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    tensors = {**{f"param:{k}": v for k, v in model.params.items()},
               **{f"running:{k}": v for k, v in model.running.items()}}
    names = sorted(tensors)
    flat = np.concatenate([tensors[k].ravel() for k in names]).reshape(1, -1)
    lbm.save(out / f"mlp_{attribute_id}.lbm", flat)
    layout = [{"name": k, "shape": list(tensors[k].shape)} for k in names]
    meta = {
        "attribute_id": attribute_id,
        "config": model.config.to_dict(),
        "layout": layout,
        "history": model.history,
    }
    meta.update(extra or {})
    with open(out / f"mlp_{attribute_id}.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load_model(directory: str | os.PathLike, attribute_id: int) -> MlpModel:
    src = Path(directory)
    with open(src / f"mlp_{attribute_id}.json", encoding="utf-8") as fh:
        meta = json.load(fh)
    flat = lbm.load(src / f"mlp_{attribute_id}.lbm").ravel()
    params, running, pos = {}, {}, 0
    for entry in meta["layout"]:
        size = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = flat[pos:pos + size].reshape(entry["shape"])
        pos += size
        kind, name = entry["name"].split(":", 1)
        (params if kind == "param" else running)[name] = arr.copy()
    cfg = MlpConfig(**meta["config"])
    return MlpModel(cfg, params, running, training=False, history=meta.get("history", []))
