"""A small fully-connected embedding network trained with the margin losses.

The network maps input vectors to ``d``-dimensional features; the loss head
normalizes and scales them, so the network itself stays generic. Weights are
stored fan-in x fan-out and applied as ``a @ W + b``.
"""

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .margin_losses import (
    ClassifierHead,
    MarginConfig,
    NonFiniteError,
    center_rpcl_loss,
    loss_and_grads,
    update_centers,
)
from .numeric_core import Rng, as_matrix

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "tanh", "none")
CHECKPOINT_FORMAT = "deep-rpcl-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDiverged(FloatingPointError):
    pass


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Model:
    layers: list
    head: ClassifierHead

    def __post_init__(self):
        for i in range(1, len(self.layers)):
            if self.layers[i].W.shape[0] != self.layers[i - 1].W.shape[1]:
                raise ValueError(f"layer {i} expects width {self.layers[i].W.shape[0]}, "
                                 f"previous layer gives {self.layers[i - 1].W.shape[1]}")
        if self.head.W.shape[1] != self.embed_dim:
            raise ValueError("head width must equal the embedding dimension")

    @property
    def embed_dim(self):
        return self.layers[-1].W.shape[1]

    @property
    def layer_sizes(self):
        return [self.layers[0].W.shape[0]] + [layer.W.shape[1] for layer in self.layers]

    def params(self):
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
        return out + [self.head.W]

    def copy(self):
        layers = [Layer(l.W.copy(), l.b.copy(), l.activation) for l in self.layers]
        return Model(layers, ClassifierHead(self.head.W.copy()))


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 128
    lr0: float = 0.1
    decay_every: int = 10
    decay_factor: float = 10.0
    optimizer: str = "adam"
    momentum: float = 0.9
    seed: int = 0

    def __post_init__(self):
        if self.lr0 < 0:
            raise ValueError("lr0 must be non-negative")
        if self.decay_factor <= 1:
            raise ValueError("decay_factor must exceed 1 (it divides the learning rate)")
        if self.decay_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("decay_every and batch_size must be positive, epochs non-negative")
        if self.optimizer not in ("sgd_momentum", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    def lr_at(self, epoch):
        return self.lr0 / self.decay_factor ** (epoch // self.decay_every)


def init_model(layer_sizes, seed, n_classes=2, hidden_activation="relu"):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.

    The last layer is linear; the head rows are drawn the same way and then
    normalized.
    """
    sizes = [int(v) for v in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("need at least an input and an output size")
    if min(sizes) < 1:
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    if n_classes < 2:
        raise ValueError("need at least 2 classes")
    rng = Rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        act = "none" if i == len(sizes) - 2 else hidden_activation
        layers.append(Layer(rng.uniform(-bound, bound, (fan_in, fan_out)), np.zeros(fan_out), act))
    bound = 1.0 / np.sqrt(sizes[-1])
    head = ClassifierHead(rng.uniform(-bound, bound, (n_classes, sizes[-1]))).renormalize()
    return Model(layers, head)


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(kind, z, a):
    if kind == "relu":
        return (z > 0).astype(np.float64)
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def forward(model, inputs):
    """Return ``(features, cache)``; the cache holds (input, pre-act, output) per layer."""
    a = as_matrix(inputs, "inputs")
    if a.shape[1] != model.layers[0].W.shape[0]:
        raise ValueError(f"dimension mismatch: inputs have {a.shape[1]} columns, "
                         f"network expects {model.layers[0].W.shape[0]}")
    cache = []
    for layer in model.layers:
        z = a @ layer.W + layer.b
        out = _act(layer.activation, z)
        cache.append((a, z, out))
        a = out
    return a, cache


def backward(model, cache, grad_out):
    """Gradients ``[(dW, db), ...]`` per layer given d(loss)/d(features)."""
    grads = []
    g = grad_out
    for layer, (a_in, z, out) in zip(reversed(model.layers), reversed(cache)):
        gz = g * _act_grad(layer.activation, z, out)
        grads.append((a_in.T @ gz, gz.sum(axis=0)))
        g = gz @ layer.W.T
    return grads[::-1]


class SGDMomentum:
    def __init__(self, momentum=0.9):
        self.momentum = momentum
        self.velocity = None

    def step(self, params, grads, lr):
        if self.velocity is None:
            self.velocity = [np.zeros_like(p) for p in params]
        for p, g, v in zip(params, grads, self.velocity):
            v *= self.momentum
            v -= lr * g
            p += v


class Adam:
    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = self.v = None

    def step(self, params, grads, lr):
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
            p -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(tcfg):
    if tcfg.optimizer == "adam":
        return Adam()
    return SGDMomentum(tcfg.momentum)


def total_loss_and_grads(model, inputs, labels, cfg, center_state=None):
    """Loss and gradients for every parameter, in ``model.params()`` order."""
    feats, cache = forward(model, inputs)
    out = loss_and_grads(feats, labels, model.head, cfg)
    loss, g_feat = out.loss, out.grad_features
    if center_state is not None:
        loss, g_center, _ = center_rpcl_loss(feats, labels, center_state, loss)
        g_feat = g_feat + g_center
    grads = []
    for gW, gb in backward(model, cache, g_feat):
        grads += [gW, gb]
    return loss, grads + [out.grad_W], feats


def train_step(model, batch, cfg, opt, lr, center_state=None, epoch=0, batch_index=0):
    """One optimizer step on ``batch``; mutates ``model`` (and ``center_state``).

    Returns ``(model, loss)`` where ``loss`` is measured before the update.
    """
    X, y = batch.features, batch.labels
    if len(y) == 0:
        raise ValueError("empty batch")
    try:
        loss, grads, feats = total_loss_and_grads(model, X, y, cfg, center_state)
    except NonFiniteError as exc:
        raise TrainingDiverged(f"{exc} (epoch {epoch}, batch {batch_index})") from exc
    if not np.isfinite(loss):
        gmax = max(float(np.max(np.abs(g))) for g in grads)
        raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {batch_index}; max |grad| = {gmax:.3g}")
    opt.step(model.params(), grads, lr)
    model.head.renormalize()
    if center_state is not None:
        center_state.class_centers = update_centers(center_state, feats, y).class_centers
    return model, loss


@dataclass
class _Batch:
    features: np.ndarray
    labels: np.ndarray


def train_embedding(data, model, tcfg, lcfg, center_state=None):
    """Run the epoch loop; returns ``(model, history)`` with per-epoch mean loss.

    The learning rate at epoch ``e`` is ``lr0 / decay_factor ** (e // decay_every)``.
    """
    X = as_matrix(data.features, "features")
    y = np.asarray(data.labels, dtype=np.int64)
    if X.shape[1] != model.layers[0].W.shape[0]:
        raise ValueError(f"dimension mismatch: data has {X.shape[1]} columns, "
                         f"model expects {model.layers[0].W.shape[0]}")
    rng = Rng(tcfg.seed).spawn("shuffle")
    opt = make_optimizer(tcfg)
    history = []
    n = X.shape[0]
    for epoch in range(tcfg.epochs):
        lr = tcfg.lr_at(epoch)
        order = rng.permutation(n)
        losses = []
        for b, start in enumerate(range(0, n, tcfg.batch_size)):
            idx = order[start:start + tcfg.batch_size]
            _, loss = train_step(model, _Batch(X[idx], y[idx]), lcfg, opt, lr, center_state, epoch, b)
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.debug("epoch %d lr %.3g loss %.6f", epoch, lr, history[-1])
    return model, history


def embed(model, inputs):
    return forward(model, inputs)[0]


def save_checkpoint(path, model, tcfg=None, lcfg=None):
    """JSON checkpoint; floats are written with round-trip precision."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "layer_sizes": model.layer_sizes,
        "activations": [l.activation for l in model.layers],
        "layers": [{"W": l.W.tolist(), "b": l.b.tolist()} for l in model.layers],
        "head_W": model.head.W.tolist(),
        "train_config": asdict(tcfg) if tcfg is not None else None,
        "margin_config": asdict(lcfg) if lcfg is not None else None,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_checkpoint(path):
    """Return ``(model, train_config_dict, margin_config_dict)``."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('format_version')}")
    layers = [
        Layer(np.array(entry["W"], dtype=np.float64).reshape(a, b), np.array(entry["b"], dtype=np.float64), act)
        for entry, act, a, b in zip(doc["layers"], doc["activations"], doc["layer_sizes"][:-1], doc["layer_sizes"][1:])
    ]
    model = Model(layers, ClassifierHead(np.array(doc["head_W"], dtype=np.float64)))
    return model, doc.get("train_config"), doc.get("margin_config")
