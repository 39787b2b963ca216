"""Deep MKL: per-view feed-forward branches over kernel PCA embeddings,
fused by concatenation, sum or a learnable weighted sum, then a two-layer
classification head. Forward and backward passes are written out by hand.

Every hidden fully connected layer is followed by LeakyReLU, dropout and
batch normalization, in that order (``layer_order="bn_last"``); the
``"bn_first"`` order (FC, BN, LeakyReLU, dropout) is available for ablation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import make_rng

FUSIONS = ("concat", "sum", "weighted_sum")


class NetworkError(ValueError):
    pass


class DivergenceError(FloatingPointError):
    pass


@dataclass
class DeepMklConfig:
    branch_sizes: tuple = (200, 200, 100)
    cross_modal: bool = False
    fusion: str = "concat"
    head_sizes: tuple | None = None
    leaky_slope: float = 0.01
    dropout_rate: float = 0.5
    learning_rate: float = 5e-5
    batch_size: int = 32
    epochs: int = 100
    seed: int = 0
    adam: tuple = (0.9, 0.999, 1e-8)
    layer_order: str = "bn_last"
    bn_momentum: float = 0.9
    bn_eps: float = 1e-5

    def __post_init__(self):
        self.branch_sizes = tuple(int(w) for w in self.branch_sizes)
        self.adam = tuple(float(a) for a in self.adam)
        if self.head_sizes is not None:
            self.head_sizes = tuple(int(w) for w in self.head_sizes)
        if not self.branch_sizes or min(self.branch_sizes) < 1:
            raise NetworkError("branch_sizes must be non-empty positive widths")
        if self.cross_modal and len(self.branch_sizes) < 4:
            raise NetworkError("cross-modal networks need at least 4 branch layers")
        if self.fusion not in FUSIONS:
            raise NetworkError(f"unknown fusion {self.fusion!r}")
        if self.layer_order not in ("bn_last", "bn_first"):
            raise NetworkError(f"unknown layer order {self.layer_order!r}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise NetworkError("dropout_rate must lie in [0, 1)")
        if self.batch_size < 2:
            raise NetworkError("batch_size must be at least 2")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["branch_sizes"] = list(self.branch_sizes)
        d["adam"] = list(self.adam)
        d["head_sizes"] = None if self.head_sizes is None else list(self.head_sizes)
        return d


# --------------------------------------------------------------------------
# layers
# --------------------------------------------------------------------------

class Dense:
    def __init__(self, fan_in: int, fan_out: int, rng: np.random.Generator):
        # He-uniform
        limit = math.sqrt(6.0 / fan_in)
        self.params = {"W": rng.uniform(-limit, limit, size=(fan_in, fan_out)),
                       "b": np.zeros(fan_out)}
        self.grads = {}

    def forward(self, x, net):
        self.x = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        self.grads["W"] = self.x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class LeakyReLU:
    params: dict = {}

    def __init__(self, slope: float):
        self.slope = slope

    def forward(self, x, net):
        self.slope_mask = np.where(x > 0, 1.0, self.slope)
        return x * self.slope_mask

    def backward(self, dout):
        return dout * self.slope_mask


class Dropout:
    """Inverted dropout; identity outside training."""

    params: dict = {}

    def __init__(self, rate: float):
        self.rate = rate

    def forward(self, x, net):
        if net.training and self.rate > 0:
            keep = net.rng.random(x.shape) >= self.rate
            self.mask = keep / (1.0 - self.rate)
            return x * self.mask
        self.mask = None
        return x

    def backward(self, dout):
        return dout if self.mask is None else dout * self.mask


class BatchNorm:
    def __init__(self, width: int, momentum: float, eps: float):
        self.params = {"gamma": np.ones(width), "beta": np.zeros(width)}
        self.grads = {}
        self.running_mean = np.zeros(width)
        self.running_var = np.ones(width)
        self.momentum = momentum
        self.eps = eps

    def forward(self, x, net):
        self.batch_mode = net.training and not net.frozen_bn
        if self.batch_mode:
            n = x.shape[0]
            if n < 2:
                raise NetworkError("batch normalization needs at least 2 samples per batch")
            mean = x.mean(axis=0)
            var = x.var(axis=0)
            m = self.momentum
            self.running_mean = m * self.running_mean + (1 - m) * mean
            self.running_var = m * self.running_var + (1 - m) * var * n / (n - 1)
        else:
            mean, var = self.running_mean, self.running_var
        self.inv_std = 1.0 / np.sqrt(var + self.eps)
        self.xhat = (x - mean) * self.inv_std
        return self.params["gamma"] * self.xhat + self.params["beta"]

    def backward(self, dout):
        self.grads["gamma"] = (dout * self.xhat).sum(axis=0)
        self.grads["beta"] = dout.sum(axis=0)
        dxhat = dout * self.params["gamma"]
        if not self.batch_mode:
            return dxhat * self.inv_std
        n = dout.shape[0]
        return (self.inv_std / n) * (n * dxhat - dxhat.sum(axis=0)
                                     - self.xhat * (dxhat * self.xhat).sum(axis=0))


class Block:
    """Fully connected layer plus its activation, dropout and batch-norm."""

    def __init__(self, fan_in: int, fan_out: int, cfg: DeepMklConfig, rng):
        self.dense = Dense(fan_in, fan_out, rng)
        act = LeakyReLU(cfg.leaky_slope)
        drop = Dropout(cfg.dropout_rate)
        bn = BatchNorm(fan_out, cfg.bn_momentum, cfg.bn_eps)
        self.bn = bn
        if cfg.layer_order == "bn_last":
            self.layers = [self.dense, act, drop, bn]
        else:
            self.layers = [self.dense, bn, act, drop]

    def forward(self, x, net):
        for layer in self.layers:
            x = layer.forward(x, net)
        return x

    def backward(self, dout):
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


# --------------------------------------------------------------------------
# network
# --------------------------------------------------------------------------

class DeepMklModel:
    """Multi-branch network; see :func:`build`."""

    def __init__(self, config: DeepMklConfig, input_dims, n_classes: int):
        cfg = config
        self.config = cfg
        self.input_dims = [int(d) for d in input_dims]
        self.n_classes = int(n_classes)
        if not self.input_dims or min(self.input_dims) < 1:
            raise NetworkError("need at least one input view of positive width")
        if self.n_classes < 2:
            raise NetworkError("need at least two classes")
        head = cfg.head_sizes or (cfg.branch_sizes[-1], self.n_classes)
        if len(head) != 2 or head[-1] != self.n_classes:
            raise NetworkError(f"head_sizes {tuple(head)} must be (hidden, {self.n_classes})")
        self.head_sizes = tuple(head)
        rng = make_rng(cfg.seed)
        n_views = len(self.input_dims)
        per_branch = cfg.branch_sizes[:-1] if cfg.cross_modal else cfg.branch_sizes
        self.branches = []
        for d in self.input_dims:
            blocks, width = [], d
            for w in per_branch:
                blocks.append(Block(width, w, cfg, rng))
                width = w
            self.branches.append(blocks)
        self.cross = []
        if cfg.cross_modal:
            self.cross = [Block(n_views * per_branch[-1], cfg.branch_sizes[-1], cfg, rng)
                          for _ in range(n_views)]
        out_w = cfg.branch_sizes[-1]
        self.fusion_params = {"w": np.full(n_views, 1.0 / n_views)}
        self.fusion_grads = {}
        self.fused_width = out_w * n_views if cfg.fusion == "concat" else out_w
        self.head_block = Block(self.fused_width, head[0], cfg, rng)
        self.head_out = Dense(head[0], self.n_classes, rng)
        self.training = False
        self.frozen_bn = False
        self.rng = make_rng(cfg.seed, stream=1)
        self.adam_state: dict = {"t": 0, "m": {}, "v": {}}

    # -- parameter access ---------------------------------------------------

    def _param_layers(self):
        for b, blocks in enumerate(self.branches):
            for i, blk in enumerate(blocks):
                yield f"branch{b}.layer{i}.dense", blk.dense
                yield f"branch{b}.layer{i}.bn", blk.bn
        for b, blk in enumerate(self.cross):
            yield f"cross{b}.dense", blk.dense
            yield f"cross{b}.bn", blk.bn
        if self.config.fusion == "weighted_sum":
            yield "fusion", _FusionHolder(self)
        yield "head.layer0.dense", self.head_block.dense
        yield "head.layer0.bn", self.head_block.bn
        yield "head.out", self.head_out

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable arrays keyed by dotted name (live references)."""
        return {f"{prefix}.{k}": v for prefix, layer in self._param_layers()
                for k, v in layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{prefix}.{k}": layer.grads[k] for prefix, layer in self._param_layers()
                for k in layer.params}

    def batchnorms(self) -> dict[str, BatchNorm]:
        return {prefix: layer for prefix, layer in self._param_layers()
                if isinstance(layer, BatchNorm)}

    def eval(self) -> "DeepMklModel":
        self.training = False
        return self

    # -- passes ---------------------------------------------------------------

    def _check_inputs(self, views):
        if len(views) != len(self.branches):
            raise NetworkError(f"expected {len(self.branches)} views, got {len(views)}")
        out = []
        for x, d in zip(views, self.input_dims):
            x = np.asarray(x, dtype=np.float64)
            if x.ndim == 1:
                x = x[None, :]
            if x.shape[1] != d:
                raise NetworkError(f"view width {x.shape[1]} does not match expected {d}")
            out.append(x)
        n = {x.shape[0] for x in out}
        if len(n) != 1:
            raise NetworkError("views disagree on the number of samples")
        return out

    def logits(self, views) -> np.ndarray:
        """Pre-softmax outputs; caches activations for :meth:`backward`."""
        views = self._check_inputs(views)
        hs = []
        for x, blocks in zip(views, self.branches):
            for blk in blocks:
                x = blk.forward(x, self)
            hs.append(x)
        if self.cross:
            z = np.concatenate(hs, axis=1)
            self._cross_split = np.cumsum([h.shape[1] for h in hs])[:-1]
            hs = [blk.forward(z, self) for blk in self.cross]
        self._hs = hs
        mode = self.config.fusion
        if mode == "concat":
            fused = np.concatenate(hs, axis=1)
        elif mode == "sum":
            fused = np.sum(hs, axis=0)
        else:
            w = self.fusion_params["w"]
            fused = sum(wb * h for wb, h in zip(w, hs))
        h = self.head_block.forward(fused, self)
        return self.head_out.forward(h, self)

    def forward(self, views, mode: str = "eval") -> np.ndarray:
        if mode not in ("train", "eval"):
            raise NetworkError(f"unknown mode {mode!r}")
        self.training = mode == "train"
        return softmax(self.logits(views))

    def backward(self, dlogits) -> list[np.ndarray]:
        """Backpropagate ``dL/dlogits``; fills gradients and returns input gradients."""
        d = self.head_out.backward(dlogits)
        d = self.head_block.backward(d)
        hs = self._hs
        mode = self.config.fusion
        if mode == "concat":
            dhs = np.split(d, np.cumsum([h.shape[1] for h in hs])[:-1], axis=1)
        elif mode == "sum":
            dhs = [d] * len(hs)
        else:
            w = self.fusion_params["w"]
            self.fusion_grads["w"] = np.array([np.sum(d * h) for h in hs])
            dhs = [wb * d for wb in w]
        if self.cross:
            dz = sum(blk.backward(dh) for blk, dh in zip(self.cross, dhs))
            dhs = np.split(dz, self._cross_split, axis=1)
        dxs = []
        for dh, blocks in zip(dhs, self.branches):
            for blk in reversed(blocks):
                dh = blk.backward(dh)
            dxs.append(dh)
        return dxs

    def loss_and_grad(self, views, labels) -> float:
        """Mean cross-entropy at the current mode; gradients land in :meth:`gradients`."""
        z = self.logits(views)
        labels = np.asarray(labels, dtype=np.int64)
        logp = log_softmax(z)
        n = z.shape[0]
        loss = -float(logp[np.arange(n), labels].mean())
        dz = np.exp(logp)
        dz[np.arange(n), labels] -= 1.0
        self.backward(dz / n)
        return loss

    # -- persistence -----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "input_dims": self.input_dims,
            "n_classes": self.n_classes,
            "params": {k: v.tolist() for k, v in self.parameters().items()},
            "batchnorm": {k: {"running_mean": bn.running_mean.tolist(),
                              "running_var": bn.running_var.tolist()}
                          for k, bn in self.batchnorms().items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DeepMklModel":
        cfg = d["config"]
        model = cls(DeepMklConfig(**cfg), d["input_dims"], d["n_classes"])
        live = model.parameters()
        for k, v in d["params"].items():
            arr = np.asarray(v, dtype=np.float64)
            if live[k].shape != arr.shape:
                raise NetworkError(f"parameter {k} has shape {arr.shape}, expected {live[k].shape}")
            live[k][...] = arr
        for k, bn in model.batchnorms().items():
            bn.running_mean = np.asarray(d["batchnorm"][k]["running_mean"], dtype=np.float64)
            bn.running_var = np.asarray(d["batchnorm"][k]["running_var"], dtype=np.float64)
        return model


class _FusionHolder:
    """Adapter exposing fusion scalars through the layer params/grads protocol."""

    def __init__(self, model):
        self.params = model.fusion_params
        self.grads = model.fusion_grads


def softmax(z) -> np.ndarray:
    return np.exp(log_softmax(z))


def log_softmax(z) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def build(config: DeepMklConfig, input_dims, classes: int) -> DeepMklModel:
    """Construct a network with weights drawn deterministically from ``config.seed``."""
    return DeepMklModel(config, input_dims, classes)


# --------------------------------------------------------------------------
# training
# --------------------------------------------------------------------------

def _batches(perm: np.ndarray, size: int) -> list[np.ndarray]:
    chunks = [perm[i:i + size] for i in range(0, perm.size, size)]
    if len(chunks) > 1 and chunks[-1].size < 2:
        tail = chunks.pop()
        chunks[-1] = np.concatenate([chunks[-1], tail])
    return chunks


def adam_step(model: DeepMklModel) -> None:
    cfg = model.config
    b1, b2, eps = cfg.adam
    lr = cfg.learning_rate
    st = model.adam_state
    st["t"] += 1
    t = st["t"]
    grads = model.gradients()
    for name, p in model.parameters().items():
        g = grads[name]
        m = st["m"].get(name)
        if m is None:
            m = st["m"][name] = np.zeros_like(p)
            st["v"][name] = np.zeros_like(p)
        v = st["v"][name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        p -= lr * mhat / (np.sqrt(vhat) + eps)


@dataclass
class TrainTrace:
    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)

    def rows(self) -> list[list]:
        return [[e + 1, l, a] for e, (l, a) in enumerate(zip(self.loss, self.train_acc))]


def train(model: DeepMklModel, train_embeddings, train_labels, epochs: int | None = None) -> TrainTrace:
    """Mini-batch Adam on mean cross-entropy; leaves the model in eval mode."""
    views = model._check_inputs(train_embeddings)
    y = np.asarray(train_labels, dtype=np.int64)
    n = views[0].shape[0]
    if y.shape != (n,):
        raise NetworkError("labels length does not match the embeddings")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise NetworkError("label outside [0, n_classes)")
    if n < 2:
        raise NetworkError("need at least two training samples")
    epochs = model.config.epochs if epochs is None else epochs
    trace = TrainTrace()
    model.training = True
    try:
        for epoch in range(epochs):
            perm = model.rng.permutation(n)
            total, correct = 0.0, 0
            for idx in _batches(perm, model.config.batch_size):
                batch = [v[idx] for v in views]
                z = model.logits(batch)
                logp = log_softmax(z)
                yb = y[idx]
                loss = -logp[np.arange(idx.size), yb]
                if not np.all(np.isfinite(loss)):
                    raise DivergenceError(f"non-finite loss at epoch {epoch + 1}")
                total += float(loss.sum())
                correct += int(np.sum(np.argmax(z, axis=1) == yb))
                dz = np.exp(logp)
                dz[np.arange(idx.size), yb] -= 1.0
                model.backward(dz / idx.size)
                adam_step(model)
            trace.loss.append(total / n)
            trace.train_acc.append(correct / n)
    finally:
        model.training = False
    bad = [k for k, v in model.parameters().items() if not np.all(np.isfinite(v))]
    if bad:
        raise DivergenceError(f"non-finite parameters after training: {bad[0]}")
    return trace


def predict_proba(model: DeepMklModel, embeddings) -> np.ndarray:
    return model.forward(embeddings, mode="eval")


def predict(model: DeepMklModel, embeddings) -> np.ndarray:
    return np.argmax(predict_proba(model, embeddings), axis=1)
