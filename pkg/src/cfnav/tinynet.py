"""A small dense-network engine with hand-written reverse mode.

Networks are plain chains of layers.  ``backward`` returns gradients for the
parameters and for the network input; the input gradient is what lets a
policy be trained through a frozen predictor.
"""

from __future__ import annotations

import json
import os
from typing import Sequence

import numpy as np

CHECKPOINT_VERSION = 1
CREATED_BY = "cfnav-0.1.0"


class CheckpointError(ValueError):
    pass


class Layer:
    kind = "layer"

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim, self.out_dim = in_dim, out_dim
        self._cache = None

    def params(self) -> list[np.ndarray]:
        return []

    def forward(self, x, train):
        raise NotImplementedError

    def backward(self, g, need_params=True):
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind, "in": self.in_dim, "out": self.out_dim}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_dim, out_dim, rng=None):
        if in_dim < 1 or out_dim < 1:
            raise ValueError("dense layer needs positive dimensions")
        super().__init__(in_dim, out_dim)
        rng = rng or np.random.default_rng(0)
        lim = 1.0 / np.sqrt(in_dim)
        self.w = rng.uniform(-lim, lim, size=(in_dim, out_dim))
        self.b = rng.uniform(-lim, lim, size=out_dim)

    def params(self):
        return [self.w, self.b]

    def forward(self, x, train):
        self._cache = x
        return x @ self.w + self.b

    def backward(self, g, need_params=True):
        x = self._cache
        grads = [x.T @ g, g.sum(axis=0)] if need_params else []
        return grads, g @ self.w.T

    def spec(self):
        return {**super().spec(), "w": self.w.tolist(), "b": self.b.tolist()}


class BatchNorm(Layer):
    kind = "batchnorm"
    momentum = 0.1
    eps = 1e-5

    def __init__(self, dim, rng=None):
        super().__init__(dim, dim)
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.run_mean = np.zeros(dim)
        self.run_var = np.ones(dim)

    def params(self):
        return [self.gamma, self.beta]

    def forward(self, x, train):
        if train:
            mu = x.mean(axis=0)
            var = x.var(axis=0)
            n = x.shape[0]
            unbiased = var * n / max(n - 1, 1)
            self.run_mean *= 1 - self.momentum
            self.run_mean += self.momentum * mu
            self.run_var *= 1 - self.momentum
            self.run_var += self.momentum * unbiased
        else:
            mu, var = self.run_mean, self.run_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv
        self._cache = (xhat, inv, train)
        return xhat * self.gamma + self.beta

    def backward(self, g, need_params=True):
        xhat, inv, train = self._cache
        grads = [(g * xhat).sum(axis=0), g.sum(axis=0)] if need_params else []
        gx = g * self.gamma
        if train:
            gx = inv * (gx - gx.mean(axis=0) - xhat * (gx * xhat).mean(axis=0))
        else:
            gx = gx * inv
        return grads, gx

    def spec(self):
        return {**super().spec(), "gamma": self.gamma.tolist(), "beta": self.beta.tolist(),
                "run_mean": self.run_mean.tolist(), "run_var": self.run_var.tolist()}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train):
        self._cache = x > 0
        return np.where(self._cache, x, 0.0)

    def backward(self, g, need_params=True):
        return [], g * self._cache


class ScaledTanh(Layer):
    kind = "scaled_tanh"

    def __init__(self, dim, scale=1.0):
        if not scale > 0:
            raise ValueError("scaled_tanh needs a positive scale")
        super().__init__(dim, dim)
        self.scale = float(scale)

    def forward(self, x, train):
        t = np.tanh(x)
        self._cache = t
        return self.scale * t

    def backward(self, g, need_params=True):
        t = self._cache
        return [], g * self.scale * (1.0 - t * t)

    def spec(self):
        return {**super().spec(), "scale": self.scale}


class Tanh(ScaledTanh):
    kind = "tanh"

    def __init__(self, dim, scale=1.0):
        super().__init__(dim, 1.0)

    def spec(self):
        return Layer.spec(self)


class Network:
    """Chain of layers with a train/eval mode switch."""

    def __init__(self, layers: Sequence[Layer], mode: str = "train"):
        for a, b in zip(layers, layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims disagree: {a.kind}({a.out_dim}) -> {b.kind}({b.in_dim})")
        self.layers = list(layers)
        self.mode = mode
        self._recorded = False

    @property
    def in_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.layers[-1].out_dim

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected batch of shape (n, {self.in_dim}), got {x.shape}")
        train = self.mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train)
        self._recorded = True
        return x

    __call__ = forward

    def backward(self, loss_grad, need_params=True):
        """Return (param_grads, input_grad) for the last recorded forward pass."""
        if not self._recorded:
            raise RuntimeError("backward called without a recorded forward pass")
        g = np.asarray(loss_grad, dtype=float)
        grads: list[list[np.ndarray]] = []
        for layer in reversed(self.layers):
            pg, g = layer.backward(g, need_params)
            grads.append(pg)
        flat = [p for pg in reversed(grads) for p in pg]
        return flat, g

    def checksum(self) -> float:
        return float(sum(np.sum(p * (i + 1)) for i, p in enumerate(self.parameters())))

    def to_dict(self, meta: dict | None = None) -> dict:
        return {"version": CHECKPOINT_VERSION, "layers": [l.spec() for l in self.layers],
                "meta": {"created": CREATED_BY, **(meta or {})}}

    @classmethod
    def from_dict(cls, d: dict) -> "Network":
        if not isinstance(d, dict) or "layers" not in d:
            raise CheckpointError("checkpoint has no layer list")
        if d.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(f"checkpoint version {d.get('version')} != {CHECKPOINT_VERSION}")
        layers = []
        try:
            for spec in d["layers"]:
                layers.append(_layer_from_spec(spec))
            net = cls(layers, mode="eval")
        except (KeyError, TypeError, ValueError) as exc:
            raise CheckpointError(f"malformed checkpoint: {exc}") from exc
        net.meta = d.get("meta", {})
        return net


def _layer_from_spec(spec: dict) -> Layer:
    kind, i, o = spec["kind"], int(spec["in"]), int(spec["out"])
    if kind == "dense":
        layer = Dense(i, o)
        layer.w = _arr(spec["w"], (i, o))
        layer.b = _arr(spec["b"], (o,))
    elif kind == "batchnorm":
        layer = BatchNorm(i)
        for name in ("gamma", "beta", "run_mean", "run_var"):
            setattr(layer, name, _arr(spec[name], (i,)))
    elif kind == "relu":
        layer = ReLU(i, o)
    elif kind == "tanh":
        layer = Tanh(i)
    elif kind == "scaled_tanh":
        layer = ScaledTanh(i, spec["scale"])
    else:
        raise ValueError(f"unknown layer kind {kind!r}")
    return layer


def _arr(values, shape):
    a = np.array(values, dtype=float)
    if a.shape != shape:
        raise ValueError(f"parameter shape {a.shape} != {shape}")
    return a


def mlp(sizes: Sequence[int], *, seed: int = 0, batchnorm_last: bool = False,
        out_scale: float | None = None) -> Network:
    """Dense -> BatchNorm -> ReLU blocks, with an optional scaled-tanh head.

    With ``batchnorm_last`` the final dense layer is also followed by
    BatchNorm and ReLU (a feature extractor).
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    n = len(sizes) - 1
    for k, (i, o) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(Dense(i, o, rng))
        if k < n - 1 or batchnorm_last:
            layers += [BatchNorm(o), ReLU(o, o)]
    if out_scale is not None:
        layers.append(ScaledTanh(sizes[-1], out_scale))
    return Network(layers)


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError("gradient list does not match parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1, c2 = 1 - b1 ** self.t, 1 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def save_json(obj: dict, path) -> None:
    tmp = f"{path}.tmp"
    try:
        with open(tmp, "w") as fh:
            json.dump(obj, fh)
        os.replace(tmp, path)
    except OSError as exc:
        raise OSError(f"cannot write checkpoint {path}: {exc}") from exc


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        raise OSError(f"cannot read checkpoint {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: truncated or malformed checkpoint ({exc})") from exc


def save_checkpoint(net: Network, path, meta: dict | None = None) -> None:
    save_json(net.to_dict(meta), path)


def load_checkpoint(path) -> Network:
    return Network.from_dict(load_json(path))
