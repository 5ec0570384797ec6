"""Dense networks in numpy: forward/backward, batch norm, optimisers, schedules.

Weights are stored ``(out, in)`` and applied as ``x @ W.T``. A layer is
``dense -> optional batch norm -> activation``. The trainable arrays of a
network are views into one flat vector (``Mlp.flat``), and gradients come
back in the same layout, so updates touch a single array.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("softplus", "relu", "tanh", "sigmoid", "linear", "shifted_tanh")
SNAPSHOT_VERSION = 1
_EDGE = 1e-15


class DimensionMismatch(ValueError):
    pass


class ShapeMismatch(DimensionMismatch):
    """Two networks that should mirror each other do not."""


class StaleCache(ValueError):
    pass


def _sigmoid(x):
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "softplus":
        return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "linear":
        return x
    if name == "shifted_tanh":
        # open interval even where tanh rounds to +-1
        return np.clip((np.tanh(x + 2.0) + 1.0) / 2.0, _EDGE, 1.0 - _EDGE)
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Derivative of the activation at pre-activation ``x`` (output ``y``)."""
    if name == "softplus":
        return _sigmoid(x)
    if name == "relu":
        return (x > 0).astype(x.dtype)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "linear":
        return np.ones_like(x)
    if name == "shifted_tanh":
        t = np.tanh(x + 2.0)
        return 0.5 * (1.0 - t * t)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class BatchNorm:
    scale: np.ndarray
    offset: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.99
    eps: float = 1e-8

    @classmethod
    def fresh(cls, width: int, momentum: float = 0.99) -> "BatchNorm":
        return cls(np.ones(width), np.zeros(width), np.zeros(width), np.ones(width), momentum)


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    activation: str
    bn: BatchNorm | None = None

    @property
    def n_in(self) -> int:
        return self.W.shape[1]

    @property
    def n_out(self) -> int:
        return self.W.shape[0]


@dataclass
class Cache:
    mode: str
    shapes: tuple
    inputs: list = field(default_factory=list)
    pre_bn: list = field(default_factory=list)
    xhat: list = field(default_factory=list)
    inv_std: list = field(default_factory=list)
    pre_act: list = field(default_factory=list)
    outputs: list = field(default_factory=list)


class Gradients(list):
    """Per-parameter gradient arrays that are views of one flat vector."""

    def __init__(self, arrays, flat: np.ndarray):
        super().__init__(arrays)
        self.flat = flat


class Mlp:
    """Stack of dense layers with optional batch norm before each activation."""

    def __init__(self, layers: list[Layer]):
        for a, b in zip(layers, layers[1:]):
            if a.n_out != b.n_in:
                raise DimensionMismatch(f"layer widths {a.n_out} -> {b.n_in} do not chain")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
        self.layers = layers
        # optional fixed input standardisation, (x - shift) / scale; off by default
        self.input_shift: np.ndarray | None = None
        self.input_scale: np.ndarray | None = None
        self._bind()

    def _bind(self) -> None:
        # pack every trainable array into one vector and re-point the layers
        # at views of it, so optimisers and soft updates act on a single array
        arrays = self._param_arrays()
        self.flat = np.concatenate([np.asarray(a, dtype=float).ravel() for a in arrays])
        self._slices = []
        start = 0
        for a in arrays:
            self._slices.append((start, start + a.size, a.shape))
            start += a.size
        views = self._views(self.flat)
        k = 0
        for layer in self.layers:
            layer.W, layer.b = views[k], views[k + 1]
            k += 2
            if layer.bn is not None:
                layer.bn.scale, layer.bn.offset = views[k], views[k + 1]
                k += 2

    # pickling and deepcopy store layers only; the flat vector is rebuilt
    def __getstate__(self):
        return {"layers": self.layers, "input_shift": self.input_shift, "input_scale": self.input_scale}

    def __setstate__(self, state):
        self.layers = state["layers"]
        self.input_shift = state.get("input_shift")
        self.input_scale = state.get("input_scale")
        self._bind()

    def set_input_standardization(self, shift, scale) -> None:
        """Feed ``(x - shift) / scale`` to the first layer; ``None`` switches it off."""
        if shift is None:
            self.input_shift = self.input_scale = None
            return
        shift = np.broadcast_to(np.asarray(shift, dtype=float), (self.n_in,)).copy()
        scale = np.broadcast_to(np.asarray(scale, dtype=float), (self.n_in,)).copy()
        if np.any(scale <= 0):
            raise ValueError("input scale must be positive")
        self.input_shift, self.input_scale = shift, scale

    def _views(self, vec: np.ndarray) -> list[np.ndarray]:
        return [vec[a:b].reshape(shape) for a, b, shape in self._slices]

    @property
    def size(self) -> int:
        return self.flat.size

    @classmethod
    def build(cls, sizes: list[int], activations: list[str], batchnorm: list[bool],
              rng: np.random.Generator, out_init: float = 3e-3, bn_momentum: float = 0.99) -> "Mlp":
        """Uniform init: hidden layers +-1/sqrt(fan_in), output layer +-``out_init``."""
        if len(sizes) - 1 != len(activations) or len(activations) != len(batchnorm):
            raise DimensionMismatch("sizes/activations/batchnorm lengths disagree")
        layers = []
        n = len(activations)
        for i in range(n):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            bound = out_init if i == n - 1 else 1.0 / np.sqrt(fan_in)
            W = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            bn = BatchNorm.fresh(fan_out, bn_momentum) if batchnorm[i] else None
            layers.append(Layer(W, b, activations[i], bn))
        return cls(layers)

    @property
    def n_in(self) -> int:
        return self.layers[0].n_in

    @property
    def n_out(self) -> int:
        return self.layers[-1].n_out

    def shapes(self) -> tuple:
        return tuple(layer.W.shape for layer in self.layers)

    def has_batchnorm(self) -> bool:
        return any(layer.bn is not None for layer in self.layers)

    # parameters are exposed as a flat list in a fixed order:
    # per layer W, b, then (scale, offset) if batch norm is present
    def params(self) -> list[np.ndarray]:
        return self._param_arrays()

    def _param_arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.W, layer.b]
            if layer.bn is not None:
                out += [layer.bn.scale, layer.bn.offset]
        return out

    def stats(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            if layer.bn is not None:
                out += [layer.bn.running_mean, layer.bn.running_var]
        return out

    def copy(self) -> "Mlp":
        return copy.deepcopy(self)

    def forward(self, x: np.ndarray, mode: str = "eval", update_stats: bool = True):
        """Return ``(outputs, cache)``.

        ``mode="train"`` normalises with batch statistics and, unless
        ``update_stats`` is false, folds them into the running averages.
        ``mode="eval"`` uses the running averages and leaves the net untouched.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.n_in:
            raise DimensionMismatch(f"expected input width {self.n_in}, got {x.shape[1]}")
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
        if mode == "train" and self.has_batchnorm() and x.shape[0] < 2:
            raise DimensionMismatch("train-mode batch norm needs a batch of at least 2")
        cache = Cache(mode=mode, shapes=(x.shape, self.shapes()))
        if self.input_shift is not None:
            x = (x - self.input_shift) / self.input_scale
        h = x
        for layer in self.layers:
            cache.inputs.append(h)
            z = h @ layer.W.T + layer.b
            cache.pre_bn.append(z)
            bn = layer.bn
            if bn is None:
                u = z
                cache.xhat.append(None)
                cache.inv_std.append(None)
            else:
                if mode == "train":
                    n = z.shape[0]
                    mu = z.sum(axis=0) / n
                    dev = z - mu
                    var = (dev * dev).sum(axis=0) / n
                    if update_stats:
                        m = bn.momentum
                        bn.running_mean *= m
                        bn.running_mean += (1 - m) * mu
                        bn.running_var *= m
                        bn.running_var += (1 - m) * var
                    inv = 1.0 / np.sqrt(var + bn.eps)
                    xhat = dev * inv
                else:
                    inv = 1.0 / np.sqrt(bn.running_var + bn.eps)
                    xhat = (z - bn.running_mean) * inv
                u = bn.scale * xhat + bn.offset
                cache.xhat.append(xhat)
                cache.inv_std.append(inv)
            cache.pre_act.append(u)
            h = activate(layer.activation, u)
            cache.outputs.append(h)
        return h, cache

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, "eval")[0]

    def backward(self, cache: Cache, upstream: np.ndarray, param_grads: bool = True):
        """Gradients of ``sum(upstream * outputs)``.

        Returns ``(param_grads, input_grad)`` with ``param_grads`` aligned to
        :meth:`params`, or ``None`` when only the input gradient is wanted.
        """
        upstream = np.asarray(upstream, dtype=float)
        if cache.shapes[1] != self.shapes() or upstream.shape != cache.outputs[-1].shape:
            raise StaleCache("cache does not match this network or the upstream gradient")
        if param_grads:
            gflat = np.empty(self.size)
            views = self._views(gflat)
            k = len(views)
        g = upstream
        for i in reversed(range(len(self.layers))):
            layer = self.layers[i]
            g = g * activation_grad(layer.activation, cache.pre_act[i], cache.outputs[i])
            bn = layer.bn
            if bn is None:
                dz = g
            else:
                xhat = cache.xhat[i]
                inv = cache.inv_std[i]
                d_scale = (g * xhat).sum(axis=0)
                d_offset = g.sum(axis=0)
                if cache.mode == "train":
                    # batch statistics depend on every row of the batch
                    n = g.shape[0]
                    dz = (bn.scale * inv / n) * (n * g - d_offset - xhat * d_scale)
                else:
                    dz = g * (bn.scale * inv)
            if param_grads:
                if bn is not None:
                    k -= 2
                    views[k][...] = d_scale
                    views[k + 1][...] = d_offset
                k -= 2
                np.matmul(dz.T, cache.inputs[i], out=views[k])
                views[k + 1][...] = dz.sum(axis=0)
            g = dz @ layer.W
        if self.input_scale is not None:
            g = g / self.input_scale
        if not param_grads:
            return None, g
        return Gradients(views, gflat), g

    def flatten(self, grads) -> np.ndarray:
        """Gradient list (aligned to :meth:`params`) as one vector."""
        flat = getattr(grads, "flat", None)
        if flat is not None and flat.size == self.size:
            return flat
        if len(grads) != len(self._slices) or any(
                np.shape(g) != shape for g, (_, _, shape) in zip(grads, self._slices)):
            raise DimensionMismatch("gradient shapes do not match parameters")
        return np.concatenate([np.ravel(g) for g in grads])

    def sgd_step(self, grads, lr: float) -> None:
        g = self.flatten(grads)
        if lr != 0:
            self.flat -= lr * g

    # -- persistence --------------------------------------------------------

    def to_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = {f"{prefix}n_layers": np.array(len(self.layers))}
        if self.input_shift is not None:
            out[f"{prefix}input_shift"] = self.input_shift
            out[f"{prefix}input_scale"] = self.input_scale
        for i, layer in enumerate(self.layers):
            p = f"{prefix}{i}_"
            out[p + "W"] = layer.W
            out[p + "b"] = layer.b
            out[p + "act"] = np.array(layer.activation)
            if layer.bn is not None:
                bn = layer.bn
                out[p + "bn_scale"] = bn.scale
                out[p + "bn_offset"] = bn.offset
                out[p + "bn_mean"] = bn.running_mean
                out[p + "bn_var"] = bn.running_var
                out[p + "bn_cfg"] = np.array([bn.momentum, bn.eps])
        return out

    @classmethod
    def from_arrays(cls, arrays, prefix: str = "") -> "Mlp":
        layers = []
        for i in range(int(arrays[f"{prefix}n_layers"])):
            p = f"{prefix}{i}_"
            bn = None
            if p + "bn_scale" in arrays:
                momentum, eps = arrays[p + "bn_cfg"]
                bn = BatchNorm(
                    np.array(arrays[p + "bn_scale"]),
                    np.array(arrays[p + "bn_offset"]),
                    np.array(arrays[p + "bn_mean"]),
                    np.array(arrays[p + "bn_var"]),
                    float(momentum),
                    float(eps),
                )
            layers.append(Layer(np.array(arrays[p + "W"]), np.array(arrays[p + "b"]), str(arrays[p + "act"]), bn))
        net = cls(layers)
        if f"{prefix}input_shift" in arrays:
            net.set_input_standardization(arrays[f"{prefix}input_shift"], arrays[f"{prefix}input_scale"])
        return net

    def save(self, path: str | Path) -> None:
        np.savez(path, version=np.array(SNAPSHOT_VERSION), **self.to_arrays())

    @classmethod
    def load(cls, path: str | Path) -> "Mlp":
        with np.load(path) as data:
            if int(data["version"]) != SNAPSHOT_VERSION:
                raise ValueError(f"unsupported snapshot version {int(data['version'])}")
            return cls.from_arrays(data)


# Functional aliases matching the operation names used across the package.

def forward(net: Mlp, batch, mode: str = "eval"):
    return net.forward(batch, mode)


def backward(net: Mlp, cache: Cache, upstream):
    return net.backward(cache, upstream)


def sgd_step(net: Mlp, grads, lr: float) -> None:
    net.sgd_step(grads, lr)


def soft_update(online: Mlp, target: Mlp, tau: float) -> None:
    """Blend trainable parameters; copy batch-norm running statistics."""
    if online.shapes() != target.shapes() or online.size != target.size:
        raise ShapeMismatch("online and target networks differ in shape")
    target.flat *= 1.0 - tau
    target.flat += tau * online.flat
    for p, q in zip(online.stats(), target.stats()):
        q[...] = p


def grad_inverse(action_grad, action, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """Damp a cost gradient w.r.t. a bounded action near the bounds.

    ``action_grad`` is the gradient of the quantity being *minimised*, so a
    negative entry pushes the action up. Upward pushes are scaled by the
    remaining headroom ``(high - a)/(high - low)``, downward ones by
    ``(a - low)/(high - low)``.
    """
    g = np.asarray(action_grad, dtype=float)
    a = np.asarray(action, dtype=float)
    width = high - low
    up = (high - a) / width
    down = (a - low) / width
    return np.where(g < 0, g * up, g * down)


@dataclass(frozen=True)
class LinearSchedule:
    upper: float
    lower: float
    horizon_slots: int = 10000

    def value(self, t: int) -> float:
        if t < 0:
            raise ValueError("t must be non-negative")
        frac = min(t, self.horizon_slots) / self.horizon_slots
        return self.upper - (self.upper - self.lower) * frac


def schedule_value(s: LinearSchedule, t: int) -> float:
    return s.value(t)


class Sgd:
    """Plain gradient descent, ``theta <- theta - lr * grad``."""

    def __init__(self, net: Mlp):
        self.net = net

    def step(self, grads: list[np.ndarray], lr: float) -> None:
        self.net.sgd_step(grads, lr)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def load_state_arrays(self, arrays: dict) -> None:
        pass


class Adam:
    """Adam update for one network; ``step`` mirrors :meth:`Mlp.sgd_step`."""

    def __init__(self, net: Mlp, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.net = net
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(net.size)
        self.v = np.zeros(net.size)
        self.t = 0

    def step(self, grads, lr: float) -> None:
        g = self.net.flatten(grads)
        if lr == 0:
            return
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr = np.sqrt(1 - b2 ** self.t) / (1 - b1 ** self.t)
        self.m *= b1
        self.m += (1 - b1) * g
        self.v *= b2
        self.v += (1 - b2) * g * g
        self.net.flat -= (lr * corr) * self.m / (np.sqrt(self.v) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"t": np.array(self.t), "m": self.m, "v": self.v}

    def load_state_arrays(self, arrays: dict) -> None:
        self.t = int(arrays["t"])
        self.m = np.array(arrays["m"], dtype=float)
        self.v = np.array(arrays["v"], dtype=float)


OPTIMIZERS = {"sgd": Sgd, "adam": Adam}
