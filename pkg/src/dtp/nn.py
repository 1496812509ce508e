"""Dense feed-forward layers with hand-written reverse-mode gradients.

Everything runs in float64 so finite-difference checks are meaningful.
Inputs may be a single vector or a batch of row vectors.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np

KINDS = ("affine", "relu", "tanh")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    input_dim: int = 0
    output_dim: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind == "affine" and (self.input_dim < 1 or self.output_dim < 1):
            raise ValueError("affine layers need positive dims")


@dataclass(frozen=True)
class Network:
    """A named stack of layers; parameters live under ``name.i.weight``/``name.i.bias``."""

    name: str
    layers: tuple

    @property
    def input_dim(self) -> int:
        return next(l.input_dim for l in self.layers if l.kind == "affine")

    @property
    def output_dim(self) -> int:
        return next(l.output_dim for l in reversed(self.layers) if l.kind == "affine")

    def param_shapes(self) -> list[tuple[str, tuple]]:
        shapes = []
        for i, layer in enumerate(self.layers):
            if layer.kind == "affine":
                shapes.append((f"{self.name}.{i}.weight", (layer.output_dim, layer.input_dim)))
                shapes.append((f"{self.name}.{i}.bias", (layer.output_dim,)))
        return shapes


def mlp(name: str, dims: Iterable[int], activation: str = "relu", final_activation: str | None = None) -> Network:
    """Affine layers between consecutive ``dims`` with ``activation`` in between."""
    dims = list(dims)
    layers = []
    for i, (a, b) in enumerate(zip(dims[:-1], dims[1:])):
        layers.append(LayerSpec("affine", a, b))
        if i < len(dims) - 2:
            layers.append(LayerSpec(activation))
    if final_activation:
        layers.append(LayerSpec(final_activation))
    return Network(name, tuple(layers))


class ParamStore:
    """Ordered mapping of parameter name to float64 array.

    Insertion order is the canonical layout used for flattening and
    checkpoints. Gradients use the same class.
    """

    def __init__(self, arrays=None):
        self.arrays: dict[str, np.ndarray] = {}
        for k, v in (arrays or {}).items():
            self.arrays[k] = np.asarray(v, dtype=np.float64)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value) -> None:
        self.arrays[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def keys(self):
        return self.arrays.keys()

    def items(self):
        return self.arrays.items()

    @property
    def n_params(self) -> int:
        return sum(a.size for a in self.arrays.values())

    def layout(self) -> list[tuple[str, tuple]]:
        return [(k, a.shape) for k, a in self.arrays.items()]

    def flatten(self) -> np.ndarray:
        if not self.arrays:
            return np.zeros(0)
        return np.concatenate([a.ravel() for a in self.arrays.values()])

    def unflatten(self, vec: np.ndarray) -> "ParamStore":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != self.n_params:
            raise ValueError(f"expected {self.n_params} values, got {vec.size}")
        out, pos = ParamStore(), 0
        for k, a in self.arrays.items():
            out[k] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        return out

    def zeros_like(self) -> "ParamStore":
        return ParamStore({k: np.zeros_like(a) for k, a in self.arrays.items()})

    def copy(self) -> "ParamStore":
        return ParamStore({k: a.copy() for k, a in self.arrays.items()})

    def check_congruent(self, other: "ParamStore") -> None:
        if self.layout() != other.layout():
            raise ValueError("parameter layouts differ")

    def subset(self, prefixes: Iterable[str]) -> "ParamStore":
        prefixes = tuple(prefixes)
        return ParamStore({k: a for k, a in self.arrays.items() if k.startswith(prefixes)})

    def update(self, other: "ParamStore") -> None:
        for k, a in other.items():
            self.arrays[k] = a

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParamStore) or self.layout() != other.layout():
            return False
        return all(np.array_equal(a, other[k]) for k, a in self.arrays.items())


GradStore = ParamStore


def init_params(net: Network, rng: np.random.Generator, scheme: str = "glorot") -> ParamStore:
    """Glorot-uniform weights and zero biases, or all zeros with ``scheme="zeros"``."""
    params = ParamStore()
    for name, shape in net.param_shapes():
        if name.endswith(".bias") or scheme == "zeros":
            params[name] = np.zeros(shape)
        else:
            fan_out, fan_in = shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            params[name] = rng.uniform(-limit, limit, size=shape)
    return params


def forward(net: Network, params: ParamStore, x) -> tuple[np.ndarray, list]:
    """Run ``net`` on ``x``; returns the output and a tape of layer inputs."""
    h = np.asarray(x, dtype=np.float64)
    tape = []
    for i, layer in enumerate(net.layers):
        tape.append(h)
        if layer.kind == "affine":
            if h.shape[-1] != layer.input_dim:
                raise ValueError(
                    f"{net.name}.{i}: expected input dim {layer.input_dim}, got {h.shape[-1]}"
                )
            h = h @ params[f"{net.name}.{i}.weight"].T + params[f"{net.name}.{i}.bias"]
        elif layer.kind == "relu":
            h = np.maximum(h, 0.0)
        else:
            h = np.tanh(h)
    tape.append(h)
    return h, tape


def backward(net: Network, params: ParamStore, tape: list, output_grad) -> tuple[GradStore, np.ndarray]:
    """Reverse-mode pass. For batched inputs the parameter gradients are summed over rows."""
    if len(tape) != len(net.layers) + 1:
        raise ValueError("tape does not belong to this network")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.shape != tape[-1].shape:
        raise ValueError(f"output_grad shape {g.shape} != output shape {tape[-1].shape}")
    grads = ParamStore()
    for i in range(len(net.layers) - 1, -1, -1):
        layer, h_in = net.layers[i], tape[i]
        if layer.kind == "affine":
            W = params[f"{net.name}.{i}.weight"]
            if g.ndim == 1:
                grads[f"{net.name}.{i}.weight"] = np.outer(g, h_in)
                grads[f"{net.name}.{i}.bias"] = g.copy()
            else:
                grads[f"{net.name}.{i}.weight"] = g.T @ h_in
                grads[f"{net.name}.{i}.bias"] = g.sum(axis=0)
            g = g @ W
        elif layer.kind == "relu":
            g = g * (h_in > 0)
        else:
            g = g * (1.0 - tape[i + 1] ** 2)
    # report gradients in layout order
    ordered = ParamStore({name: grads[name] for name, _ in net.param_shapes()})
    return ordered, g


def finite_diff_grad(loss_fn: Callable[[ParamStore], float], params: ParamStore, epsilon: float = 1e-5) -> GradStore:
    """Central differences, one parameter at a time."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    theta = params.flatten()
    grad = np.zeros_like(theta)
    for i in range(theta.size):
        orig = theta[i]
        theta[i] = orig + epsilon
        up = loss_fn(params.unflatten(theta))
        theta[i] = orig - epsilon
        down = loss_fn(params.unflatten(theta))
        theta[i] = orig
        grad[i] = (up - down) / (2 * epsilon)
    return params.unflatten(grad)


@dataclass(frozen=True)
class AdamState:
    m: ParamStore
    v: ParamStore

    @classmethod
    def zeros(cls, params: ParamStore) -> "AdamState":
        return cls(params.zeros_like(), params.zeros_like())


def adam_update_(
    params: ParamStore,
    grads: GradStore,
    state: AdamState,
    lr: float,
    beta1: float,
    beta2: float,
    eps_hat: float,
    t: int,
) -> None:
    """In-place Adam update of ``params`` and ``state`` (single-writer training loop)."""
    if t < 1:
        raise ValueError("step counter t starts at 1")
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        m, v = state.m[k], state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        tmp = np.multiply(g, g)
        tmp *= 1.0 - beta2
        v += tmp
        np.multiply(v, 1.0 / bc2, out=tmp)
        np.sqrt(tmp, out=tmp)
        tmp += eps_hat
        np.divide(m, tmp, out=tmp)
        tmp *= lr / bc1
        p -= tmp


def adam_step(
    params: ParamStore,
    grads: GradStore,
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps_hat: float = 1e-8,
    t: int = 1,
) -> tuple[ParamStore, AdamState]:
    """One bias-corrected Adam update; returns new params and moments, inputs untouched."""
    params.check_congruent(grads)
    params.check_congruent(state.m)
    params.check_congruent(state.v)
    new_p = params.copy()
    new_state = AdamState(state.m.copy(), state.v.copy())
    adam_update_(new_p, grads, new_state, lr, beta1, beta2, eps_hat, t)
    return new_p, new_state
