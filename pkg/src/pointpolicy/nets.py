"""Parameter storage and small feed-forward building blocks.

Parameters live in a plain ``dict[str, np.ndarray]`` so optimizers and
checkpoints can treat them uniformly. For one forward/backward pass the store
is bound to a fresh tape, which wraps every array in a tracked leaf tensor.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import ConfigError

__all__ = ["init_linear", "linear_param_names", "Binding", "linear", "mlp", "mlp_param_shapes"]


def init_linear(rng: np.random.Generator, fan_in: int, fan_out: int):
    """Kaiming-uniform weight and zero bias for a ReLU network layer."""
    bound = np.sqrt(6.0 / fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


def linear_param_names(name: str) -> tuple[str, str]:
    return f"{name}.w", f"{name}.b"


def mlp_param_shapes(name: str, widths: list[int]) -> dict[str, tuple[int, ...]]:
    """Shapes for an MLP with layer widths ``[in, h1, ..., out]``."""
    shapes: dict[str, tuple[int, ...]] = {}
    for i in range(len(widths) - 1):
        wname, bname = linear_param_names(f"{name}.{i}")
        shapes[wname] = (widths[i], widths[i + 1])
        shapes[bname] = (widths[i + 1],)
    return shapes


class Binding:
    """Tape-bound view of a parameter store.

    Binds each array lazily to a tracked leaf on ``tape``; after backward the
    per-name gradients are read back with :meth:`grads`.
    """

    def __init__(self, params: dict[str, np.ndarray], tape: T.Tape) -> None:
        self._params = params
        self._tape = tape
        self._leaves: dict[str, T.Tensor] = {}

    def __getitem__(self, name: str) -> T.Tensor:
        leaf = self._leaves.get(name)
        if leaf is None:
            try:
                arr = self._params[name]
            except KeyError:
                raise ConfigError(f"missing parameter '{name}'") from None
            leaf = self._tape.leaf(arr)
            self._leaves[name] = leaf
        return leaf

    def grads(self) -> dict[str, np.ndarray]:
        """Gradient per bound parameter; unbound or unused leaves map to zeros."""
        out = {}
        for name, arr in self._params.items():
            leaf = self._leaves.get(name)
            if leaf is None or leaf.grad is None:
                out[name] = np.zeros_like(arr)
            else:
                out[name] = leaf.grad
        return out


def linear(bound: Binding, name: str, x: T.Tensor) -> T.Tensor:
    wname, bname = linear_param_names(name)
    return T.add(T.matmul(x, bound[wname]), bound[bname])


def mlp(bound: Binding, name: str, x: T.Tensor, n_layers: int) -> T.Tensor:
    """Apply ``n_layers`` linear layers with ReLU between them (none after the last)."""
    for i in range(n_layers):
        x = linear(bound, f"{name}.{i}", x)
        if i < n_layers - 1:
            x = T.relu(x)
    return x
