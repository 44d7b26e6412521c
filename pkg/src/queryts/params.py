"""Named parameter store and the Adam optimizer."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError
from .tensor import Tensor


class ParamStore:
    """Flat map from dot-separated parameter path to a trainable Tensor.

    Iteration is always sorted by name so traversal order (and therefore
    checkpoint layout and optimizer behavior) is reproducible.
    """

    def __init__(self, rng_seed=0):
        self.rng_seed = int(rng_seed)
        self.rng = np.random.default_rng(self.rng_seed)
        self._params: dict[str, Tensor] = {}

    def add(self, name, value) -> Tensor:
        if name in self._params:
            raise ValidationError(f"duplicate parameter name: {name}")
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_normal(self, name, shape, std=0.02):
        return self.add(name, self.rng.normal(0.0, std, size=shape))

    def add_uniform(self, name, shape, bound):
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def add_zeros(self, name, shape):
        return self.add(name, np.zeros(shape))

    def add_ones(self, name, shape):
        return self.add(name, np.ones(shape))

    def __getitem__(self, name) -> Tensor:
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return sorted(self._params)

    def items(self):
        for name in self.names():
            yield name, self._params[name]

    def __iter__(self):
        for name in self.names():
            yield self._params[name]

    def zero_grad(self):
        for p in self:
            p.grad = None

    def count(self):
        return sum(p.data.size for p in self)

    def manifest(self):
        """(name, shape) pairs in sorted order."""
        return [(name, tuple(p.data.shape)) for name, p in self.items()]

    def state_arrays(self):
        return {name: p.data.copy() for name, p in self.items()}

    def load_arrays(self, arrays):
        for name, p in self.items():
            if name not in arrays:
                raise ValidationError(f"missing parameter in checkpoint: {name}")
            arr = np.asarray(arrays[name], dtype=np.float64)
            if arr.shape != p.data.shape:
                raise ValidationError(
                    f"shape mismatch for {name}: expected {p.data.shape}, got {arr.shape}")
            p.data = arr.copy()


class AdamState:
    """Per-parameter first/second moment buffers plus hyperparameters."""

    def __init__(self, params: ParamStore, learning_rate=1e-3,
                 beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params: ParamStore, state: AdamState):
    """One bias-corrected Adam update in place; zeroes grads afterwards."""
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise ValidationError(f"adam_step with missing grads: {missing[:3]}")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)
    params.zero_grad()
