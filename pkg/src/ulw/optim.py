"""Adam with bias correction, operating in place on a ParamStore."""

from __future__ import annotations

import numpy as np

from ulw.errors import ConfigError, UsageError
from ulw.params import ParamStore

DEFAULT_LR = 1e-3
DEFAULT_BETA1 = 0.9
DEFAULT_BETA2 = 0.999
DEFAULT_EPS = 1e-8


class Adam:
    """Standard Adam update; state is allocated eagerly for every parameter.

    Iteration follows the store's sorted name order, so updates are
    deterministic regardless of how parameters were registered.
    """

    def __init__(self, store: ParamStore, lr: float = DEFAULT_LR,
                 beta1: float = DEFAULT_BETA1, beta2: float = DEFAULT_BETA2,
                 eps: float = DEFAULT_EPS):
        if lr <= 0:
            raise ConfigError(f"adam: lr must be positive, got {lr!r}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"adam: betas must lie in [0,1), got ({beta1!r}, {beta2!r})")
        if eps <= 0:
            raise ConfigError(f"adam: eps must be positive, got {eps!r}")
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros_like(t.data) for name, t in store.items()}
        self._v = {name: np.zeros_like(t.data) for name, t in store.items()}

    def step(self) -> None:
        """Apply one update from the gradients currently on the store."""
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for name, tensor in self.store.items():
            if tensor.grad is None:
                raise UsageError(f"adam: parameter {name!r} has no gradient; "
                                 "run backward before step")
            grad = tensor.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * (grad * grad)
            m_hat = m / bias1
            v_hat = v / bias2
            tensor.data -= (self.lr * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                tensor.data.dtype)
