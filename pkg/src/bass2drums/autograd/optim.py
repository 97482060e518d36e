"""Adam with bias correction over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class Adam:
    """Standard Adam: decayed first/second moments with bias correction.

    Parameters are a name -> Tensor mapping; names key the moment arrays so
    optimizer state can be checkpointed and restored exactly.  A parameter
    whose .grad is None is skipped entirely for that step.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 2e-4,
                 beta1: float = 0.5, beta2: float = 0.999, eps: float = 1e-8):
        if lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= beta1 < 1 or not 0 <= beta2 < 1:
            raise ValueError("betas must lie in [0, 1)")
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            g = g.astype(p.data.dtype, copy=False)
            m = self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            v = self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = m / bc1
            v_hat = v / bc2
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state_arrays(self, prefix: str = "") -> dict[str, np.ndarray]:
        """Moment arrays plus the step counter, for checkpointing."""
        out: dict[str, np.ndarray] = {}
        for name in self.params:
            out[f"{prefix}m.{name}"] = self.m[name]
            out[f"{prefix}v.{name}"] = self.v[name]
        out[f"{prefix}t"] = np.asarray([self.t], dtype=np.int64)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], prefix: str = "") -> None:
        for name, p in self.params.items():
            m = arrays[f"{prefix}m.{name}"]
            v = arrays[f"{prefix}v.{name}"]
            if m.shape != p.data.shape or v.shape != p.data.shape:
                raise ValueError(f"optimizer state for {name!r} has wrong shape")
            self.m[name] = m.astype(p.data.dtype, copy=False)
            self.v[name] = v.astype(p.data.dtype, copy=False)
        self.t = int(arrays[f"{prefix}t"][0])
