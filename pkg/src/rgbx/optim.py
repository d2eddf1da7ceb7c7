"""Adam optimizer and the warm-up learning-rate schedule."""

from __future__ import annotations

import numpy as np

from rgbx import kernels
from rgbx.autodiff import Tensor


def warmup_constant_lr(base_lr: float, warmup_steps: int, step: int) -> float:
    """Linear ramp from 0 to base_lr over warmup_steps, constant after."""
    if warmup_steps <= 0:
        return base_lr
    return base_lr * min(1.0, step / warmup_steps)


class Adam:
    def __init__(self, named_params: dict[str, Tensor], lr: float = 1e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(named_params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr: float | None = None):
        self.step_count += 1
        eff_lr = self.lr if lr is None else lr
        for name, p in self.params.items():
            if p.grad is None:
                continue
            kernels.adam_update(
                p.data, p.grad, self.m[name], self.v[name],
                eff_lr, self.beta1, self.beta2, self.eps, self.step_count,
            )

    def state_dict(self) -> dict:
        return {
            "step_count": self.step_count,
            "m": {k: a.copy() for k, a in self.m.items()},
            "v": {k: a.copy() for k, a in self.v.items()},
        }

    def load_state_dict(self, state: dict):
        self.step_count = int(state["step_count"])
        for k in self.m:
            self.m[k] = np.asarray(state["m"][k]).astype(self.m[k].dtype, copy=True)
            self.v[k] = np.asarray(state["v"][k]).astype(self.v[k].dtype, copy=True)
