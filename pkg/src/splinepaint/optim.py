"""Gradient-descent optimizers over autodiff leaf tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class Adam:
    """Adam with optional parameter groups.

    Parameters
    ----------
    params : iterable
        Either a flat iterable of :class:`Tensor` leaves or an iterable of
        groups ``{"params": [...], "lr": float}``.  Group learning rates
        override the default.
    lr, betas, eps : float, tuple, float
        The usual Adam hyperparameters.

    Parameters whose ``grad`` is ``None`` at ``step`` time are skipped and
    their moment state does not advance, so stepping a subset of parameters
    leaves the rest untouched.
    """

    def __init__(self, params, lr: float = 1e-3, betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8) -> None:
        params = list(params)
        if params and isinstance(params[0], dict):
            self.groups = [{"params": list(g["params"]), "lr": float(g.get("lr", lr))} for g in params]
        else:
            self.groups = [{"params": params, "lr": float(lr)}]
        for group in self.groups:
            for p in group["params"]:
                if not isinstance(p, Tensor):
                    raise TypeError(f"Adam expects Tensor parameters, got {type(p).__name__}")
        self.beta1, self.beta2 = betas
        self.eps = float(eps)
        self._state: dict[int, tuple[int, np.ndarray, np.ndarray]] = {}

    def step(self) -> None:
        for group in self.groups:
            lr = group["lr"]
            for p in group["params"]:
                if p.grad is None:
                    continue
                t, m, v = self._state.get(id(p), (0, np.zeros_like(p.data), np.zeros_like(p.data)))
                t += 1
                m = self.beta1 * m + (1.0 - self.beta1) * p.grad
                v = self.beta2 * v + (1.0 - self.beta2) * p.grad * p.grad
                self._state[id(p)] = (t, m, v)
                m_hat = m / (1.0 - self.beta1**t)
                v_hat = v / (1.0 - self.beta2**t)
                p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for group in self.groups:
            for p in group["params"]:
                p.grad = None
