"""Adam optimizer over named parameter tensors."""

import numpy as np

from .autodiff import Tensor
from .errors import ArgumentError


def adam_step(params, grads, state, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update, functional form.

    ``params`` and ``grads`` are dicts name -> numpy array; ``state`` is a dict
    with keys ``t``, ``m``, ``v`` (``m``/``v`` are name-keyed moment dicts,
    created on first use). Returns (new_params, new_state); inputs untouched.
    """
    if set(params) != set(grads):
        raise ArgumentError("params and grads must have identical keys")
    t = state.get("t", 0) + 1
    m = dict(state.get("m", {}))
    v = dict(state.get("v", {}))
    new_params = {}
    for name, p in params.items():
        g = np.asarray(grads[name])
        if g.shape != np.asarray(p).shape:
            raise ArgumentError(f"shape mismatch for parameter {name!r}")
        m_t = beta1 * m.get(name, np.zeros_like(p)) + (1 - beta1) * g
        v_t = beta2 * v.get(name, np.zeros_like(p)) + (1 - beta2) * g * g
        m_hat = m_t / (1 - beta1 ** t)
        v_hat = v_t / (1 - beta2 ** t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + eps)
        m[name] = m_t
        v[name] = v_t
    return new_params, {"t": t, "m": m, "v": v}


class Adam:
    """Stateful wrapper around adam_step for Tensor parameters.

    Updates tensors in place (their .data) so the graph-building code can keep
    referencing the same leaves across steps.
    """

    def __init__(self, params, lr=1e-5, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        for name, p in self.params.items():
            if not isinstance(p, Tensor):
                raise ArgumentError(f"parameter {name!r} is not a Tensor")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {}

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        values = {k: p.data for k, p in self.params.items()}
        grads = {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for k, p in self.params.items()}
        new_values, self.state = adam_step(
            values, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
        for k, p in self.params.items():
            p.data = new_values[k].astype(p.data.dtype)
