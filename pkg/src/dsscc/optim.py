"""Adam and SGD parameter updates.

Both optimizers operate on named `(name, Parameter)` pairs and skip
frozen parameters (``requires_grad == False``) without touching them.
Moment buffers live in the optimizer and can be round-tripped through
the checkpoint container for bitwise training resume.
"""

import numpy as np

from .autodiff import Parameter


class MissingGradientError(RuntimeError):
    """An active (trainable) parameter has no gradient at step time."""


class SGD:
    def __init__(self, named_params, lr):
        self.params = list(named_params)
        self.lr = float(lr)

    def step(self):
        for name, p in self.params:
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise MissingGradientError(f"no gradient for active parameter {name!r}")
            p.data -= (self.lr * p.grad).astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def state_arrays(self):
        return {}

    def load_state_arrays(self, arrays):
        pass


class Adam:
    def __init__(self, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(named_params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params}

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bias1 = 1.0 - b1 ** self.step_count
        bias2 = 1.0 - b2 ** self.step_count
        for name, p in self.params:
            if not p.requires_grad:
                continue
            if p.grad is None:
                raise MissingGradientError(f"no gradient for active parameter {name!r}")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps))
            p.data -= update.astype(p.data.dtype)

    def zero_grad(self):
        for _, p in self.params:
            p.zero_grad()

    def state_arrays(self):
        """Flatten moments + step counter into named arrays (for checkpoints)."""
        out = {"adam.step": np.array([self.step_count], dtype=np.float32)}
        for name in self.m:
            out[f"adam.m.{name}"] = self.m[name]
            out[f"adam.v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays):
        self.step_count = int(arrays["adam.step"][0])
        for name in self.m:
            self.m[name] = arrays[f"adam.m.{name}"].astype(self.m[name].dtype)
            self.v[name] = arrays[f"adam.v.{name}"].astype(self.v[name].dtype)


def make_optimizer(kind, named_params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    if kind == "adam":
        return Adam(named_params, lr, beta1=beta1, beta2=beta2, eps=eps)
    if kind == "sgd":
        return SGD(named_params, lr)
    raise ValueError(f"unknown optimizer kind {kind!r}")


def freeze(module):
    module.set_trainable(False)


def unfreeze(module):
    module.set_trainable(True)


def checksum(module):
    """Order-stable byte digest of all parameters; detects any drift."""
    import hashlib

    h = hashlib.sha256()
    for name, p in sorted(module.named_parameters()):
        h.update(name.encode())
        h.update(p.data.tobytes())
    return h.hexdigest()


__all__ = ["SGD", "Adam", "make_optimizer", "freeze", "unfreeze", "checksum",
           "MissingGradientError", "Parameter"]
