"""Uniform scalar quantization and its additive-noise training proxy."""

import numpy as np

from .autodiff import Tensor


class NoiseRng:
    """Counter-based (Philox) uniform noise source.

    Identical seeds give identical streams on every platform; `split`
    derives independent per-worker streams from the same root seed.
    """

    def __init__(self, seed, _seq=None):
        self.seed = int(seed)
        self._seq = _seq if _seq is not None else np.random.SeedSequence(self.seed)
        self._gen = np.random.Generator(np.random.Philox(self._seq))

    def split(self, n):
        return [NoiseRng(self.seed, _seq=child) for child in self._seq.spawn(n)]

    def uniform_unit(self, shape):
        """i.i.d. U(-0.5, 0.5) samples, open at both ends."""
        u = self._gen.random(shape) - 0.5
        # random() can return exactly 0.0; remap so |u| < 0.5 strictly
        return np.where(u == -0.5, 0.0, u)

    def integers(self, low, high, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n):
        return self._gen.permutation(n)

    def standard_normal(self, shape):
        return self._gen.standard_normal(shape)


def quantize(y):
    """Round to nearest integer, ties away from zero."""
    arr = y.data if isinstance(y, Tensor) else np.asarray(y)
    if not np.all(np.isfinite(arr)):
        raise ValueError("quantize: non-finite input")
    return np.sign(arr) * np.floor(np.abs(arr) + 0.5)


def noise_proxy(y, rng):
    """y + U(-0.5, 0.5) noise; gradient w.r.t. y is the identity."""
    if isinstance(y, Tensor):
        u = rng.uniform_unit(y.shape).astype(y.data.dtype)
        return y + Tensor(u, dtype=y.data.dtype)
    y = np.asarray(y)
    return y + rng.uniform_unit(y.shape).astype(y.dtype)
