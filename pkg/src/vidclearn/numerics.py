"""Small numeric helpers shared by the rest of the package.

Tensors are plain float64 numpy arrays in C order. Videos use the
``[C, T, H, W]`` layout, so the time axis is axis 1.
"""

from __future__ import annotations

import math

import numpy as np

PROB_FLOOR = 1e-12


class Rng:
    """Seeded random stream.

    Uniform bits come from numpy's PCG64; normals are produced with
    Box-Muller on top of them so the transform is under our control.
    """

    def __init__(self, seed: int | np.random.SeedSequence | None = 0):
        if isinstance(seed, np.random.SeedSequence):
            self._seq = seed
        else:
            self._seq = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    @classmethod
    def derive(cls, seed: int, *keys: int) -> "Rng":
        """Independent stream for ``(seed, *keys)``."""
        return cls(np.random.SeedSequence([int(seed), *[int(k) for k in keys]]))

    def uniform(self, size) -> np.ndarray:
        return self._gen.random(size)

    def integers(self, low: int, high: int) -> int:
        return int(self._gen.integers(low, high))

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def normal(self, shape) -> np.ndarray:
        return seeded_normal(shape, self)


def seeded_normal(shape, rng: Rng) -> np.ndarray:
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    n = math.prod(shape)
    if n <= 0:
        raise ValueError(f"zero-sized shape {shape}")
    m = (n + 1) // 2
    u1 = rng.uniform(m)
    u2 = rng.uniform(m)
    # u1 in [0, 1); 1 - u1 is in (0, 1] so the log is finite
    r = np.sqrt(-2.0 * np.log1p(-u1))
    theta = 2.0 * np.pi * u2
    out = np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]
    return out.reshape(shape)


def softmax(v, temperature: float = 1.0, axis: int = -1) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.size == 0:
        raise ValueError("softmax of an empty vector")
    if not temperature > 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    z = v / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def kl_divergence(p, q, axis: int = -1) -> np.ndarray | float:
    """KL(p || q) with ``q`` floored at ``PROB_FLOOR``.

    Terms with ``p == 0`` contribute nothing.
    """
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"length mismatch: {p.shape} vs {q.shape}")
    q = np.maximum(q, PROB_FLOOR)
    safe_p = np.where(p > 0, p, 1.0)
    terms = np.where(p > 0, p * (np.log(safe_p) - np.log(q)), 0.0)
    out = terms.sum(axis=axis)
    # rounding can leave tiny negatives when p ~ q
    out = np.maximum(out, 0.0)
    return float(out) if np.ndim(out) == 0 else out


def temporal_delta(x, axis: int = 1) -> np.ndarray:
    """Forward difference ``x[t+1] - x[t]`` along ``axis``."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[axis] < 2:
        raise ValueError("temporal_delta needs at least two frames")
    return np.diff(x, axis=axis)


def temporal_delta_adjoint(g, axis: int = 1) -> np.ndarray:
    """Adjoint of :func:`temporal_delta`: maps a ``T-1`` gradient to ``T`` frames."""
    g = np.moveaxis(np.asarray(g, dtype=np.float64), axis, 0)
    out = np.zeros((g.shape[0] + 1,) + g.shape[1:])
    out[:-1] -= g
    out[1:] += g
    return np.moveaxis(out, 0, axis)


def check_finite(x: np.ndarray, what: str = "tensor") -> None:
    if not np.all(np.isfinite(x)):
        raise FloatingPointError(f"non-finite values in {what}")
