"""Polya-Gamma PG(1, c) sampling and moments.

The augmentation variable omega of the logistic likelihood has a PG
distribution; its conditional given the latent value f is PG(1, f), and
its mean enters the variational updates through

    E[PG(b, c)] = b / (2c) * tanh(c / 2),   with limit b / 4 at c = 0.
"""
from __future__ import annotations

import numpy as np

from ._pg_draw import get_impl, resolve_backend
from .rng import RngStream

# Below this |c|, use the series tanh(c/2)/(2c) = 1/4 - c^2/48 + O(c^4).
_SMALL_C = 1e-4


def active_backend() -> str:
    """Name of the draw backend in use ('numba' or 'numpy')."""
    return resolve_backend()


def pg_mean(b, c):
    """Mean of PG(b, c): b/(2c) * tanh(c/2), elementwise."""
    b = np.asarray(b, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    scalar = b.ndim == 0 and c.ndim == 0
    b, c = np.broadcast_arrays(np.atleast_1d(b), np.atleast_1d(c))
    out = np.empty_like(c, dtype=np.float64)
    small = np.abs(c) < _SMALL_C
    out[small] = b[small] * (0.25 - c[small] ** 2 / 48.0)
    cl = c[~small]
    out[~small] = b[~small] * np.tanh(cl / 2.0) / (2.0 * cl)
    return float(out[0]) if scalar else out


def _as_generator(rng) -> np.random.Generator:
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise TypeError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def sample_pg1(c: float, rng) -> float:
    """One exact draw from PG(1, c).

    ``rng`` may be an RngStream (a fresh generator is opened at the start
    of the stream) or a live numpy Generator (consumed in place).
    """
    gen = _as_generator(rng)
    scalar_draw, _ = get_impl()
    return scalar_draw(gen, float(c))


def sample_pg_vector(c, rng) -> np.ndarray:
    """Independent PG(1, c_i) draws, one per entry of ``c``."""
    gen = _as_generator(rng)
    c = np.ascontiguousarray(c, dtype=np.float64)
    out = np.empty_like(c)
    if c.size:
        _, vector_draw = get_impl()
        vector_draw(gen, c, out)
    return out
