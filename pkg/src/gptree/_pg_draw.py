"""Exact Polya-Gamma PG(1, c) draws via alternating-series rejection.

This is the classic rejection sampler for the Jacobi-type variable
J*(1, z): a two-piece proposal (truncated inverse-Gaussian below the cut
point, truncated exponential above it) combined with a partial-sums
accept/reject test on the alternating series expansion of the density.
A PG(1, c) draw is J*(1, |c|/2) / 4.

The same algorithm body is built twice from one source: once compiled
with numba (the hot path; Gibbs sweeps draw one omega per data point per
step) and once as plain Python over the identical numpy Generator calls.
Both backends consume the generator in the same order and use the same
double-precision arithmetic, so they produce bit-identical draws.

Backend selection: the ``GPTREE_BACKEND`` environment variable may be set
to ``numba``, ``numpy`` (pure-Python fallback), or ``auto`` (default:
numba when importable).
"""
from __future__ import annotations

import math
import os

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

# Cut point between the inverse-Gaussian and exponential proposal pieces.
_TRUNC = 0.64

_LOG_HALF = math.log(0.5)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


def _build(jit: bool):
    """Build (scalar_draw, vector_draw) with or without numba compilation."""
    if jit:
        dec = njit(cache=False, nogil=True)
    else:

        def dec(f):
            return f

    @dec
    def _log_norm_cdf(x):
        # log of the standard normal CDF; asymptotic branch far in the
        # lower tail where erfc underflows.
        if x < -30.0:
            xsq = x * x
            return -0.5 * xsq - math.log(-x) - _HALF_LOG_2PI + math.log1p(
                -1.0 / xsq + 3.0 / (xsq * xsq)
            )
        return _LOG_HALF + math.log(math.erfc(-x / math.sqrt(2.0)))

    @dec
    def _series_coef(n, x):
        # n-th coefficient a_n(x) of the alternating series, piecewise in x.
        k = (n + 0.5) * math.pi
        if x > _TRUNC:
            return k * math.exp(-0.5 * k * k * x)
        return k * math.exp(
            -1.5 * (math.log(0.5 * math.pi) + math.log(x)) - 2.0 * (n + 0.5) ** 2 / x
        )

    @dec
    def _exp_piece_mass(z):
        # Probability that a proposal draw comes from the exponential piece.
        fz = math.pi * math.pi / 8.0 + z * z / 2.0
        b = math.sqrt(1.0 / _TRUNC) * (_TRUNC * z - 1.0)
        a = -math.sqrt(1.0 / _TRUNC) * (_TRUNC * z + 1.0)
        x0 = math.log(fz) + fz * _TRUNC
        xb = x0 - z + _log_norm_cdf(b)
        xa = x0 + z + _log_norm_cdf(a)
        qdivp = 4.0 / math.pi * (math.exp(xb) + math.exp(xa))
        return 1.0 / (1.0 + qdivp)

    @dec
    def _trunc_inv_gauss(gen, z):
        # Inverse-Gaussian(mu=1/z, lambda=1) restricted to (0, TRUNC].
        if _TRUNC * z < 1.0:
            # Large mean: rejection from a scaled inverse-chi-squared
            # restricted to the interval, thinned by exp(-z^2 x / 2).
            while True:
                while True:
                    e1 = gen.standard_exponential()
                    e2 = gen.standard_exponential()
                    if e1 * e1 <= 2.0 * e2 / _TRUNC:
                        break
                x = _TRUNC / (1.0 + _TRUNC * e1) ** 2
                if gen.random() <= math.exp(-0.5 * z * z * x):
                    return x
        mu = 1.0 / z
        while True:
            y = gen.standard_normal()
            y = y * y
            mu_y = mu * y
            x = mu + 0.5 * mu * mu_y - 0.5 * mu * math.sqrt(4.0 * mu_y + mu_y * mu_y)
            if gen.random() > mu / (mu + x):
                x = mu * mu / x
            if x <= _TRUNC:
                return x

    @dec
    def _draw_pg1(gen, c):
        z = 0.5 * abs(c)
        fz = math.pi * math.pi / 8.0 + z * z / 2.0
        ratio = _exp_piece_mass(z)
        while True:
            if gen.random() < ratio:
                x = _TRUNC + gen.standard_exponential() / fz
            else:
                x = _trunc_inv_gauss(gen, z)
            s = _series_coef(0, x)
            y = gen.random() * s
            n = 0
            while True:
                n += 1
                if n % 2 == 1:
                    s -= _series_coef(n, x)
                    if y <= s:
                        return 0.25 * x
                else:
                    s += _series_coef(n, x)
                    if y > s:
                        break

    @dec
    def _draw_pg1_vector(gen, c, out):
        for i in range(c.shape[0]):
            out[i] = _draw_pg1(gen, c[i])

    return _draw_pg1, _draw_pg1_vector


_IMPLS: dict[str, tuple] = {}


def resolve_backend(backend: str | None = None) -> str:
    """Resolve a backend name ('numba' or 'numpy') from arg or environment."""
    name = backend if backend is not None else os.environ.get("GPTREE_BACKEND", "auto")
    if name == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba', 'numpy', or 'auto'")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return name


def get_impl(backend: str | None = None):
    """Return (scalar_draw, vector_draw) for the chosen backend, memoized."""
    name = resolve_backend(backend)
    if name not in _IMPLS:
        _IMPLS[name] = _build(jit=name == "numba")
    return _IMPLS[name]
