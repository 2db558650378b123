"""Shared numerical primitives.

Positive-semidefinite linear algebra with an escalating jitter schedule,
physicists' Gauss-Hermite quadrature, and the quadrature-based expectation
of a sigmoid under a Gaussian:

    E_{N(mu, var)}[sigmoid(f)] = (1/sqrt(pi)) * sum_i w_i * sigmoid(mu + sqrt(2*var) * x_i)

where (x_i, w_i) are Gauss-Hermite nodes/weights for the weight e^{-x^2}.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.hermite import hermgauss
from scipy.special import expit

from .errors import FactorizationFailure

# Relative jitter ladder: multiples of the mean diagonal tried in order.
JITTER_SCHEDULE: tuple[float, ...] = (0.0, 1e-8, 1e-6, 1e-4)

MAX_QUADRATURE_ORDER = 100


def cholesky_psd(
    m: np.ndarray,
    schedule: tuple[float, ...] = JITTER_SCHEDULE,
) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of a PSD matrix, adding jitter only if needed.

    Tries ``m + eps * I`` for each ``eps = level * mean(diag(m))`` in the
    schedule and returns ``(L, eps)`` for the first level that factorizes.

    Raises
    ------
    FactorizationFailure
        If every jitter level fails. This usually means the matrix is not
        close to PSD (or is catastrophically ill-conditioned).
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    scale = float(np.mean(np.diag(m)))
    if not np.isfinite(scale) or scale <= 0.0:
        scale = 1.0
    for level in schedule:
        eps = level * scale
        try:
            if eps == 0.0:
                L = np.linalg.cholesky(m)
            else:
                L = np.linalg.cholesky(m + eps * np.eye(m.shape[0]))
            return L, eps
        except np.linalg.LinAlgError:
            continue
    raise FactorizationFailure(
        f"Cholesky failed at all jitter levels {schedule} (dim={m.shape[0]}, "
        f"mean diagonal={scale:.3g})"
    )


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes/weights in the physicists' convention.

    Exact for polynomials of degree <= 2*order - 1 against the weight
    e^{-x^2}; the weights sum to sqrt(pi).
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int


def gauss_hermite(order: int) -> QuadratureRule:
    """Gauss-Hermite rule of the given order (1 <= order <= 100)."""
    if not 1 <= order <= MAX_QUADRATURE_ORDER:
        raise ValueError(f"quadrature order must be in [1, {MAX_QUADRATURE_ORDER}], got {order}")
    nodes, weights = hermgauss(order)
    return QuadratureRule(nodes=nodes, weights=weights, order=order)


def sigmoid(x):
    """Numerically stable logistic function."""
    return expit(x)


def expected_sigmoid(mu, var, rule: QuadratureRule):
    """E[sigmoid(f)] for f ~ N(mu, var), elementwise over broadcast inputs.

    Negative variances (tiny numerical undershoot from a predictive
    computation) are treated as zero.
    """
    mu = np.asarray(mu, dtype=np.float64)
    var = np.maximum(np.asarray(var, dtype=np.float64), 0.0)
    scalar = mu.ndim == 0 and var.ndim == 0
    mu, var = np.atleast_1d(mu), np.atleast_1d(var)
    f = mu[..., None] + np.sqrt(2.0 * var)[..., None] * rule.nodes
    vals = expit(f) @ rule.weights / np.sqrt(np.pi)
    return float(vals[0]) if scalar else vals
