"""Kernel functions over feature vectors.

All kernels optionally L2-normalize their inputs row-wise first (the
default), so dot products become cosines and squared distances live in
[0, 4]. Hyperparameters are fixed per run; selection is done by grid
search at the harness level, not by gradient optimization.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, ZeroRow

FAMILIES = ("linear", "rbf", "matern52")

_ZERO_NORM = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus fixed hyperparameters."""

    family: str = "rbf"
    lengthscale: float = 1.0
    outputscale: float = 1.0
    normalize_inputs: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.outputscale > 0:
            raise ValueError(f"outputscale must be positive, got {self.outputscale}")

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "lengthscale": self.lengthscale,
            "outputscale": self.outputscale,
            "normalize_inputs": self.normalize_inputs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(**d)


def normalize_rows(x: np.ndarray) -> np.ndarray:
    """Scale every row to unit Euclidean norm.

    Raises ZeroRow if any row has norm below 1e-12 (a degenerate feature
    vector that cannot be placed on the unit sphere).
    """
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms < _ZERO_NORM):
        bad = int(np.argmax(norms.ravel() < _ZERO_NORM))
        raise ZeroRow(f"row {bad} has norm {float(norms.ravel()[bad]):.3g} < {_ZERO_NORM}")
    return x / norms


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = np.sum(a * a, axis=1)[:, None] + np.sum(b * b, axis=1)[None, :] - 2.0 * (a @ b.T)
    return np.maximum(d, 0.0)


def gram(spec: KernelSpec, a: np.ndarray, b: np.ndarray | None = None) -> np.ndarray:
    """Kernel matrix between the rows of ``a`` and ``b``.

    With ``b=None`` the square Gram of ``a`` is returned, symmetrized and
    with exact-diagonal handling for the stationary families.
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    square = b is None
    b = a if square else np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"feature dims differ: {a.shape[1]} vs {b.shape[1]}")
    if spec.normalize_inputs:
        a = normalize_rows(a)
        b = a if square else normalize_rows(b)

    s = spec.outputscale
    if spec.family == "linear":
        k = s * (a @ b.T)
    elif spec.family == "rbf":
        k = s * np.exp(-_sq_dists(a, b) / (2.0 * spec.lengthscale**2))
    else:  # matern52
        r = np.sqrt(_sq_dists(a, b)) / spec.lengthscale
        sqrt5_r = np.sqrt(5.0) * r
        k = s * (1.0 + sqrt5_r + sqrt5_r**2 / 3.0) * np.exp(-sqrt5_r)

    if square:
        k = 0.5 * (k + k.T)
        if spec.family in ("rbf", "matern52"):
            np.fill_diagonal(k, s)
    return k


def gram_diag(spec: KernelSpec, a: np.ndarray) -> np.ndarray:
    """Diagonal k(x_i, x_i) for the rows of ``a`` (cheap, no n^2 work)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    if spec.family == "linear":
        if spec.normalize_inputs:
            a = normalize_rows(a)
        return spec.outputscale * np.sum(a * a, axis=1)
    return np.full(a.shape[0], spec.outputscale)
