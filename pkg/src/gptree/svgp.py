"""Sparse variational binary GP at a tree node over shared inducing points.

The variational family is mean-field: q(omega) = PG(1, c) per point and
q(fbar) = N(mu_tilde, Sigma_tilde) over the latent values at the inducing
locations. The bound on the node log marginal splits into an expectation
term over the data batch, a Gaussian KL at the inducing points, and a
per-point PG KL:

    KL(PG(1, c) || PG(1, 0)) = log cosh(c/2) - (c/4) tanh(c/2).

State is kept in natural form (eta = Sigma~^-1 mu~, H = -1/2 Sigma~^-1)
because the stochastic natural-gradient update is then a convex step
toward the per-batch coordinate-ascent target, which preserves positive
definiteness for any learning rate in (0, 1]. The moment form
(mu_tilde, Sigma_tilde) is cached alongside and refreshed after every
step; at initialization the cache holds the prior (0, K_mm) exactly.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .clustering import kmeans
from .errors import EmptyClass, PDViolation
from .kernels import KernelSpec, gram, gram_diag
from .numerics import QuadratureRule, cholesky_psd, expected_sigmoid, gauss_hermite, sigmoid
from .pg import pg_mean
from .rng import RngStream

_LOG2 = np.log(2.0)


@dataclass(frozen=True)
class VIConfig:
    epochs: int = 50
    batch_size: int = 256
    natural_lr: float = 0.05
    predict_mode: str = "quadrature"
    quadrature_order: int = 20

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if not 0.0 < self.natural_lr <= 1.0:
            raise ValueError("natural_lr must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "natural_lr": self.natural_lr,
            "predict_mode": self.predict_mode,
            "quadrature_order": self.quadrature_order,
        }


@dataclass(frozen=True)
class InducingStore:
    """Shared inducing locations with the class each one represents."""

    xbar: np.ndarray
    ybar: np.ndarray

    def rows_for_classes(self, classes) -> np.ndarray:
        mask = np.isin(self.ybar, np.asarray(list(classes)))
        return np.flatnonzero(mask)

    @property
    def n_inducing(self) -> int:
        return self.xbar.shape[0]


@dataclass(frozen=True)
class BatchAugState:
    """Variational PG parameters for one batch: c_i >= 0 and
    lambda_i = E[omega_i] = tanh(c_i/2) / (2 c_i)."""

    c: np.ndarray
    lam: np.ndarray


def init_inducing(
    features: np.ndarray,
    labels: np.ndarray,
    m_per_class: int,
    stream: RngStream,
) -> InducingStore:
    """Per-class k-means++ centers as inducing locations.

    Classes with at most m_per_class samples contribute the samples
    themselves. Class c clusters with the sub-stream ``stream.child(c)``.
    """
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    classes = np.unique(labels)
    xs, ys = [], []
    for cls in classes:
        xc = features[labels == cls]
        if xc.shape[0] == 0:
            raise EmptyClass(f"class {cls} has no samples")
        if xc.shape[0] <= m_per_class:
            centers = xc.copy()
        else:
            centers, _ = kmeans(xc, m_per_class, stream.child(int(cls)).generator())
        xs.append(centers)
        ys.append(np.full(centers.shape[0], cls, dtype=np.int64))
    return InducingStore(xbar=np.vstack(xs), ybar=np.concatenate(ys))


class NodeVIModel:
    """Variational node state over the inducing rows relevant to it."""

    def __init__(self, x_ind: np.ndarray, rows: np.ndarray, spec: KernelSpec):
        self.rows = np.asarray(rows, dtype=np.int64)
        self.x_ind = np.asarray(x_ind, dtype=np.float64)
        self.spec = spec
        m = self.rows.size

        kmm = gram(spec, self.x_ind)
        chol, eps = cholesky_psd(kmm)
        if eps > 0.0:
            kmm = kmm + eps * np.eye(m)
        self.kmm = kmm
        self.chol_kmm = chol
        inv_l = solve_triangular(chol, np.eye(m), lower=True)
        self.kmm_inv = _sym(inv_l.T @ inv_l)
        self.logdet_kmm = 2.0 * float(np.sum(np.log(np.diag(chol))))

        # Natural state at the prior, with the moment cache exact.
        self.eta = np.zeros(m)
        self.h = -0.5 * self.kmm_inv
        self.mu = np.zeros(m)
        self.sigma = kmm.copy()
        self.variance_clamps = 0

    @classmethod
    def from_state(cls, x_ind, rows, spec, eta, h, mu, sigma) -> "NodeVIModel":
        """Rebuild a node from persisted variational state."""
        model = cls(x_ind, rows, spec)
        model.eta = np.asarray(eta, dtype=np.float64)
        model.h = np.asarray(h, dtype=np.float64)
        model.mu = np.asarray(mu, dtype=np.float64)
        model.sigma = np.asarray(sigma, dtype=np.float64)
        return model

    @property
    def n_inducing(self) -> int:
        return self.rows.size

    def _projection(self, x_batch: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """V = K_mm^-1 K_mb (m x b) and the conditional variance diagonal
        Q_ii = k_ii - k_im K_mm^-1 k_mi (clamped at 0)."""
        k_bm = gram(self.spec, np.atleast_2d(x_batch), self.x_ind)
        v = solve_triangular(self.chol_kmm, k_bm.T, lower=True)
        v = solve_triangular(self.chol_kmm.T, v, lower=False)
        q_diag = gram_diag(self.spec, x_batch) - np.sum(k_bm.T * v, axis=0)
        return v, np.maximum(q_diag, 0.0)


def init_node(store: InducingStore, classes, spec: KernelSpec) -> NodeVIModel:
    """Fresh prior-state node over the inducing points of ``classes``."""
    rows = store.rows_for_classes(classes)
    return NodeVIModel(store.xbar[rows], rows, spec)


def update_c(model: NodeVIModel, x_batch: np.ndarray) -> BatchAugState:
    """Closed-form optimum of the per-point PG parameters:
    c_i = sqrt(E_q[f_i^2]), the root-mean-square of the latent marginal."""
    v, q_diag = model._projection(x_batch)
    c_sq = q_diag + np.sum(v * (model.sigma @ v), axis=0) + (model.mu @ v) ** 2
    c = np.sqrt(np.maximum(c_sq, 0.0))
    return BatchAugState(c=c, lam=pg_mean(1.0, c))


def _log_cosh(x: np.ndarray) -> np.ndarray:
    ax = np.abs(x)
    return ax + np.log1p(np.exp(-2.0 * ax)) - _LOG2


def elbo_terms(
    model: NodeVIModel,
    x_batch: np.ndarray,
    y_batch: np.ndarray,
    aug: BatchAugState,
    n_total: int,
) -> tuple[float, float, float]:
    """(expectation term, Gaussian KL, PG KL), each already minibatch-scaled.

    The expectation and PG-KL sums run over the batch and are scaled by
    n_total / batch so the bound is unbiased for the full-data value; the
    Gaussian KL appears once, unscaled.
    """
    kappa = np.asarray(y_batch, dtype=np.float64) - 0.5
    scale = n_total / kappa.shape[0]
    v, q_diag = model._projection(x_batch)

    mean_f = model.mu @ v
    second_moment = q_diag + np.sum(v * (model.sigma @ v), axis=0) + mean_f**2
    expectation = scale * float(
        np.sum(kappa * mean_f - 0.5 * aug.lam * second_moment - _LOG2)
    )

    m = model.n_inducing
    chol_sigma, _ = cholesky_psd(model.sigma)
    logdet_sigma = 2.0 * float(np.sum(np.log(np.diag(chol_sigma))))
    kl_gauss = 0.5 * (
        float(np.trace(model.kmm_inv @ model.sigma))
        + float(model.mu @ model.kmm_inv @ model.mu)
        - m
        - logdet_sigma
        + model.logdet_kmm
    )

    half_c = 0.5 * aug.c
    kl_pg = scale * float(np.sum(_log_cosh(half_c) - 0.5 * half_c * np.tanh(half_c)))
    return expectation, kl_gauss, kl_pg


def elbo(model, x_batch, y_batch, aug, n_total: int) -> float:
    """Minibatch-scaled evidence lower bound for this node."""
    expectation, kl_gauss, kl_pg = elbo_terms(model, x_batch, y_batch, aug, n_total)
    return expectation - kl_gauss - kl_pg


def natural_gradient_step(
    model: NodeVIModel,
    x_batch: np.ndarray,
    y_batch: np.ndarray,
    aug: BatchAugState,
    lr: float,
    n_total: int,
) -> NodeVIModel:
    """Stochastic natural-gradient ascent step on (eta, H).

    The gradients are (batch coordinate-ascent target minus current state):

        grad_eta = (n/b) K_mm^-1 K_mb kappa_b                      - eta
        grad_H   = -1/2 (K_mm^-1 + (n/b) K_mm^-1 K_mb Lam K_bm K_mm^-1) - H

    so with lr=1 on a full batch the state jumps to the coordinate-ascent
    optimum given the current Lambda, and any lr in (0, 1] keeps -2H inside
    the PD cone (convex combination of PD matrices).
    """
    if not 0.0 < lr <= 1.0:
        raise ValueError("natural-gradient learning rate must be in (0, 1]")
    kappa = np.asarray(y_batch, dtype=np.float64) - 0.5
    scale = n_total / kappa.shape[0]
    v, _ = model._projection(x_batch)

    grad_eta = scale * (v @ kappa) - model.eta
    lam_outer = _sym((v * aug.lam[None, :]) @ v.T)
    grad_h = -0.5 * (model.kmm_inv + scale * lam_outer) - model.h

    model.eta = model.eta + lr * grad_eta
    model.h = _sym(model.h + lr * grad_h)

    prec = -2.0 * model.h
    try:
        chol_prec = np.linalg.cholesky(prec)
    except np.linalg.LinAlgError as exc:
        raise PDViolation(
            "variational precision lost positive definiteness; lower the learning rate"
        ) from exc
    inv_l = solve_triangular(chol_prec, np.eye(prec.shape[0]), lower=True)
    model.sigma = _sym(inv_l.T @ inv_l)
    model.mu = model.sigma @ model.eta
    return model


def predictive_posterior(model: NodeVIModel, x_star: np.ndarray):
    """Gaussian moments of f_* under the variational posterior:

        mu_*     = k_m*^T K_mm^-1 mu~
        sigma2_* = k_** - k_m*^T K_mm^-1 (K_mm - Sigma~) K_mm^-1 k_m*

    which returns the prior moments exactly when q is at the prior.
    Negative variances from roundoff are clamped at zero and counted.
    """
    k_sm = gram(model.spec, np.atleast_2d(x_star), model.x_ind)
    v = solve_triangular(model.chol_kmm, k_sm.T, lower=True)
    v = solve_triangular(model.chol_kmm.T, v, lower=False)
    mu = model.mu @ v
    var = gram_diag(model.spec, x_star) - np.sum(v * ((model.kmm - model.sigma) @ v), axis=0)
    clamped = var < 0.0
    if np.any(clamped):
        model.variance_clamps += int(np.sum(clamped))
        var = np.maximum(var, 0.0)
    return mu, var


def predict_prob(
    model: NodeVIModel,
    x_star: np.ndarray,
    rule: QuadratureRule | None = None,
    mode: str = "quadrature",
) -> np.ndarray:
    """P(y=1) per row of x_star under the variational predictive."""
    mu, var = predictive_posterior(model, x_star)
    if mode == "mean-point":
        return sigmoid(mu)
    rule = rule or gauss_hermite(20)
    return expected_sigmoid(mu, var, rule)


def _sym(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + a.T)
