"""Binary GP classifier at a single tree node, trained by block Gibbs sampling.

The logistic likelihood is augmented with one Polya-Gamma variable per
training point. Conditioned on omega the latent values are Gaussian:

    f | y, omega ~ N(Sigma @ kappa, Sigma),   Sigma = (K^-1 + Omega)^-1,
    omega | y, f ~ PG(1, f)    elementwise,

with kappa_j = y_j - 1/2 and a zero prior mean. All solves go through the
well-conditioned matrix B = I + W^1/2 K W^1/2 (W = Omega) instead of
forming K^-1:

    (Omega^-1 + K)^-1 = W^1/2 B^-1 W^1/2,
    Sigma             = K - K W^1/2 B^-1 W^1/2 K.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular

from .errors import SingleClassNode
from .kernels import KernelSpec, gram, gram_diag
from .numerics import QuadratureRule, cholesky_psd, expected_sigmoid, gauss_hermite, sigmoid
from .pg import pg_mean, sample_pg_vector
from .rng import RngStream

PREDICT_MODES = ("quadrature", "mean-point")


@dataclass(frozen=True)
class GibbsConfig:
    n_chains: int = 4
    n_steps: int = 1
    predict_mode: str = "quadrature"
    quadrature_order: int = 20

    def __post_init__(self):
        if self.n_chains < 1 or self.n_steps < 1:
            raise ValueError("n_chains and n_steps must be >= 1")
        if self.predict_mode not in PREDICT_MODES:
            raise ValueError(f"predict_mode must be one of {PREDICT_MODES}")

    def to_dict(self) -> dict:
        return {
            "n_chains": self.n_chains,
            "n_steps": self.n_steps,
            "predict_mode": self.predict_mode,
            "quadrature_order": self.quadrature_order,
        }


@dataclass(frozen=True)
class ChainState:
    """One Gibbs chain: current (omega, f) and the stream that drives it.

    Step t consumes the sub-stream ``stream.child(t)``, so advancing a
    restored chain reproduces the original trajectory exactly.
    """

    omega: np.ndarray
    f: np.ndarray
    steps_taken: int
    stream: RngStream


@dataclass
class _ChainCache:
    """Per-chain solve cache at the chain's final omega."""

    sqrt_w: np.ndarray
    chol_b: np.ndarray
    alpha: np.ndarray  # W^1/2 B^-1 W^-1/2 kappa; predictive mean is k_*^T alpha


def conditional_gaussian(k: np.ndarray, omega: np.ndarray, kappa: np.ndarray):
    """Mean and covariance of f | y, omega (zero prior mean)."""
    sw = np.sqrt(omega)
    b = sw[:, None] * k * sw[None, :]
    np.fill_diagonal(b, np.diag(b) + 1.0)
    chol_b, _ = cholesky_psd(b)
    v = solve_triangular(chol_b, sw[:, None] * k, lower=True)
    cov = k - v.T @ v
    cov = 0.5 * (cov + cov.T)
    return cov @ kappa, cov


class NodeGibbsModel:
    """Fitted binary node: training subset, Gram matrix, and chain states."""

    def __init__(
        self,
        x: np.ndarray,
        y: np.ndarray,
        spec: KernelSpec,
        config: GibbsConfig,
        chains: list[ChainState],
        k: np.ndarray | None = None,
    ):
        self.x = np.asarray(x, dtype=np.float64)
        self.y = np.asarray(y, dtype=np.int64)
        self.kappa = self.y.astype(np.float64) - 0.5
        self.spec = spec
        self.config = config
        self.chains = chains
        self.k = gram(spec, self.x) if k is None else k
        self._rule = gauss_hermite(config.quadrature_order)
        self._caches = [self._build_cache(c) for c in chains]

    # -- sampling ------------------------------------------------------

    def step_chain(self, chain: ChainState) -> ChainState:
        """One block Gibbs sweep: draw f | y, omega, then omega | y, f."""
        gen = chain.stream.child(chain.steps_taken).generator()
        mean, cov = conditional_gaussian(self.k, chain.omega, self.kappa)
        chol_c, _ = cholesky_psd(cov)
        f = mean + chol_c @ gen.standard_normal(mean.shape[0])
        omega = sample_pg_vector(f, gen)
        return replace(chain, omega=omega, f=f, steps_taken=chain.steps_taken + 1)

    # -- prediction ----------------------------------------------------

    def _build_cache(self, chain: ChainState) -> _ChainCache:
        sw = np.sqrt(chain.omega)
        b = sw[:, None] * self.k * sw[None, :]
        np.fill_diagonal(b, np.diag(b) + 1.0)
        chol_b, _ = cholesky_psd(b)
        t = solve_triangular(chol_b, self.kappa / sw, lower=True)
        alpha = sw * solve_triangular(chol_b.T, t, lower=False)
        return _ChainCache(sqrt_w=sw, chol_b=chol_b, alpha=alpha)

    def predictive_posterior(self, x_star: np.ndarray, chain_idx: int = 0):
        """Gaussian moments of f_* given (X, y, omega) for one chain.

            mu_*    = k_*^T (Omega^-1 + K)^-1 Omega^-1 kappa
            sigma2_* = k_** - k_*^T (Omega^-1 + K)^-1 k_*
        """
        cache = self._caches[chain_idx]
        k_xs = gram(self.spec, self.x, np.atleast_2d(x_star))
        mu = k_xs.T @ cache.alpha
        u = solve_triangular(cache.chol_b, cache.sqrt_w[:, None] * k_xs, lower=True)
        var = gram_diag(self.spec, x_star) - np.sum(u * u, axis=0)
        return mu, np.maximum(var, 0.0)

    def predict_prob(
        self,
        x_star: np.ndarray,
        rule: QuadratureRule | None = None,
        mode: str | None = None,
    ) -> np.ndarray:
        """P(y=1) per row of x_star, averaged over chains."""
        mode = mode or self.config.predict_mode
        rule = rule or self._rule
        probs = np.zeros(np.atleast_2d(x_star).shape[0])
        for idx in range(len(self.chains)):
            mu, var = self.predictive_posterior(x_star, idx)
            if mode == "mean-point":
                probs += sigmoid(mu)
            else:
                probs += expected_sigmoid(mu, var, rule)
        return probs / len(self.chains)

    # -- diagnostics ---------------------------------------------------

    def augmented_marginal_loglik(self, chain_idx: int = 0) -> float:
        """Log density of N(Omega^-1 kappa | 0, K + Omega^-1), full normalizer.

        The Gaussian's (2*pi)^(-n/2) and determinant terms are kept, so
        values are comparable across omega draws and across nodes of equal
        size.
        """
        chain = self.chains[chain_idx]
        cache = self._caches[chain_idx]
        n = chain.omega.shape[0]
        t = solve_triangular(cache.chol_b, self.kappa / cache.sqrt_w, lower=True)
        logdet = 2.0 * np.sum(np.log(np.diag(cache.chol_b))) - np.sum(np.log(chain.omega))
        return float(-0.5 * n * np.log(2.0 * np.pi) - 0.5 * logdet - 0.5 * t @ t)


def fit(
    x: np.ndarray,
    y: np.ndarray,
    spec: KernelSpec,
    config: GibbsConfig,
    stream: RngStream,
) -> NodeGibbsModel:
    """Fit a node: run n_chains chains for n_steps each from the flat start.

    Chains are initialized at the prior-expected augmentation
    omega = E[PG(1, 0)] = 1/4 so that a single sweep already conditions on
    a sensible Omega. Chain c uses the sub-stream ``stream.child(c)``.
    """
    y = np.asarray(y)
    if np.unique(y).size < 2:
        raise SingleClassNode("node labels are constant; check the class split")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    k = gram(spec, x)
    kappa = y.astype(np.float64) - 0.5

    chains = []
    for cid in range(config.n_chains):
        chain = ChainState(
            omega=np.full(n, pg_mean(1.0, 0.0)),
            f=np.zeros(n),
            steps_taken=0,
            stream=stream.child(cid),
        )
        chains.append(chain)

    model = NodeGibbsModel(x, y, spec, config, chains, k=k)
    for idx in range(config.n_chains):
        chain = model.chains[idx]
        for _ in range(config.n_steps):
            chain = model.step_chain(chain)
        model.chains[idx] = chain
        model._caches[idx] = model._build_cache(chain)
    return model
