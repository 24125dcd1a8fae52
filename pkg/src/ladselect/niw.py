"""Normal-Inverse-Wishart inference for the mean of the loss vectors.

The LaD rows are modelled as ``Z_i ~ N(mu, Sigma)`` with a conjugate NIW
prior.  Posterior draws use the Bartlett decomposition of a Wishart variate
and a counter-based layout (see :mod:`ladselect.rng`): draw ``t`` consumes a
fixed number of uniforms from its own counter range, converted to chi-square
and normal variates by inverse CDF.  The same ``(seed, t)`` therefore gives
the same draw whatever the batch size or number of worker threads.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Literal, Optional

import numpy as np
from scipy import linalg
from scipy.special import gammaincinv, ndtri

from . import rng
from .data import LossSummary
from .errors import LadNumericalError, LadValidationError

Variant = Literal["full", "diagonal", "asymptotic"]

JITTER_SCALE = 1e-10
JITTER_TRIES = 3


@dataclass(frozen=True)
class NiwState:
    mu: np.ndarray
    lam: float
    psi: np.ndarray
    nu: float

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        psi = np.atleast_2d(np.asarray(self.psi, dtype=np.float64))
        K = mu.shape[0]
        if psi.shape != (K, K):
            raise LadValidationError(f"psi must be {K}x{K}, got {psi.shape}")
        if not np.allclose(psi, psi.T, rtol=0, atol=1e-12 * max(1.0, np.abs(psi).max())):
            raise LadValidationError("psi must be symmetric")
        if not self.lam > 0:
            raise LadValidationError(f"lambda must be positive, got {self.lam}")
        if not self.nu > K - 1:
            raise LadValidationError(f"nu must exceed K-1={K - 1}, got {self.nu}")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def K(self) -> int:
        return self.mu.shape[0]


@dataclass(frozen=True)
class NigState:
    """Independent normal-inverse-gamma parameters, one set per coordinate."""

    a: np.ndarray
    b: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("a", "b", "lam"):
            arr = getattr(self, name)
            if np.any(np.asarray(arr) <= 0):
                raise LadValidationError(f"all {name}_k must be positive, got {arr}")


@dataclass(frozen=True)
class PosteriorDraws:
    """``T`` sampled mean vectors, plus covariances when not in compact mode.

    ``variant`` is ``"full"`` (NIW), ``"diagonal"`` (independent NIG) or
    ``"asymptotic"`` (plain Gaussian draws of the mean, used by experiments).
    """

    mus: np.ndarray
    sigmas: Optional[np.ndarray]
    seed: int
    variant: Variant = "full"

    @property
    def T(self) -> int:
        return self.mus.shape[0]

    @property
    def K(self) -> int:
        return self.mus.shape[1]


def default_prior(K: int) -> NiwState:
    """Weakly informative prior: mu0 = 0, lambda0 = 0.01, Psi0 = I, nu0 = K + 2."""
    if K < 1:
        raise LadValidationError(f"K must be >= 1, got {K}")
    return NiwState(mu=np.zeros(K), lam=0.01, psi=np.eye(K), nu=K + 2.0)


def niw_update(prior: NiwState, summary: LossSummary) -> NiwState:
    if summary.K != prior.K:
        raise LadValidationError(f"prior has K={prior.K}, summary has K={summary.K}")
    n = summary.n
    if n == 0:
        return prior
    lam_n = prior.lam + n
    mu_n = (prior.lam * prior.mu + n * summary.mean) / lam_n
    diff = summary.mean - prior.mu
    psi_n = prior.psi + n * summary.cov + (prior.lam * n / lam_n) * np.outer(diff, diff)
    psi_n = 0.5 * (psi_n + psi_n.T)
    return NiwState(mu=mu_n, lam=lam_n, psi=psi_n, nu=prior.nu + n)


def cholesky_jittered(A: np.ndarray) -> np.ndarray:
    """Lower Cholesky factor, adding escalating diagonal jitter on failure."""
    A = np.asarray(A, dtype=np.float64)
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        pass
    K = A.shape[0]
    jitter = JITTER_SCALE * max(np.trace(A) / K, np.finfo(float).tiny)
    for _ in range(JITTER_TRIES):
        try:
            return np.linalg.cholesky(A + jitter * np.eye(K))
        except np.linalg.LinAlgError:
            jitter *= 10.0
    cond = np.linalg.cond(A)
    raise LadNumericalError(f"Cholesky failed after {JITTER_TRIES} jitter attempts (condition number {cond:.3g})")


def _batched_cholesky(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return np.stack([cholesky_jittered(a) for a in A])


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("LAD_THREADS", "1")))
    except ValueError:
        return 1


def _chunked(fn, T: int, chunk: int = 65536):
    """Evaluate ``fn(start, stop)`` over [0, T) in chunks, optionally threaded.

    Chunk outputs are concatenated in index order, so the result never
    depends on the worker count.
    """
    bounds = [(s, min(s + chunk, T)) for s in range(0, T, chunk)]
    workers = min(thread_count(), len(bounds))
    if workers <= 1:
        parts = [fn(a, b) for a, b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda ab: fn(*ab), bounds))
    return parts


def _bartlett_factors(u: np.ndarray, nu: float, K: int) -> np.ndarray:
    """Lower-triangular Bartlett factors from uniforms laid out per draw.

    Columns ``0..K-1`` give the chi diagonal (df ``nu - i``), the next
    ``K(K-1)/2`` columns the standard-normal subdiagonal, row-major.
    """
    T = u.shape[0]
    A = np.zeros((T, K, K))
    df = nu - np.arange(K)
    diag = np.sqrt(2.0 * gammaincinv(df / 2.0, u[:, :K]))
    A[:, np.arange(K), np.arange(K)] = diag
    rows, cols = np.tril_indices(K, -1)
    if rows.size:
        A[:, rows, cols] = ndtri(u[:, K : K + rows.size])
    return A


def _wishart_width(K: int) -> int:
    return K + K * (K - 1) // 2


def sample_wishart(scale: np.ndarray, nu: float, T: int, seed: int) -> np.ndarray:
    """``T`` draws of ``Wishart(nu, scale)`` via Bartlett, shape (T, K, K)."""
    scale = np.atleast_2d(np.asarray(scale, dtype=np.float64))
    K = scale.shape[0]
    if not nu > K - 1:
        raise LadValidationError(f"Wishart needs nu > K-1, got nu={nu}, K={K}")
    L = cholesky_jittered(scale)
    key = rng.derive_key(seed, rng.DOMAIN_WISHART)
    width = _wishart_width(K)

    def block(start, stop):
        A = _bartlett_factors(rng.uniform_block(key, start, stop, width), nu, K)
        G = L @ A
        return G @ np.swapaxes(G, 1, 2)

    return np.concatenate(_chunked(block, T))


def sample_posterior(post: NiwState, T: int, seed: int, compact: bool = False) -> PosteriorDraws:
    """Draw ``(mu', Sigma')`` from NIW(mu_n, lambda_n, Psi_n, nu_n).

    ``Sigma'`` is the inverse of a Bartlett ``Wishart(nu_n, Psi_n^-1)`` draw and
    ``mu' = mu_n + chol(Sigma' / lambda_n) z``.  With ``compact=True`` only the
    means are kept.
    """
    if T < 1:
        raise LadValidationError(f"T must be >= 1, got {T}")
    seed = rng.check_seed(seed)
    K = post.K
    L_psi = cholesky_jittered(post.psi)
    psi_inv = linalg.cho_solve((L_psi, True), np.eye(K))
    L_scale = cholesky_jittered(0.5 * (psi_inv + psi_inv.T))
    key = rng.derive_key(seed, rng.DOMAIN_POSTERIOR)
    wdim = _wishart_width(K)
    width = wdim + K

    def block(start, stop):
        u = rng.uniform_block(key, start, stop, width)
        A = _bartlett_factors(u[:, :wdim], post.nu, K)
        G = L_scale @ A
        G_inv = np.linalg.inv(G)
        sigma = np.swapaxes(G_inv, 1, 2) @ G_inv
        sigma = 0.5 * (sigma + np.swapaxes(sigma, 1, 2))
        chol = _batched_cholesky(sigma / post.lam)
        z = ndtri(u[:, wdim:])
        mus = post.mu + np.einsum("tij,tj->ti", chol, z)
        return mus, (None if compact else sigma)

    parts = _chunked(block, T)
    mus = np.concatenate([p[0] for p in parts])
    sigmas = None if compact else np.concatenate([p[1] for p in parts])
    return PosteriorDraws(mus=mus, sigmas=sigmas, seed=seed, variant="full")


def nig_from_niw(prior: NiwState) -> NigState:
    """Per-coordinate NIG hyperparameters matched to an NIW prior."""
    K = prior.K
    a0 = (prior.nu - K + 1) / 2.0
    if a0 <= 0:
        raise LadValidationError(f"matched shape (nu0 - K + 1)/2 = {a0} must be positive")
    return NigState(
        a=np.full(K, a0),
        b=np.diag(prior.psi) / 2.0,
        mu=prior.mu.copy(),
        lam=np.full(K, prior.lam),
    )


def nig_update(prior: NigState, summary: LossSummary) -> NigState:
    n = summary.n
    if n == 0:
        return prior
    lam_n = prior.lam + n
    mu_n = (prior.lam * prior.mu + n * summary.mean) / lam_n
    ss = n * np.diag(summary.cov)
    b_n = prior.b + 0.5 * ss + 0.5 * (prior.lam * n / lam_n) * (summary.mean - prior.mu) ** 2
    return NigState(a=prior.a + n / 2.0, b=b_n, mu=mu_n, lam=lam_n)


def sample_nig(post: NigState, T: int, seed: int, compact: bool = False) -> PosteriorDraws:
    """Independent ``sigma2_k ~ InvGamma(a_k, b_k)``, ``mu_k ~ N(mu_k, sigma2_k / lam_k)``."""
    if T < 1:
        raise LadValidationError(f"T must be >= 1, got {T}")
    seed = rng.check_seed(seed)
    K = post.mu.shape[0]
    key = rng.derive_key(seed, rng.DOMAIN_DIAGONAL)

    def block(start, stop):
        u = rng.uniform_block(key, start, stop, 2 * K)
        sigma2 = post.b / gammaincinv(post.a, u[:, :K])
        mus = post.mu + np.sqrt(sigma2 / post.lam) * ndtri(u[:, K:])
        return mus, sigma2

    parts = _chunked(block, T)
    mus = np.concatenate([p[0] for p in parts])
    sigmas = None
    if not compact:
        sigma2 = np.concatenate([p[1] for p in parts])
        sigmas = np.zeros((T, K, K))
        sigmas[:, np.arange(K), np.arange(K)] = sigma2
    return PosteriorDraws(mus=mus, sigmas=sigmas, seed=seed, variant="diagonal")


def nig_match_update_sample(
    niw_prior: NiwState, summary: LossSummary, T: int, seed: int, compact: bool = False
) -> PosteriorDraws:
    """Diagonal-covariance posterior with hyperparameters matched to ``niw_prior``."""
    return sample_nig(nig_update(nig_from_niw(niw_prior), summary), T, seed, compact=compact)


def gaussian_draws(mean: np.ndarray, cov: np.ndarray, T: int, seed: int) -> PosteriorDraws:
    """``T`` draws of ``N(mean, cov)``, laid out like the posterior sampler."""
    mean = np.atleast_1d(np.asarray(mean, dtype=np.float64))
    K = mean.shape[0]
    L = cholesky_jittered(np.atleast_2d(cov))
    key = rng.derive_key(seed, rng.DOMAIN_GAUSSIAN)

    def block(start, stop):
        return mean + ndtri(rng.uniform_block(key, start, stop, K)) @ L.T

    return PosteriorDraws(mus=np.concatenate(_chunked(block, T)), sigmas=None, seed=seed, variant="asymptotic")
