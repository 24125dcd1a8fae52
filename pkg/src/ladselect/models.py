"""Built-in candidate model families and data-generating processes.

Two families ship with the package:

* sparse multivariate normal means with identity covariance, where model
  ``k`` frees the mean coordinates in a support set ``J_k``;
* univariate Gaussian mixtures fitted by EM towards the MAP estimate under a
  conjugate normal-inverse-gamma prior per component.

Each fitter returns per-observation negative log-likelihoods, ready to be
stacked into a :class:`~ladselect.data.LossMatrix`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from . import rng
from .data import LossMatrix, ModelMeta
from .errors import LadSizeError, LadValidationError

LOG_2PI = math.log(2.0 * math.pi)

# --- sparse multivariate normal ---------------------------------------------


@dataclass(frozen=True)
class MvnSupportModel:
    """N(theta, I) on R^p with theta_j free for j in ``support`` (0-based), zero elsewhere."""

    support: frozenset[int]
    p: int
    name: str = ""

    def __post_init__(self):
        support = frozenset(int(j) for j in self.support)
        if any(j < 0 or j >= self.p for j in support):
            raise LadValidationError(f"support {sorted(support)} is not a subset of 0..{self.p - 1}")
        object.__setattr__(self, "support", support)

    @property
    def d(self) -> int:
        return len(self.support)

    @property
    def mask(self) -> np.ndarray:
        m = np.zeros(self.p, dtype=bool)
        m[list(self.support)] = True
        return m


SPARSE_THETA0 = np.array([1.0, 1.0, 0.5, 0.5, 0.4, 0.0])

# free coordinates of the seven sparse candidates (0-based)
SPARSE_SUPPORTS = (
    (0, 3),
    (0, 1),
    (0, 1, 4),
    (0, 1, 3),
    (0, 1, 2),
    (0, 1, 2, 3, 4),
    (0, 1, 2, 3, 4, 5),
)


def sparse_normal_models() -> list[MvnSupportModel]:
    return [MvnSupportModel(frozenset(J), 6, name=f"M{k + 1}") for k, J in enumerate(SPARSE_SUPPORTS)]


def mvn_meta(models: Sequence[MvnSupportModel]) -> ModelMeta:
    """Complexity = number of free coordinates = parameter dimension."""
    return ModelMeta(
        tuple(float(m.d) for m in models),
        tuple(m.d for m in models),
        tuple(m.name or f"model_{k + 1}" for k, m in enumerate(models)),
    )


def mvn_fit_and_loss(data: np.ndarray, model: MvnSupportModel) -> tuple[np.ndarray, np.ndarray, int]:
    """Masked sample-mean MLE and per-row Gaussian NLL with identity covariance."""
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    if x.size == 0 or x.shape[0] == 0:
        raise LadSizeError("no observations")
    if x.shape[1] != model.p:
        raise LadValidationError(f"data has {x.shape[1]} columns, model expects p={model.p}")
    if x.shape[0] < 2:
        raise LadSizeError(f"need at least 2 observations, got {x.shape[0]}")
    theta = np.where(model.mask, x.mean(axis=0), 0.0)
    resid = x - theta
    losses = 0.5 * model.p * LOG_2PI + 0.5 * np.einsum("ij,ij->i", resid, resid)
    return theta, losses, model.d


def mvn_loss_matrix(data: np.ndarray, models: Sequence[MvnSupportModel]) -> LossMatrix:
    cols = [mvn_fit_and_loss(data, m)[1] for m in models]
    return LossMatrix(np.column_stack(cols), mvn_meta(models).model_names)


def mvn_kl_oracle(theta0: Sequence[float], model: MvnSupportModel) -> float:
    """min over the model of KL(N(theta0, I) || N(theta, I)) = 0.5 ||theta0 outside J||^2."""
    theta0 = np.asarray(theta0, dtype=np.float64)
    outside = theta0[~model.mask]
    return 0.5 * float(outside @ outside)


# --- Gaussian mixtures --------------------------------------------------------


@dataclass(frozen=True)
class GmmPrior:
    """Conjugate prior per component: m | s2 ~ N(m0, s2/kappa0), s2 ~ IG(nu0/2, s0_sq/2)."""

    m0: float
    kappa0: float
    s0_sq: float
    nu0: float

    @classmethod
    def default(cls, x: np.ndarray, k: int) -> "GmmPrior":
        # variance uses the 1/n convention, as elsewhere in the package
        return cls(m0=float(x.mean()), kappa0=0.01, s0_sq=float(x.var()) / k**2, nu0=10.0)

    def log_density(self, means: np.ndarray, variances: np.ndarray) -> float:
        a = self.nu0 / 2.0
        b = self.s0_sq / 2.0
        log_ig = a * math.log(b) - gammaln(a) - (a + 1.0) * np.log(variances) - b / variances
        log_norm = -0.5 * (LOG_2PI + np.log(variances / self.kappa0)) - 0.5 * self.kappa0 * (means - self.m0) ** 2 / variances
        # Dirichlet(1, ..., 1) on the weights contributes log((k-1)!)
        return float(np.sum(log_ig + log_norm) + gammaln(means.size))


@dataclass
class GmmFit:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    loglik: float
    objective: float
    n_iter: int
    restart: int
    trace: list[float] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if abs(float(np.sum(self.weights)) - 1.0) > 1e-10:
            raise LadValidationError("mixture weights must sum to 1")
        if np.any(self.variances <= 0):
            raise LadValidationError("mixture variances must be positive")

    @property
    def k(self) -> int:
        return self.weights.size

    @property
    def d(self) -> int:
        return 3 * self.k - 1

    def log_component_density(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1, 1)
        return (
            np.log(self.weights)
            - 0.5 * (LOG_2PI + np.log(self.variances))
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def nll(self, x: np.ndarray) -> np.ndarray:
        """Per-observation negative log density of the fitted mixture."""
        return -logsumexp(self.log_component_density(x), axis=1)


def _em_run(
    x: np.ndarray,
    k: int,
    prior: GmmPrior,
    gen: np.random.Generator,
    max_iter: int,
    tol: float,
    init_range: tuple[float, float],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[float], float]:
    n = x.size
    lo, hi = init_range
    weights = np.full(k, 1.0 / k)
    means = gen.uniform(lo, hi, size=k)
    variances = np.full(k, prior.s0_sq)
    xc = x[:, None]
    trace: list[float] = []

    def evaluate():
        logp = np.log(weights) - 0.5 * (LOG_2PI + np.log(variances)) - 0.5 * (xc - means) ** 2 / variances
        norm = logsumexp(logp, axis=1)
        loglik = float(norm.sum())
        return logp, norm, loglik, loglik + prior.log_density(means, variances)

    for _ in range(max_iter):
        logp, norm, loglik, objective = evaluate()
        converged = bool(trace) and objective - trace[-1] < tol
        trace.append(objective)
        if converged:
            break
        resp = np.exp(logp - norm[:, None])
        nk = resp.sum(axis=0)
        nk_safe = np.maximum(nk, 1e-300)
        xbar = (resp * xc).sum(axis=0) / nk_safe
        scatter = (resp * (xc - xbar) ** 2).sum(axis=0)
        weights = nk / n
        # components with no responsibility keep the prior mean and mode
        weights = np.maximum(weights, 1e-300)
        weights /= weights.sum()
        means = (prior.kappa0 * prior.m0 + nk * xbar) / (prior.kappa0 + nk)
        shrink = prior.kappa0 * nk / (prior.kappa0 + nk) * (xbar - prior.m0) ** 2
        variances = (prior.s0_sq + shrink + scatter) / (prior.nu0 + nk + 3.0)
    else:
        # out of iterations: score the parameters actually returned
        _, _, loglik, objective = evaluate()
        trace.append(objective)
    return weights, means, variances, trace, loglik


def gmm_fit_em(
    data: np.ndarray,
    k: int,
    restarts: int = 50,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-8,
    prior: Optional[GmmPrior] = None,
) -> tuple[GmmFit, np.ndarray]:
    """Best of ``restarts`` EM-MAP runs, ranked by observed log-likelihood.

    Each restart draws initial means uniformly between the 5% and 95% data
    quantiles, with variances at the prior scale ``s0_sq`` and equal weights.
    Ties in log-likelihood go to the lower restart index.
    """
    x = np.asarray(data, dtype=np.float64).ravel()
    n = x.size
    if k < 1:
        raise LadValidationError(f"k must be >= 1, got {k}")
    if k > n:
        raise LadSizeError(f"cannot fit {k} components to {n} observations")
    if not np.all(np.isfinite(x)):
        raise LadValidationError("data contain non-finite values")
    if k > 1 and np.ptp(x) == 0:
        raise LadValidationError("all observations are equal; a mixture with k > 1 is degenerate")
    if restarts < 1:
        raise LadValidationError("restarts must be >= 1")
    if prior is None:
        prior = GmmPrior.default(x, k)
        if prior.s0_sq <= 0:
            prior = GmmPrior(prior.m0, prior.kappa0, 1.0, prior.nu0)
    init_range = tuple(np.quantile(x, [0.05, 0.95]))
    best: Optional[GmmFit] = None
    for r in range(restarts):
        gen = rng.substream(seed, rng.DOMAIN_EM, k, r)
        w, m, v, trace, ll = _em_run(x, k, prior, gen, max_iter, tol, init_range)
        fit = GmmFit(w, m, v, loglik=ll, objective=trace[-1], n_iter=len(trace) - 1, restart=r, trace=trace)
        if best is None or fit.loglik > best.loglik:
            best = fit
    return best, best.nll(x)


def gmm_loss_matrix(
    data: np.ndarray, kmax: int, restarts: int = 50, seed: int = 0
) -> tuple[LossMatrix, ModelMeta, list[GmmFit]]:
    """Fit k = 1..kmax mixtures; complexity c(k) = k, dimension 3k - 1."""
    fits, cols = [], []
    for k in range(1, kmax + 1):
        fit, losses = gmm_fit_em(data, k, restarts=restarts, seed=seed)
        fits.append(fit)
        cols.append(losses)
    names = tuple(f"k{k}" for k in range(1, kmax + 1))
    meta = ModelMeta(tuple(float(k) for k in range(1, kmax + 1)), tuple(3 * k - 1 for k in range(1, kmax + 1)), names)
    return LossMatrix(np.column_stack(cols), names), meta, fits


# --- noise baselines ----------------------------------------------------------


def noise_reference(data: np.ndarray, kind: Literal["uniform_range", "standard_mvn"]) -> float:
    """Average loss of a deliberately uninformative model on ``data``."""
    x = np.asarray(data, dtype=np.float64)
    if kind == "uniform_range":
        x = x.ravel()
        width = float(x.max() - x.min()) if x.size else 0.0
        if not width > 0:
            raise LadValidationError("uniform_range noise model needs data with max > min")
        return math.log(width)
    if kind == "standard_mvn":
        x = np.atleast_2d(x)
        if x.shape[0] == 0:
            raise LadSizeError("no observations")
        p = x.shape[1]
        return float(np.mean(0.5 * p * LOG_2PI + 0.5 * np.einsum("ij,ij->i", x, x)))
    raise LadValidationError(f"unknown noise reference {kind!r}")


# --- data-generating processes -----------------------------------------------


@dataclass(frozen=True)
class DgpSpec:
    """A simulation scenario.

    ``kind="mvn"`` draws N(theta0, I); ``kind="gmm"`` draws a univariate
    Gaussian mixture (component index first, then the normal).
    """

    kind: Literal["mvn", "gmm"]
    n: int
    seed: int = 0
    theta0: Optional[tuple[float, ...]] = None
    weights: Optional[tuple[float, ...]] = None
    means: Optional[tuple[float, ...]] = None
    variances: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        if self.n < 0:
            raise LadValidationError("n must be >= 0")
        if self.kind == "mvn":
            if self.theta0 is None or len(self.theta0) == 0:
                raise LadValidationError("mvn scenario needs theta0")
        elif self.kind == "gmm":
            if self.weights is None or self.means is None or self.variances is None:
                raise LadValidationError("gmm scenario needs weights, means and variances")
            if not len(self.weights) == len(self.means) == len(self.variances):
                raise LadValidationError("gmm weights/means/variances must have equal length")
            if abs(sum(self.weights) - 1.0) > 1e-10 or min(self.weights) < 0:
                raise LadValidationError("gmm weights must lie on the simplex")
            if min(self.variances) <= 0:
                raise LadValidationError("gmm variances must be positive")
        else:
            raise LadValidationError(f"unknown scenario kind {self.kind!r}")


def simulate_dgp(spec: DgpSpec, *path: int) -> np.ndarray:
    """Seeded sample from ``spec``; ``path`` selects an independent substream.

    Returns an (n, p) matrix for mvn and an (n, 1) matrix for gmm.
    """
    gen = rng.substream(spec.seed, rng.DOMAIN_SIMULATE, *path)
    if spec.kind == "mvn":
        theta0 = np.asarray(spec.theta0, dtype=np.float64)
        return gen.standard_normal((spec.n, theta0.size)) + theta0
    comp = gen.choice(len(spec.weights), size=spec.n, p=np.asarray(spec.weights))
    z = gen.standard_normal(spec.n)
    x = np.asarray(spec.means)[comp] + np.sqrt(np.asarray(spec.variances))[comp] * z
    return x[:, None]
