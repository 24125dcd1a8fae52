"""Comparison selection rules: information criteria, (coarsened) Bayes, Evanno's delta-k."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .errors import LadSizeError, LadValidationError
from .models import MvnSupportModel


def ic_scores(total_nll: Sequence[float], dims: Sequence[float], n: int, kind: Literal["aic", "bic"]) -> np.ndarray:
    nll = np.asarray(total_nll, dtype=np.float64)
    d = np.asarray(dims, dtype=np.float64)
    if n < 1:
        raise LadValidationError(f"n must be >= 1, got {n}")
    if kind == "aic":
        return 2.0 * nll + 2.0 * d
    if kind == "bic":
        return 2.0 * nll + d * math.log(n)
    raise LadValidationError(f"unknown information criterion {kind!r}")


def ic_weights(total_nll: Sequence[float], dims: Sequence[float], n: int, kind: Literal["aic", "bic"]) -> np.ndarray:
    """One-hot weight on the criterion's argmin; exact ties go to the lowest index."""
    scores = ic_scores(total_nll, dims, n, kind)
    w = np.zeros(scores.size)
    w[int(np.argmin(scores))] = 1.0
    return w


@dataclass(frozen=True)
class CPostConfig:
    """Power-posterior settings; ``alpha=math.inf`` is the standard posterior.

    ``theta0_prior`` holds one prior-mean vector per model over its free
    coordinates (in increasing coordinate order); ``None`` means zeros.
    """

    alpha: float = math.inf
    kappa0: float = 1.0
    theta0_prior: Optional[tuple[tuple[float, ...], ...]] = None

    def __post_init__(self):
        if not self.alpha > 0:
            raise LadValidationError(f"alpha must be positive or infinite, got {self.alpha}")
        if not (math.isfinite(self.kappa0) and self.kappa0 > 0):
            raise LadValidationError(f"kappa0 must be positive, got {self.kappa0}")

    def zeta(self, n: int) -> float:
        return 1.0 if math.isinf(self.alpha) else self.alpha / (self.alpha + n)


def cpost_log_marginals(data: np.ndarray, models: Sequence[MvnSupportModel], cfg: CPostConfig) -> np.ndarray:
    """Log marginal power likelihood per model, up to a constant shared by all models.

    The omitted constant is ``-(zeta n p / 2) log(2 pi) - (zeta / 2) sum_i ||x_i - xbar||^2``.
    """
    x = np.atleast_2d(np.asarray(data, dtype=np.float64))
    n = x.shape[0]
    if n < 1:
        raise LadSizeError("no observations")
    xbar = x.mean(axis=0)
    a = cfg.zeta(n) * n
    k0 = cfg.kappa0
    out = np.empty(len(models))
    for i, model in enumerate(models):
        mask = model.mask
        free = xbar[mask]
        prior_mean = np.zeros(model.d) if cfg.theta0_prior is None else np.asarray(cfg.theta0_prior[i], dtype=np.float64)
        if prior_mean.shape != (model.d,):
            raise LadValidationError(f"prior mean for model {i} must have length {model.d}")
        fixed = xbar[~mask]
        out[i] = (
            0.5 * model.d * math.log(k0 / (k0 + a))
            - k0 * a / (2.0 * (k0 + a)) * float((free - prior_mean) @ (free - prior_mean))
            - 0.5 * a * float(fixed @ fixed)
        )
    return out


def cpost_weights(log_marginals: Sequence[float]) -> np.ndarray:
    """Posterior model probabilities under a uniform model prior."""
    lm = np.asarray(log_marginals, dtype=np.float64)
    if not np.all(np.isfinite(lm)):
        raise LadValidationError("log marginals must be finite")
    return np.exp(lm - logsumexp(lm))


@dataclass(frozen=True)
class EvannoResult:
    """Evanno summary over k = 1..K; entries undefined at the ends are NaN."""

    means: np.ndarray
    sds: np.ndarray
    first_diffs: np.ndarray
    abs_second_diffs: np.ndarray
    delta_k: np.ndarray
    zero_sd: tuple[int, ...]

    @property
    def best(self) -> int:
        """0-based index of the largest finite-or-infinite delta-k."""
        return int(np.nanargmax(self.delta_k))


def evanno_delta_k(L: np.ndarray) -> EvannoResult:
    """delta-k(k) = mean_runs |L(k+1) - 2 L(k) + L(k-1)| / sd_runs L(k).

    ``L`` is runs x K.  The sd uses ddof=1.  A zero sd gives ``inf`` when the
    mean second difference is positive and 0 when it is also zero; both are
    listed in ``zero_sd``.
    """
    L = np.asarray(L, dtype=np.float64)
    if L.ndim != 2:
        raise LadValidationError("L must be a runs x K matrix")
    runs, K = L.shape
    if runs < 2:
        raise LadSizeError("Evanno's method needs at least 2 runs per k")
    if K < 3:
        raise LadSizeError("Evanno's method needs at least 3 values of k")
    means = L.mean(axis=0)
    sds = L.std(axis=0, ddof=1)
    first = np.full(K, np.nan)
    first[1:] = np.diff(means)
    second = np.full(K, np.nan)
    second[1:-1] = np.abs(L[:, 2:] - 2.0 * L[:, 1:-1] + L[:, :-2]).mean(axis=0)
    delta = np.full(K, np.nan)
    zero = []
    for k in range(1, K - 1):
        if sds[k] > 0:
            delta[k] = second[k] / sds[k]
        else:
            zero.append(k)
            delta[k] = math.inf if second[k] > 0 else 0.0
    return EvannoResult(means, sds, first, second, delta, tuple(zero))
