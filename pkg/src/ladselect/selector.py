"""Selection of the simplest near-optimal models from posterior draws of mu.

Indices are 0-based throughout; model ``k`` is column ``k`` of the loss
matrix.  Sets of models are returned as sorted tuples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional, Sequence

import numpy as np

from .data import LossMatrix, ModelMeta, bias_correct, summarize
from .errors import LadValidationError
from .niw import PosteriorDraws, default_prior, nig_match_update_sample, niw_update, sample_posterior

ScoreVariant = Literal["soft", "hard", "plugin"]
CovVariant = Literal["full", "diag"]

UNDERFLOW = 1e-300
GAP_FLAG_TOL = 1e-9


@dataclass(frozen=True)
class SelectorConfig:
    delta: float = 0.0
    alpha_exponent: float = 0.45
    T: int = 1000
    seed: int = 0
    omega: float = 0.5
    variant: ScoreVariant = "soft"
    cov: CovVariant = "full"
    bias_correct: bool = False

    def __post_init__(self):
        if not 0.0 < self.alpha_exponent < 0.5:
            raise LadValidationError(f"alpha_exponent must lie strictly in (0, 0.5), got {self.alpha_exponent}")
        if not (math.isfinite(self.delta) and self.delta >= 0):
            raise LadValidationError(f"delta must be finite and >= 0, got {self.delta}")
        if not 0.0 < self.omega < 1.0:
            raise LadValidationError(f"omega must lie in (0, 1), got {self.omega}")
        if self.variant not in ("soft", "hard", "plugin"):
            raise LadValidationError(f"unknown variant {self.variant!r}")
        if self.cov not in ("full", "diag"):
            raise LadValidationError(f"unknown covariance mode {self.cov!r}")
        if self.T < 1:
            raise LadValidationError(f"T must be >= 1, got {self.T}")

    def alpha_n(self, n: int) -> float:
        return float(n) ** self.alpha_exponent


@dataclass(frozen=True)
class ModelScore:
    name: str
    complexity: float
    p_hat: float
    r_hat: float
    w_hat: float


@dataclass(frozen=True)
class MuSummary:
    """Posterior summaries per model of mu and of the gap mu_k - min_j mu_j."""

    mean: np.ndarray
    sd: np.ndarray
    q025: np.ndarray
    q50: np.ndarray
    q975: np.ndarray
    gap_mean: np.ndarray
    gap_sd: np.ndarray
    gap_q025: np.ndarray
    gap_q50: np.ndarray
    gap_q975: np.ndarray


@dataclass
class SlcReport:
    models: list[ModelScore]
    delta: float
    tau: Optional[float] = None
    noise_mu: Optional[float] = None
    mu_summary: Optional[MuSummary] = None
    selected: tuple[int, ...] = ()
    omega: Optional[float] = None
    warnings: list[str] = field(default_factory=list)

    @property
    def w_hat(self) -> np.ndarray:
        return np.array([m.w_hat for m in self.models])

    @property
    def p_hat(self) -> np.ndarray:
        return np.array([m.p_hat for m in self.models])

    @property
    def r_hat(self) -> np.ndarray:
        return np.array([m.r_hat for m in self.models])

    @property
    def names(self) -> list[str]:
        return [m.name for m in self.models]


# --- deterministic set functions -------------------------------------------


def delta_optimal_set(mu: Sequence[float], delta: float) -> tuple[int, ...]:
    mu = np.asarray(mu, dtype=np.float64)
    return tuple(int(k) for k in np.flatnonzero(mu <= mu.min() + delta))


def minimal_complexity(mu: Sequence[float], delta: float, meta: ModelMeta) -> float:
    members = delta_optimal_set(mu, delta)
    return min(meta.complexity[k] for k in members)


def target_set(mu: Sequence[float], delta: float, meta: ModelMeta) -> tuple[int, ...]:
    """Best-fitting model(s) within the minimal delta-optimal complexity class."""
    mu = np.asarray(mu, dtype=np.float64)
    c_star = minimal_complexity(mu, delta, meta)
    in_class = meta.c == c_star
    best = mu[in_class].min()
    return tuple(int(k) for k in np.flatnonzero(in_class & (mu == best)))


# --- vectorised per-draw quantities -----------------------------------------


def _classes(meta: ModelMeta) -> tuple[np.ndarray, np.ndarray]:
    values, inverse = np.unique(meta.c, return_inverse=True)
    return values, inverse


def _class_minima(mus: np.ndarray, meta: ModelMeta) -> np.ndarray:
    """For every draw and model, min of mu over the model's complexity class."""
    values, inverse = _classes(meta)
    out = np.empty_like(mus)
    for j in range(values.size):
        cols = inverse == j
        out[:, cols] = mus[:, cols].min(axis=1, keepdims=True)
    return out


def _min_complexity_per_draw(mus: np.ndarray, c: np.ndarray, delta: float) -> np.ndarray:
    lowest = mus.min(axis=1, keepdims=True)
    in_set = mus <= lowest + delta
    return np.where(in_set, c, np.inf).min(axis=1)


def soft_scores(mu: Sequence[float], meta: ModelMeta, alpha_n: float) -> np.ndarray:
    """``exp(-alpha_n (mu_k - min over k's class))``; tiny values clamp to 0."""
    mus = np.atleast_2d(np.asarray(mu, dtype=np.float64))
    r = _soft_matrix(mus, meta, alpha_n)
    return r[0] if np.ndim(mu) == 1 else r


def _soft_matrix(mus: np.ndarray, meta: ModelMeta, alpha_n: float) -> np.ndarray:
    if not alpha_n > 0:
        raise LadValidationError(f"alpha_n must be positive, got {alpha_n}")
    r = np.exp(-alpha_n * (mus - _class_minima(mus, meta)))
    r[r < UNDERFLOW] = 0.0
    return r


def _check_draws(draws: PosteriorDraws, meta: ModelMeta) -> np.ndarray:
    mus = np.asarray(draws.mus, dtype=np.float64)
    if mus.ndim != 2 or mus.shape[0] < 1:
        raise LadValidationError("draws must be a nonempty T x K matrix")
    if mus.shape[1] != meta.K:
        raise LadValidationError(f"draws have K={mus.shape[1]}, meta has K={meta.K}")
    return mus


def _between_class(mus: np.ndarray, meta: ModelMeta, delta: float) -> np.ndarray:
    c_star = _min_complexity_per_draw(mus, meta.c, delta)
    return (c_star[:, None] == meta.c[None, :]).mean(axis=0)


def _report(meta: ModelMeta, p_hat: np.ndarray, r_hat: np.ndarray, delta: float) -> SlcReport:
    w = p_hat * r_hat
    models = [
        ModelScore(meta.model_names[k], meta.complexity[k], float(p_hat[k]), float(r_hat[k]), float(w[k]))
        for k in range(meta.K)
    ]
    return SlcReport(models=models, delta=float(delta))


def slc_scores(draws: PosteriorDraws, meta: ModelMeta, delta: float, alpha_n: float) -> SlcReport:
    """Smooth selection scores: p_hat from the complexity class, r_hat soft-min."""
    mus = _check_draws(draws, meta)
    p_hat = _between_class(mus, meta, delta)
    r_hat = _soft_matrix(mus, meta, alpha_n).mean(axis=0)
    return _report(meta, p_hat, r_hat, delta)


def hard_scores(draws: PosteriorDraws, meta: ModelMeta, delta: float) -> SlcReport:
    """As :func:`slc_scores` with the exact class-argmin indicator as within-class factor."""
    mus = _check_draws(draws, meta)
    p_hat = _between_class(mus, meta, delta)
    r_hat = (mus == _class_minima(mus, meta)).mean(axis=0)
    return _report(meta, p_hat, r_hat, delta)


def plugin_probabilities(draws: PosteriorDraws, meta: ModelMeta, delta: float) -> np.ndarray:
    """Monte Carlo estimate of P(k in target_set(mu) | data)."""
    mus = _check_draws(draws, meta)
    c_star = _min_complexity_per_draw(mus, meta.c, delta)
    in_class = c_star[:, None] == meta.c[None, :]
    is_min = mus == _class_minima(mus, meta)
    return (in_class & is_min).mean(axis=0)


def plugin_report(draws: PosteriorDraws, meta: ModelMeta, delta: float) -> SlcReport:
    mus = _check_draws(draws, meta)
    probs = plugin_probabilities(draws, meta, delta)
    p_hat = _between_class(mus, meta, delta)
    # r_hat here is the conditional share within the winning class
    with np.errstate(divide="ignore", invalid="ignore"):
        r_hat = np.where(p_hat > 0, probs / p_hat, 0.0)
    report = _report(meta, p_hat, r_hat, delta)
    report.models = [replace(m, w_hat=float(probs[k])) for k, m in enumerate(report.models)]
    return report


# --- tolerance rescaling and paths -------------------------------------------


def rescale_tolerance(delta: float, mu_noise: float, mu_min: float) -> float:
    """tau = delta / (mu_noise - mu_min)."""
    if not mu_noise > mu_min:
        raise LadValidationError(
            f"noise reference {mu_noise} must exceed the best model's loss {mu_min}; "
            "the noise model fits at least as well as every candidate"
        )
    return delta / (mu_noise - mu_min)


def tolerance_from_tau(tau: float, mu_noise: float, mu_min: float) -> float:
    """Inverse of :func:`rescale_tolerance`."""
    if not mu_noise > mu_min:
        raise LadValidationError(f"noise reference {mu_noise} must exceed the best model's loss {mu_min}")
    return tau * (mu_noise - mu_min)


@dataclass(frozen=True)
class PosteriorPath:
    tau: np.ndarray
    delta: np.ndarray
    w_hat: np.ndarray
    model_names: tuple[str, ...]


def posterior_path(
    draws: PosteriorDraws,
    meta: ModelMeta,
    tau_grid: Sequence[float],
    mu_noise: float,
    alpha_n: float,
) -> PosteriorPath:
    """SLC scores along a grid of rescaled tolerances.

    ``mu_min`` is the smallest draw-mean of mu, so the path depends on the
    draws only.
    """
    mus = _check_draws(draws, meta)
    tau = np.asarray(tau_grid, dtype=np.float64)
    if tau.ndim != 1 or tau.size == 0:
        raise LadValidationError("tau grid must be a nonempty vector")
    if np.any(np.diff(tau) <= 0):
        raise LadValidationError("tau grid must be strictly increasing")
    if tau[0] < 0 or tau[-1] > 1.5:
        raise LadValidationError("tau grid must lie within [0, 1.5]")
    mu_min = float(mus.mean(axis=0).min())
    scale = tolerance_from_tau(1.0, mu_noise, mu_min)
    deltas = tau * scale
    r_hat = _soft_matrix(mus, meta, alpha_n).mean(axis=0)
    w = np.empty((tau.size, meta.K))
    for g, d in enumerate(deltas):
        w[g] = _between_class(mus, meta, d) * r_hat
    return PosteriorPath(tau=tau, delta=deltas, w_hat=w, model_names=meta.model_names)


def select(report: SlcReport, omega: float) -> tuple[int, ...]:
    if not 0.0 < omega < 1.0:
        raise LadValidationError(f"omega must lie in (0, 1), got {omega}")
    chosen = tuple(k for k, m in enumerate(report.models) if m.w_hat > omega)
    report.selected = chosen
    report.omega = omega
    if not chosen:
        best = int(np.argmax(report.w_hat))
        report.warnings.append(
            f"no model scores above omega={omega}; highest score is {report.models[best].name} "
            f"({report.models[best].w_hat:.4g})"
        )
    return chosen


# --- end-to-end workflow ----------------------------------------------------


def summarize_mu(mus: np.ndarray) -> MuSummary:
    gaps = mus - mus.min(axis=1, keepdims=True)
    q = np.quantile(mus, [0.025, 0.5, 0.975], axis=0)
    gq = np.quantile(gaps, [0.025, 0.5, 0.975], axis=0)
    ddof = 1 if mus.shape[0] > 1 else 0
    return MuSummary(
        mean=mus.mean(axis=0),
        sd=mus.std(axis=0, ddof=ddof),
        q025=q[0],
        q50=q[1],
        q975=q[2],
        gap_mean=gaps.mean(axis=0),
        gap_sd=gaps.std(axis=0, ddof=ddof),
        gap_q025=gq[0],
        gap_q50=gq[1],
        gap_q975=gq[2],
    )


def draw_posterior(Z: LossMatrix, T: int, seed: int, cov: CovVariant = "full", compact: bool = True) -> PosteriorDraws:
    """Default prior, conjugate update and posterior sampling for a loss matrix."""
    summary = summarize(Z)
    prior = default_prior(Z.K)
    if cov == "diag":
        return nig_match_update_sample(prior, summary, T, seed, compact=compact)
    return sample_posterior(niw_update(prior, summary), T, seed, compact=compact)


def score_draws(
    draws: PosteriorDraws, meta: ModelMeta, delta: float, alpha_n: float, variant: ScoreVariant = "soft"
) -> SlcReport:
    if variant == "soft":
        return slc_scores(draws, meta, delta, alpha_n)
    if variant == "hard":
        return hard_scores(draws, meta, delta)
    if variant == "plugin":
        return plugin_report(draws, meta, delta)
    raise LadValidationError(f"unknown variant {variant!r}")


def prepare_losses(Z: LossMatrix, meta: ModelMeta, correct: bool) -> tuple[LossMatrix, ModelMeta]:
    meta = meta.aligned_to(Z)
    if correct and not Z.corrected:
        Z = bias_correct(Z, meta)
    return Z, meta


def analyze(
    Z: LossMatrix,
    meta: ModelMeta,
    config: SelectorConfig,
    noise_mu: Optional[float] = None,
    draws: Optional[PosteriorDraws] = None,
) -> SlcReport:
    """Full workflow: optional bias correction, NIW posterior, scores, tau.

    Pass precomputed ``draws`` to score several tolerances against the same
    posterior sample.
    """
    Z, meta = prepare_losses(Z, meta, config.bias_correct)
    if draws is None:
        draws = draw_posterior(Z, config.T, config.seed, config.cov)
    report = score_draws(draws, meta, config.delta, config.alpha_n(Z.n), config.variant)
    report.mu_summary = summarize_mu(draws.mus)
    gaps = report.mu_summary.gap_mean
    near = [meta.model_names[k] for k in range(meta.K) if gaps[k] > 0 and abs(gaps[k] - config.delta) <= GAP_FLAG_TOL]
    if near:
        report.warnings.append(f"delta={config.delta} is within {GAP_FLAG_TOL} of the estimated gap of {', '.join(near)}")
    if noise_mu is not None:
        mu_min = float(Z.values.mean(axis=0).min())
        report.noise_mu = float(noise_mu)
        if noise_mu > mu_min:
            report.tau = rescale_tolerance(config.delta, noise_mu, mu_min)
            if report.tau > 1:
                report.warnings.append(f"tau={report.tau:.4g} > 1: delta tolerates the noise model")
        else:
            report.warnings.append(
                f"noise reference {noise_mu:.6g} is not worse than the best model ({mu_min:.6g}); tau is undefined"
            )
    select(report, config.omega)
    return report
