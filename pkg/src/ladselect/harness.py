"""Replicated simulation experiments.

Every replicate draws its data from the substream ``(seed, n, r)`` and its
posterior sample from a seed derived the same way, so results do not depend
on the order or the number of threads used to run the replicates
(``LAD_THREADS`` caps the worker count).
"""

from __future__ import annotations

import csv
import functools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import integrate, stats

from . import rng
from .baselines import CPostConfig, cpost_log_marginals, cpost_weights, ic_weights
from .data import LossMatrix, ModelMeta, bias_correct, format_float, summarize
from .errors import LadError, LadValidationError
from .models import (
    SPARSE_THETA0,
    DgpSpec,
    GmmFit,
    MvnSupportModel,
    gmm_fit_em,
    gmm_loss_matrix,
    mvn_fit_and_loss,
    mvn_kl_oracle,
    mvn_loss_matrix,
    mvn_meta,
    noise_reference,
    simulate_dgp,
    sparse_normal_models,
)
from .niw import default_prior, gaussian_draws, niw_update, sample_posterior, thread_count
from .selector import draw_posterior, hard_scores, plugin_probabilities, rescale_tolerance, slc_scores, target_set

log = logging.getLogger(__name__)

LAD_METHODS = ("lad-soft", "lad-hard", "lad-diag", "lad-plugin")
FIXED_METHODS = LAD_METHODS + ("bayes", "aic", "bic")

INSTABILITY_SIGMA0 = np.array([[1.0, -0.99, 0.0], [-0.99, 1.0, 0.0], [0.0, 0.0, 0.01]])


def parallel_map(fn: Callable, items: Sequence) -> list:
    """``[fn(x) for x in items]``, threaded up to ``LAD_THREADS`` workers, order preserved."""
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def brier_loss(w: Sequence[float], target: Sequence[int]) -> float:
    """sum_k (w_k - 1(k in target))^2."""
    w = np.asarray(w, dtype=np.float64)
    if not np.all(np.isfinite(w)):
        raise LadValidationError("weights must be finite")
    truth = np.zeros(w.size)
    truth[list(target)] = 1.0
    return float(np.sum((w - truth) ** 2))


def parse_method(token: str) -> tuple[str, Optional[float]]:
    """``"cpost:10"`` -> ("cpost", 10.0); fixed names -> (name, None)."""
    token = token.strip()
    if token in FIXED_METHODS:
        return token, None
    if token.startswith("cpost:"):
        try:
            alpha = float(token.split(":", 1)[1])
        except ValueError:
            raise LadValidationError(f"cannot parse alpha in {token!r}") from None
        if not alpha > 0:
            raise LadValidationError(f"cpost alpha must be positive, got {token!r}")
        return "cpost", alpha
    raise LadValidationError(f"unknown method {token!r}; valid: {', '.join(FIXED_METHODS)}, cpost:ALPHA")


# --- scenarios ----------------------------------------------------------------


@dataclass
class Scenario:
    """Data-generating process, candidate family and the oracle mean vector.

    ``mu0`` holds the population KL divergence of every candidate (the
    entropy constant is dropped); the oracle target set is computed from it
    and never from simulated data.
    """

    name: str
    dgp: DgpSpec
    meta: ModelMeta
    mu0: np.ndarray
    mvn_models: Optional[list[MvnSupportModel]] = None
    gmm_kmax: int = 0
    gmm_restarts: int = 5

    def losses(self, data: np.ndarray, seed: int) -> LossMatrix:
        if self.mvn_models is not None:
            return mvn_loss_matrix(data, self.mvn_models)
        Z, _, _ = gmm_loss_matrix(data, self.gmm_kmax, restarts=self.gmm_restarts, seed=seed)
        return Z

    def supports(self, method: str) -> bool:
        return method not in ("bayes", "cpost") or self.mvn_models is not None


def sparse_normal_scenario(seed: int = 0) -> Scenario:
    models = sparse_normal_models()
    mu0 = np.array([mvn_kl_oracle(SPARSE_THETA0, m) for m in models])
    dgp = DgpSpec("mvn", n=0, seed=seed, theta0=tuple(SPARSE_THETA0))
    return Scenario("mvn-table1", dgp, mvn_meta(models), mu0, mvn_models=models)


GMM4_TRUTH = dict(weights=(0.3, 0.3, 0.25, 0.15), means=(-4.0, -1.0, 2.0, 6.0), variances=(1.0, 0.5, 1.0, 2.0))


@functools.lru_cache(maxsize=8)
def gmm_kl_oracle(dgp: DgpSpec, kmax: int, n_ref: int = 20000, restarts: int = 3, grid_points: int = 20001) -> np.ndarray:
    """Approximate min-KL of each k-component mixture to a Gaussian-mixture truth.

    Families with at least as many components as the truth contain it, so
    their divergence is exactly 0.  Smaller k are fitted once on a large
    reference sample from a dedicated substream and the divergence of that
    fit is integrated on a fine grid.
    """
    ref = simulate_dgp(replace(dgp, n=n_ref), 2**31 - 1).ravel()
    truth = GmmFit(
        np.asarray(dgp.weights, float), np.asarray(dgp.means, float), np.asarray(dgp.variances, float),
        loglik=0.0, objective=0.0, n_iter=0, restart=0,
    )
    sd = math.sqrt(max(dgp.variances))
    grid = np.linspace(min(dgp.means) - 12 * sd, max(dgp.means) + 12 * sd, grid_points)
    log_f0 = -truth.nll(grid)
    f0 = np.exp(log_f0)
    out = np.zeros(kmax)
    for k in range(1, min(kmax, len(dgp.weights) - 1) + 1):
        fit, _ = gmm_fit_em(ref, k, restarts=restarts, seed=dgp.seed, max_iter=300)
        out[k - 1] = max(0.0, float(integrate.trapezoid(f0 * (log_f0 + fit.nll(grid)), grid)))
    out.flags.writeable = False
    return out


def gmm4_scenario(seed: int = 0, kmax: int = 6) -> Scenario:
    dgp = DgpSpec("gmm", n=0, seed=seed, **GMM4_TRUTH)
    mu0 = gmm_kl_oracle(dgp, kmax)
    names = tuple(f"k{k}" for k in range(1, kmax + 1))
    meta = ModelMeta(tuple(float(k) for k in range(1, kmax + 1)), tuple(3 * k - 1 for k in range(1, kmax + 1)), names)
    return Scenario("gmm4", dgp, meta, mu0, gmm_kmax=kmax)


SCENARIOS = {"mvn-table1": sparse_normal_scenario, "gmm4": gmm4_scenario}


# --- method comparison --------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: Scenario
    n_grid: tuple[int, ...]
    deltas: tuple[float, ...]
    reps: int
    methods: tuple[str, ...]
    seed: int = 0
    T: int = 1000
    alpha_exponent: float = 0.45
    kappa0: float = 1.0
    prior_mean: float = 0.0

    def __post_init__(self):
        if self.reps < 1:
            raise LadValidationError("reps must be >= 1")
        if any(d < 0 for d in self.deltas):
            raise LadValidationError("all deltas must be >= 0")
        if not self.n_grid or any(n < 2 for n in self.n_grid):
            raise LadValidationError("every n must be >= 2")
        for m in self.methods:
            name, _ = parse_method(m)
            if not self.scenario.supports(name):
                raise LadValidationError(f"method {m!r} is not available for scenario {self.scenario.name!r}")


@dataclass(frozen=True)
class BrierRow:
    method: str
    n: int
    delta: float
    mean: float
    se: float
    reps: int
    failed: int = 0
    flag: str = ""


@dataclass
class BrierTable:
    rows: list[BrierRow]
    # per (method, n, delta): replicate weight vectors and Brier losses
    weights: dict = field(default_factory=dict, repr=False)
    losses: dict = field(default_factory=dict, repr=False)
    model_names: tuple[str, ...] = ()

    def row(self, method: str, n: int, delta: float) -> BrierRow:
        for r in self.rows:
            if r.method == method and r.n == n and r.delta == delta:
                return r
        raise KeyError((method, n, delta))

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "n", "delta", "mean", "se", "reps", "failed", "flag"])
        for r in self.rows:
            w.writerow([r.method, r.n, format_float(r.delta), format_float(r.mean), format_float(r.se), r.reps, r.failed, r.flag])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            self.write_csv(fh)

    def to_json(self) -> dict:
        return {
            "schema_version": 1,
            "model_names": list(self.model_names),
            "rows": [
                {
                    "method": r.method, "n": r.n, "delta": r.delta,
                    "mean": _finite_or_none(r.mean), "se": _finite_or_none(r.se),
                    "reps": r.reps, "failed": r.failed, "flag": r.flag,
                }
                for r in self.rows
            ],
        }


def _finite_or_none(x: float):
    return float(x) if math.isfinite(x) else None


def _method_weights(
    name: str,
    alpha: Optional[float],
    cfg: ExperimentConfig,
    data: np.ndarray,
    Z: LossMatrix,
    Zbc: LossMatrix,
    draws_cache: dict,
    draw_seed: int,
) -> dict[float, np.ndarray]:
    """Weight vector per delta for one method on one replicate."""
    meta = cfg.scenario.meta
    if name in LAD_METHODS:
        cov = "diag" if name == "lad-diag" else "full"
        if cov not in draws_cache:
            draws_cache[cov] = draw_posterior(Zbc, cfg.T, draw_seed, cov=cov)
        draws = draws_cache[cov]
        alpha_n = float(Z.n) ** cfg.alpha_exponent
        out = {}
        for d in cfg.deltas:
            if name in ("lad-soft", "lad-diag"):
                out[d] = slc_scores(draws, meta, d, alpha_n).w_hat
            elif name == "lad-hard":
                out[d] = hard_scores(draws, meta, d).w_hat
            else:
                out[d] = plugin_probabilities(draws, meta, d)
        return out
    if name in ("aic", "bic"):
        w = ic_weights(Z.values.sum(axis=0), meta.dims, Z.n, name)
    else:
        prior = None
        if cfg.prior_mean != 0.0:
            prior = tuple((cfg.prior_mean,) * m.d for m in cfg.scenario.mvn_models)
        cp = CPostConfig(alpha=math.inf if name == "bayes" else alpha, kappa0=cfg.kappa0, theta0_prior=prior)
        w = cpost_weights(cpost_log_marginals(data, cfg.scenario.mvn_models, cp))
    return {d: w for d in cfg.deltas}


def _run_replicate(cfg: ExperimentConfig, n: int, r: int) -> Optional[dict]:
    scen = cfg.scenario
    try:
        data = simulate_dgp(replace(scen.dgp, n=n, seed=cfg.seed), n, r)
        Z = scen.losses(data, rng.child_seed(cfg.seed, rng.DOMAIN_EM, n, r))
        Zbc = bias_correct(Z, scen.meta)
        draw_seed = rng.child_seed(cfg.seed, rng.DOMAIN_REPLICATE, n, r)
        cache: dict = {}
        out = {}
        for m in cfg.methods:
            name, alpha = parse_method(m)
            out[m] = _method_weights(name, alpha, cfg, data, Z, Zbc, cache, draw_seed)
        return out
    except (LadError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.warning("replicate n=%d r=%d failed: %s", n, r, exc)
        return None


def run_comparison(cfg: ExperimentConfig) -> BrierTable:
    """Mean Brier loss of every method against the oracle target set."""
    scen = cfg.scenario
    targets = {d: target_set(scen.mu0, d, scen.meta) for d in cfg.deltas}
    jobs = [(n, r) for n in cfg.n_grid for r in range(cfg.reps)]
    results = parallel_map(lambda job: _run_replicate(cfg, *job), jobs)
    table = BrierTable(rows=[], model_names=scen.meta.model_names)
    for m in cfg.methods:
        for n in cfg.n_grid:
            reps = [results[i] for i, job in enumerate(jobs) if job[0] == n]
            ok = [res for res in reps if res is not None]
            failed = len(reps) - len(ok)
            for d in cfg.deltas:
                W = np.array([res[m][d] for res in ok]).reshape(len(ok), scen.meta.K)
                losses = np.array([brier_loss(w, targets[d]) for w in W])
                flag = ""
                if losses.size == 0:
                    mean, se, flag = math.nan, math.nan, "no-successful-replicates"
                elif losses.size == 1:
                    mean, se, flag = float(losses[0]), 0.0, "single-replicate-se"
                else:
                    mean = float(np.mean(losses))
                    se = float(np.std(losses, ddof=1) / math.sqrt(losses.size))
                table.rows.append(BrierRow(m, n, d, mean, se, int(losses.size), failed, flag))
                table.weights[(m, n, d)] = W
                table.losses[(m, n, d)] = losses
    return table


# --- stability experiments ----------------------------------------------------


@dataclass(frozen=True)
class TieResult:
    ks: float
    p_value: float
    scores: np.ndarray  # reps x 2


def tie_uniformity_experiment(reps: int, n: int, T: int = 1000, seed: int = 0, variant: str = "hard") -> TieResult:
    """Scores of two equally good, equally complex sparse-normal models.

    Uses candidates 4 and 5 of the sparse-normal scenario (both have three
    free coordinates and the same KL divergence).  Returns the one-sample
    Kolmogorov-Smirnov distance of the first model's score to Uniform(0, 1).
    """
    if reps < 2:
        raise LadValidationError("the KS distance needs at least 2 replicates")
    models = sparse_normal_models()[3:5]
    meta = mvn_meta(models)
    dgp = DgpSpec("mvn", n=n, seed=seed, theta0=tuple(SPARSE_THETA0))
    alpha_n = float(n) ** 0.45

    def one(r: int) -> np.ndarray:
        data = simulate_dgp(dgp, 1, r)
        Zbc = bias_correct(mvn_loss_matrix(data, models), meta)
        draws = draw_posterior(Zbc, T, rng.child_seed(seed, rng.DOMAIN_REPLICATE, 1, r))
        if variant == "hard":
            return hard_scores(draws, meta, 0.0).w_hat
        return slc_scores(draws, meta, 0.0, alpha_n).w_hat

    scores = np.array(parallel_map(one, list(range(reps))))
    res = stats.kstest(scores[:, 0], "uniform")
    return TieResult(ks=float(res.statistic), p_value=float(res.pvalue), scores=scores)


def argmin_instability_experiment(
    T: int = 100000, seed: int = 0, sigma0: Optional[np.ndarray] = None, n: int = 500
) -> np.ndarray:
    """Frequency with which each coordinate is the argmin under N(0, sigma0 / n)."""
    sigma0 = INSTABILITY_SIGMA0 if sigma0 is None else np.asarray(sigma0, dtype=np.float64)
    K = sigma0.shape[0]
    draws = gaussian_draws(np.zeros(K), sigma0 / n, T, seed)
    meta = ModelMeta((1.0,) * K, (0,) * K)
    return plugin_probabilities(draws, meta, 0.0)


# --- calibration experiments --------------------------------------------------


def wilks_bias_experiment(reps: int = 500, n: int = 200, seed: int = 0, theta0: Sequence[float] = SPARSE_THETA0) -> np.ndarray:
    """Bias-corrected mean loss of the full model minus the entropy, per replicate.

    The full model is correctly specified, so the population value is zero.
    """
    theta0 = np.asarray(theta0, dtype=np.float64)
    p = theta0.size
    model = MvnSupportModel(frozenset(range(p)), p)
    entropy = 0.5 * p * math.log(2.0 * math.pi * math.e)
    dgp = DgpSpec("mvn", n=n, seed=seed, theta0=tuple(theta0))
    out = np.empty(reps)
    for r in range(reps):
        _, losses, d = mvn_fit_and_loss(simulate_dgp(dgp, 2, r), model)
        out[r] = losses.mean() + d / (2.0 * n) - entropy
    return out


def clt_experiment(mu0: np.ndarray, sigma0: np.ndarray, n: int, reps: int, seed: int = 0) -> np.ndarray:
    """``sqrt(n) (mu' - mu0)`` for one posterior draw per synthetic dataset.

    Rows of each dataset are i.i.d. N(mu0, sigma0); the pooled draws should
    have covariance close to ``2 sigma0``.
    """
    mu0 = np.asarray(mu0, dtype=np.float64)
    L = np.linalg.cholesky(sigma0)
    K = mu0.size

    def one(r: int) -> np.ndarray:
        gen = rng.substream(seed, rng.DOMAIN_SIMULATE, 3, r)
        Z = LossMatrix(mu0 + gen.standard_normal((n, K)) @ L.T)
        post = niw_update(default_prior(K), summarize(Z))
        draw = sample_posterior(post, 1, rng.child_seed(seed, rng.DOMAIN_REPLICATE, 3, r), compact=True)
        return math.sqrt(n) * (draw.mus[0] - mu0)

    return np.array(parallel_map(one, list(range(reps))))


def tau_calibration(n: int, deltas: Sequence[float], seed: int = 0) -> dict[float, float]:
    """Estimated tau for each delta on one simulated sparse-normal dataset."""
    scen = sparse_normal_scenario(seed)
    data = simulate_dgp(replace(scen.dgp, n=n), 4, 0)
    Zbc = bias_correct(mvn_loss_matrix(data, scen.mvn_models), scen.meta)
    mu_noise = noise_reference(data, "standard_mvn")
    mu_min = float(Zbc.values.mean(axis=0).min())
    return {d: rescale_tolerance(d, mu_noise, mu_min) for d in deltas}
