"""Integer epidemic curves from approximate-posterior draws, plus prevalence summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import special

from .errors import ValidationError
from .mcmc import ChainConfig, DrawStore, run_chains
from .numerics import PROB_EPS, poisson_quantile

STATISTICS = ("median", "lo", "hi")


@dataclass
class Reconstruction:
    """Integer draws of X shaped like the inputs; excluded draws hold -1."""

    x: np.ndarray
    valid: np.ndarray
    n_excluded: int
    n_clamped: int


def reconstruct_counts(zstar, lam, count_family: str = "poisson") -> Reconstruction:
    """``X = F^{-1}_{Pois(lambda)}(clamp(Phi(z*)))`` per draw and time point.

    Inputs are shaped ``(draws..., T)``; a draw (every axis but the last) with
    any ``lambda <= 0`` or non-finite value is excluded and counted.
    """
    if count_family != "poisson":
        raise ValidationError(f"reconstruction for count family {count_family!r} is not implemented")
    zstar = np.asarray(zstar, dtype=float)
    lam = np.asarray(lam, dtype=float)
    if zstar.shape != lam.shape:
        raise ValidationError("z* and lambda draws must be aligned")
    bad = ~(np.isfinite(lam) & (lam > 0) & np.isfinite(zstar))
    valid = ~bad.any(axis=-1)
    x = np.full(lam.shape, -1, dtype=np.int64)
    if valid.any():
        u = np.clip(special.ndtr(zstar[valid]), PROB_EPS, 1.0 - PROB_EPS)
        n_clamped = int(np.sum((u == PROB_EPS) | (u == 1.0 - PROB_EPS)))
        x[valid] = poisson_quantile(u, lam[valid])
    else:
        n_clamped = 0
    return Reconstruction(x, valid, int(np.sum(~valid)), n_clamped)


@dataclass
class ReconstructionSummary:
    """Per (stratum, t) integer median and equal-tailed bounds at ``level``."""

    strata: list[str]
    t: np.ndarray
    median: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    level: float

    def __post_init__(self):
        if not (np.all(self.lo <= self.median) and np.all(self.median <= self.hi)):
            raise ValidationError("summary bounds must bracket the median")

    def to_frame(self) -> pd.DataFrame:
        S, T = self.median.shape
        return pd.DataFrame({
            "stratum": np.repeat(self.strata, T),
            "t": np.tile(self.t, S),
            "median": self.median.reshape(-1),
            "lo": self.lo.reshape(-1),
            "hi": self.hi.reshape(-1),
            "level": self.level,
        })

    def drop_first(self) -> "ReconstructionSummary":
        return ReconstructionSummary(self.strata, self.t[1:], self.median[:, 1:], self.lo[:, 1:],
                                     self.hi[:, 1:], self.level)


def summarize_counts(x, level: float = 0.9, strata: list[str] | None = None,
                     valid: np.ndarray | None = None) -> ReconstructionSummary:
    """Summarise integer draws ``(..., S, T)`` (leading axes are pooled).

    Every statistic is a value attained by the draws: the lower median and
    the inverted-CDF quantiles at ``(1 - level) / 2`` and ``(1 + level) / 2``.
    """
    if not 0 < level < 1:
        raise ValidationError("level must lie in (0, 1)")
    x = np.asarray(x)
    if x.ndim < 2:
        raise ValidationError("draws must be shaped (..., S, T)")
    S, T = x.shape[-2:]
    flat = x.reshape(-1, S, T)
    if valid is not None:
        flat = flat[np.asarray(valid).reshape(-1)]
    if flat.shape[0] == 0:
        raise ValidationError("no valid draws to summarise")
    a = (1.0 - level) / 2.0
    q = np.quantile(flat, [0.5, a, 1.0 - a], axis=0, method="inverted_cdf").astype(np.int64)
    labels = strata or [str(i + 1) for i in range(S)]
    return ReconstructionSummary(list(labels), np.arange(1, T + 1), q[0], q[1], q[2], level)


def perfect_match_rate(a: ReconstructionSummary, b: ReconstructionSummary) -> float:
    """Percentage of (stratum, t, statistic) cells where the two integer summaries coincide."""
    if a.median.shape != b.median.shape or not np.array_equal(a.t, b.t):
        raise ValidationError("summaries cover different index sets")
    if a.level != b.level:
        raise ValidationError("summaries use different credible levels")
    hits = sum(int(np.sum(getattr(a, s) == getattr(b, s))) for s in STATISTICS)
    return 100.0 * hits / (3 * a.median.size)


def prevalence_rollup(x, window: int = 14, population=1.0) -> np.ndarray:
    """``sum_{k < window} X_{t-k} / population`` along the last axis (partial windows at the start).

    ``population`` broadcasts against ``x[..., :1]`` (e.g. shape ``(S, 1)``).
    Values above one are returned unchanged.
    """
    if window < 1:
        raise ValidationError("window must be >= 1")
    pop = np.asarray(population, dtype=float)
    if np.any(pop <= 0):
        raise ValidationError("population must be positive")
    x = np.asarray(x, dtype=float)
    c = np.cumsum(x, axis=-1)
    out = c.copy()
    out[..., window:] = c[..., window:] - c[..., :-window]
    return out / pop


# -- survey smoother --------------------------------------------------------------------

@dataclass(frozen=True)
class SmootherPriors:
    """Random walk on ``logit xi``: ``logit xi_1 ~ N(m0, s0)``, steps ``N(0, sigma)``, ``sigma ~ Exp(rate)``."""

    init_mean: float = 0.0
    init_sd: float = 5.0
    sigma_rate: float = 0.01


class PrevalenceSmoother:
    """Non-centred random-walk binomial model for one stratum's survey rows.

    ``u = (log sigma, eta_1, e_2..e_D)`` with ``eta_d = eta_{d-1} + sigma e_d``.
    """

    def __init__(self, tests, positives, priors: SmootherPriors = SmootherPriors()):
        self.R = np.asarray(tests, dtype=float)
        self.P = np.asarray(positives, dtype=float)
        if self.R.size == 0:
            raise ValidationError("empty survey")
        if np.any(self.P < 0) or np.any(self.P > self.R):
            raise ValidationError("survey rows need 0 <= positives <= tests")
        self.priors = priors
        self.D = self.R.size
        self.dim = self.D + 1
        self.const = float(np.sum(special.gammaln(self.R + 1) - special.gammaln(self.P + 1)
                                  - special.gammaln(self.R - self.P + 1)))

    def eta(self, u):
        sigma = math.exp(u[0])
        steps = np.concatenate([[u[1]], sigma * u[2:]])
        return np.cumsum(steps)

    def __call__(self, u, want_gradient: bool = True):
        u = np.asarray(u, dtype=float)
        pr = self.priors
        sigma = math.exp(u[0])
        eta = self.eta(u)
        e = u[2:]
        lp = self.const + float(np.sum(self.P * eta - self.R * np.logaddexp(0.0, eta)))
        lp += -0.5 * ((u[1] - pr.init_mean) / pr.init_sd) ** 2 - math.log(pr.init_sd) - 0.5 * math.log(2 * math.pi)
        lp += -0.5 * float(e @ e) - 0.5 * math.log(2 * math.pi) * e.size
        lp += math.log(pr.sigma_rate) - pr.sigma_rate * sigma + u[0]
        if not want_gradient:
            return lp, None
        g_eta = self.P - self.R * special.expit(eta)
        tail = np.cumsum(g_eta[::-1])[::-1]  # d/d step_d = sum_{k >= d} g_eta_k
        g = np.empty(self.dim)
        g[1] = tail[0] - (u[1] - pr.init_mean) / pr.init_sd ** 2
        g[2:] = sigma * tail[1:] - e
        g[0] = sigma * float(tail[1:] @ e) - pr.sigma_rate * sigma + 1.0
        return lp, g

    def init(self, rng):
        p = (self.P + 0.5) / (self.R + 1.0)
        eta = special.logit(p)
        sigma = max(float(np.std(np.diff(eta))) if self.D > 2 else 0.5, 0.05)
        u = np.empty(self.dim)
        u[0] = math.log(sigma)
        u[1] = eta[0]
        u[2:] = np.diff(eta) / sigma
        return u + rng.uniform(-0.1, 0.1, self.dim)

    def report(self, u):
        return np.concatenate([[math.exp(u[0])], special.expit(self.eta(u))])


def smooth_prevalence(tests, positives, priors: SmootherPriors = SmootherPriors(),
                      config: ChainConfig | None = None, stream_keys: tuple[int, ...] = ()) -> DrawStore:
    """Posterior draws of ``sigma`` and ``xi[1..D]`` for one stratum's ordered survey rows."""
    model = PrevalenceSmoother(tests, positives, priors)
    config = config or ChainConfig(n_chains=4, n_iter=2000, n_warmup=1000)
    names = ["sigma"] + [f"xi[{d + 1}]" for d in range(model.D)]
    return run_chains(model, config, init=model.init, report=model.report, names=names, stream_keys=stream_keys)


def interval_frame(draws: np.ndarray, level: float = 0.95) -> pd.DataFrame:
    """Median and equal-tailed bounds (linear interpolation) of ``(n, K)`` draws."""
    a = (1.0 - level) / 2.0
    q = np.quantile(draws, [0.5, a, 1.0 - a], axis=0)
    return pd.DataFrame({"median": q[0], "lo": q[1], "hi": q[2]})
