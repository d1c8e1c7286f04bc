"""Moment maps between latent and reported series and the method-of-moments estimator."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DegenerateSeriesError, DomainError, EstimationError, NonStationaryError
from .simulate import ThinnedArParams, simulate_thinned_pois_ar


@dataclass(frozen=True)
class SeriesMoments:
    mean: float
    variance: float
    acf1: float

    def __post_init__(self):
        if self.variance < 0:
            raise DomainError("variance must be nonnegative")
        if abs(self.acf1) > 1 + 1e-12:
            raise DomainError("lag-1 autocorrelation must lie in [-1, 1]")


def sample_moments(y) -> SeriesMoments:
    """Mean, 1/T variance and 1/T lag-1 autocorrelation."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise DomainError("need a 1-d series of length >= 3")
    m = y.mean()
    d = y - m
    g0 = np.dot(d, d) / y.size
    if g0 == 0:
        raise DegenerateSeriesError("constant series: lag-1 autocorrelation is undefined")
    g1 = np.dot(d[:-1], d[1:]) / y.size
    return SeriesMoments(float(m), float(g0), float(g1 / g0))


def moment_standard_errors(y, n_batches: int = 200) -> SeriesMoments:
    """Batch-means Monte-Carlo standard errors of the three sample moments.

    Each moment is linearised around the full-sample estimate; the batch means
    of the resulting influence series absorb serial dependence.
    """
    y = np.asarray(y, dtype=float)
    n = y.size - 1
    m = y.mean()
    d = y - m
    g0 = np.dot(d, d) / y.size
    g1 = np.dot(d[:-1], d[1:]) / y.size
    rho = g1 / g0
    infl = {
        "mean": d[:n],
        "variance": d[:n] ** 2 - g0,
        "acf1": (d[:-1] * d[1:] - g1 - rho * (d[:n] ** 2 - g0)) / g0,
    }
    size = n // n_batches
    out = {}
    for key, series in infl.items():
        b = series[: size * n_batches].reshape(n_batches, size).mean(axis=1)
        out[key] = float(b.std(ddof=1) / np.sqrt(n_batches))
    return SeriesMoments(out["mean"], out["variance"], min(out["acf1"], 1.0))


def stationary_latent_moments(nu: float, phi: float) -> SeriesMoments:
    """``mu = nu / (1 - phi)``, ``sigma^2 = mu / (1 - phi^2)``, lag-1 correlation ``phi``."""
    if phi >= 1:
        raise NonStationaryError(f"phi={phi} >= 1 has no stationary moments")
    if phi < 0 or nu <= 0:
        raise DomainError("need nu > 0 and 0 <= phi < 1")
    mu = nu / (1.0 - phi)
    return SeriesMoments(mu, mu / (1.0 - phi * phi), phi)


def observed_moments_from_latent(latent: SeriesMoments, phi: float, pi: float) -> SeriesMoments:
    """Moments of the thinned series given latent mean and variance."""
    if not 0 < pi <= 1:
        raise DomainError("pi must lie in (0, 1]")
    mu_t = pi * latent.mean
    var_t = pi * pi * latent.variance + pi * (1.0 - pi) * latent.mean
    if var_t == 0:
        raise DegenerateSeriesError("thinned variance is zero")
    return SeriesMoments(mu_t, var_t, (1.0 - (1.0 - pi) * mu_t / var_t) * phi)


def observed_moments(params: ThinnedArParams) -> SeriesMoments:
    return observed_moments_from_latent(stationary_latent_moments(params.nu, params.phi), params.phi, params.pi)


@dataclass(frozen=True)
class MomEstimate:
    phi: float
    pi: float
    nu: float
    flags: tuple[str, ...] = field(default=())

    @property
    def in_space(self) -> bool:
        return not self.flags


def invert_moments(m: SeriesMoments) -> MomEstimate:
    """Solve the moment equations for phi, then pi, then nu. Out-of-space values are flagged, not clipped."""
    if m.acf1 == 0:
        raise EstimationError("lag-1 autocorrelation is zero: phi is not identified")
    if m.mean == 0:
        raise EstimationError("zero mean: pi is not identified")
    ratio = m.mean / m.variance
    phi = (1.0 - ratio) / m.acf1
    if phi == 0:
        raise EstimationError("phi estimate is zero: pi is not identified")
    pi = 1.0 - (1.0 - m.acf1 / phi) / ratio
    if pi == 0:
        raise EstimationError("pi estimate is zero: nu is not identified")
    nu = (1.0 - phi) * m.mean / pi
    flags = []
    if not 0 < phi < 1:
        flags.append("phi_out_of_space")
    if not 0 < pi <= 1:
        flags.append("pi_out_of_space")
    if not nu > 0:
        flags.append("nu_out_of_space")
    return MomEstimate(float(phi), float(pi), float(nu), tuple(flags))


def mom_estimate(y) -> MomEstimate:
    return invert_moments(sample_moments(y))


ESTIMANDS = ("phi", "pi", "nu")


def mom_study(grid, nu: float, lengths, reps: int, seed: int, burn_in: int = 50) -> pd.DataFrame:
    """Sampling distribution of the moment estimators over a (phi, pi) grid.

    Returns one row per (cell, length, estimand) with 10/50/90th percentiles
    (linear interpolation). Replicates whose estimator is undefined are
    dropped; their count per (cell, length) is kept in ``df.attrs["failures"]``.
    """
    rows = []
    failures = {}
    for ci, (phi, pi) in enumerate(grid):
        params = ThinnedArParams(nu, phi, pi)
        for li, t_len in enumerate(lengths):
            est = np.full((reps, 3), np.nan)
            for r in range(reps):
                y = simulate_thinned_pois_ar(params, int(t_len), burn_in, seed, stream=(ci, li, r)).y
                try:
                    e = mom_estimate(y)
                except (EstimationError, DegenerateSeriesError):
                    continue
                est[r] = (e.phi, e.pi, e.nu)
            ok = ~np.isnan(est[:, 0])
            failures[(phi, pi, int(t_len))] = int(reps - ok.sum())
            for k, name in enumerate(ESTIMANDS):
                q = np.quantile(est[ok, k], [0.1, 0.5, 0.9]) if ok.any() else [np.nan] * 3
                rows.append({"phi": phi, "pi": pi, "T": int(t_len),
                             "q10": q[0], "q50": q[1], "q90": q[2], "estimand": name})
    df = pd.DataFrame(rows, columns=["phi", "pi", "T", "q10", "q50", "q90", "estimand"])
    df.attrs["failures"] = failures
    return df
