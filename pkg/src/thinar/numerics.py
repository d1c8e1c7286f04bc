"""Special functions: standard normal CDF/quantile, Poisson CDF/quantile.

All functions accept scalars or arrays and are pure.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .errors import DomainError

PROB_EPS = 1e-12


def clamp_probability(p, eps: float = PROB_EPS):
    """Clamp ``p`` into ``[eps, 1 - eps]``.

    Returns
    -------
    clamped : ndarray or float
    n_clamped : int
        How many entries were moved.
    """
    arr = np.asarray(p, dtype=float)
    out = np.clip(arr, eps, 1.0 - eps)
    n = int(np.count_nonzero(out != arr))
    if out.ndim == 0:
        return float(out), n
    return out, n


def std_normal_cdf(x):
    """Standard normal CDF, absolute error below 1e-15 (erfc based)."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0.0) & (arr < 1.0)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def _check_lambda(lam):
    lam = np.asarray(lam, dtype=float)
    if not np.all(np.isfinite(lam)) or np.any(lam <= 0.0):
        raise DomainError("Poisson rate must be finite and positive")
    return lam


def poisson_cdf(k, lam):
    """P(N <= k) for N ~ Poisson(lam), via the regularised upper incomplete gamma."""
    lam = _check_lambda(lam)
    k = np.asarray(k)
    if np.any(k < 0):
        raise DomainError("poisson_cdf requires k >= 0")
    out = special.pdtr(np.floor(k), lam)
    return float(out) if out.ndim == 0 else out


def poisson_logpmf(k, lam):
    k = np.asarray(k, dtype=float)
    lam = np.asarray(lam, dtype=float)
    return special.xlogy(k, lam) - lam - special.gammaln(k + 1.0)


def poisson_quantile(p, lam, return_clamped: bool = False):
    """Generalised inverse ``inf{n : F(n) >= p}`` of the Poisson(lam) CDF.

    ``p`` must lie in (0, 1); it is then clamped to ``[1e-12, 1 - 1e-12]``.
    The search starts at a Cornish-Fisher normal guess and walks one step at a
    time, so the expected work is O(1) even for rates near 1e5.
    """
    p_arr = np.asarray(p, dtype=float)
    if not np.all((p_arr > 0.0) & (p_arr < 1.0)):
        raise DomainError("poisson_quantile requires 0 < p < 1")
    lam = _check_lambda(lam)
    p_arr, n_clamped = clamp_probability(p_arr)
    p_arr, lam = np.broadcast_arrays(np.asarray(p_arr, dtype=float), lam)
    scalar = p_arr.ndim == 0
    p_flat = p_arr.reshape(-1)
    lam_flat = lam.reshape(-1)

    z = special.ndtri(p_flat)
    guess = lam_flat + z * np.sqrt(lam_flat) + (z * z - 1.0) / 6.0
    n = np.maximum(np.floor(guess), 0.0)

    # walk up while F(n) < p
    active = special.pdtr(n, lam_flat) < p_flat
    while np.any(active):
        n[active] += 1.0
        idx = np.flatnonzero(active)
        active[idx] = special.pdtr(n[idx], lam_flat[idx]) < p_flat[idx]
    # walk down while F(n - 1) >= p
    active = n > 0
    idx = np.flatnonzero(active)
    active[idx] = special.pdtr(n[idx] - 1.0, lam_flat[idx]) >= p_flat[idx]
    while np.any(active):
        n[active] -= 1.0
        idx = np.flatnonzero(active & (n > 0))
        active[:] = False
        active[idx] = special.pdtr(n[idx] - 1.0, lam_flat[idx]) >= p_flat[idx]

    out = n.astype(np.int64).reshape(p_arr.shape)
    if scalar:
        out = int(out)
    if return_clamped:
        return out, n_clamped
    return out
