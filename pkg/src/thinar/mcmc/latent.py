"""Single-site Metropolis updates of the latent true counts."""

from __future__ import annotations

import math

import numba
import numpy as np

from ..errors import DomainError


@numba.njit(cache=True)
def _local_logp(x, y, t, xt, nu, phi, pi, known_first, lambda1):
    """Terms of the exact log-joint that involve ``x_t = xt``."""
    T = x.shape[0]
    if xt < y[t] or xt < 0:
        return -np.inf
    if pi >= 1.0:
        if xt != y[t]:
            return -np.inf
        s = 0.0
    else:
        s = math.lgamma(xt + 1.0) - math.lgamma(xt - y[t] + 1.0) + (xt - y[t]) * math.log1p(-pi)
    if t >= 1:
        lam = nu + phi * x[t - 1]
        s += xt * math.log(lam) - math.lgamma(xt + 1.0)
    elif not known_first:
        s += xt * math.log(lambda1) - math.lgamma(xt + 1.0)
    if t < T - 1:
        lam2 = nu + phi * xt
        s += x[t + 1] * math.log(lam2) - lam2
    return s


@numba.njit(cache=True)
def latent_sweep(gen, x, y, nu, phi, pi, width, known_first, lambda1):
    """One in-place sweep over t; proposals uniform on ``{x_t - w..x_t + w} \\ {x_t}``. Returns acceptances."""
    T = x.shape[0]
    n_acc = 0
    start = 1 if known_first else 0
    for t in range(start, T):
        k = 1 + int(gen.random() * width)
        if k > width:
            k = width
        prop = x[t] - k if gen.random() < 0.5 else x[t] + k
        lu = math.log(gen.random())
        if prop < y[t]:
            continue
        cur = _local_logp(x, y, t, x[t], nu, phi, pi, known_first, lambda1)
        new = _local_logp(x, y, t, prop, nu, phi, pi, known_first, lambda1)
        if lu < new - cur:
            x[t] = prop
            n_acc += 1
    return n_acc


def proposal_width(nu: float, phi: float) -> int:
    """``max(1, round(sqrt(3 sigma^2)))`` with the stationary latent variance ``sigma^2``.

    A uniform step on ``{-w..w} \\ {0}`` has variance ``w (w + 1) (2w + 1) / (3 (2w))``,
    about ``w^2 / 3``, so this width roughly matches the proposal spread to the
    latent series' own variance.
    """
    if not (0 <= phi < 1):
        raise DomainError("proposal width needs 0 <= phi < 1")
    mu = nu / (1.0 - phi)
    return max(1, int(round(math.sqrt(3.0 * mu / (1.0 - phi * phi)))))


def update_latent_counts(x, y, params, width: int, rng: np.random.Generator, x1_mode: str = "known",
                         lambda1: float = 1.0) -> tuple[np.ndarray, int]:
    """Return an updated copy of ``x`` after one sweep and the number of accepted moves.

    ``params`` exposes ``nu``, ``phi`` and ``pi``. With ``x1_mode="known"`` the
    first count is held fixed.
    """
    x = np.array(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if width < 1:
        raise DomainError("width must be >= 1")
    n = latent_sweep(rng, x, y, float(params.nu), float(params.phi), float(params.pi), int(width),
                     x1_mode == "known", float(lambda1))
    return x, int(n)
