"""What happens to Poisson-autoregression estimates when thinning is ignored.

A naive fit treats the reported series as a Poisson autoregression. Its
probability limits are functions of the true reporting probability ``pi``;
this module evaluates them, their derivatives in ``pi``, two closed-form sign
conditions for the bias in ``nu`` (as published, plus algebraically corrected
versions) and a Newton fitter for the naive model itself.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import special

from .errors import DomainError, InternalConsistencyWarning, NonStationaryError
from .moments import stationary_latent_moments
from .simulate import ThinnedArParams


@dataclass(frozen=True)
class NaiveLimit:
    phi_lim: float
    nu_lim: float
    tau_tilde: float


def _check(params: ThinnedArParams) -> None:
    if params.phi >= 1:
        raise NonStationaryError("naive limits need phi < 1")


def naive_limits(params: ThinnedArParams) -> NaiveLimit:
    """Probability limits of the naive (phi, nu) estimates.

    ``tau = pi s2 / (pi s2 + (1 - pi) mu)`` with stationary latent ``mu``, ``s2``;
    ``phi_lim = tau phi`` and ``nu_lim = (1 - tau phi) pi nu / (1 - phi)``.
    """
    _check(params)
    lat = stationary_latent_moments(params.nu, params.phi)
    pi = params.pi
    tau = pi * lat.variance / (pi * lat.variance + (1.0 - pi) * lat.mean)
    phi_lim = tau * params.phi
    return NaiveLimit(phi_lim, (1.0 - phi_lim) * pi * params.nu / (1.0 - params.phi), tau)


def derivative_formulas(params: ThinnedArParams) -> tuple[float, float]:
    """``(d phi_lim / d pi, d nu_lim / d pi)``.

    ``phi'(pi) = phi mu s2 / (pi s2 + (1 - pi) mu)^2`` and, differentiating
    ``nu_lim = (1 - phi_lim) pi mu``, ``nu'(pi) = mu - pi mu phi'(pi) - phi_lim mu``.
    """
    _check(params)
    lat = stationary_latent_moments(params.nu, params.phi)
    mu, s2, pi, phi = lat.mean, lat.variance, params.pi, params.phi
    denom = pi * s2 + (1.0 - pi) * mu
    phi_prime = phi * mu * s2 / denom ** 2
    phi_pi = phi * pi * s2 / denom
    return phi_prime, mu - pi * mu * phi_prime - phi_pi * mu


@dataclass(frozen=True)
class PropBounds:
    """Sign conditions for the bias of the naive ``nu`` estimate.

    ``prop1_threshold`` / ``overestimates_nu`` and ``nu_prime_negative`` /
    ``nu_prime_negative_alt`` are the published closed forms evaluated as
    printed (the ``_alt`` variant uses the ``4 (1 - pi)^2`` constant).
    ``*_exact`` fields come from direct evaluation of the limits; the
    ``corrected_*`` fields are the algebraic conditions that agree with them.
    """

    prop1_threshold: float
    overestimates_nu: bool
    nu_prime_negative: bool
    nu_prime_negative_alt: bool
    quadratic: float
    corrected_threshold: float
    overestimates_nu_exact: bool
    nu_prime_negative_exact: bool
    nu_prime_negative_corrected: bool


def prop1_threshold(pi: float) -> float:
    """``sqrt(max(0, 1 - 1 / ((1 - pi) + 1 / pi)))`` as published."""
    return math.sqrt(max(0.0, 1.0 - 1.0 / ((1.0 - pi) + 1.0 / pi)))


def corrected_threshold(pi: float) -> float:
    """Root in phi of ``phi^2 + pi phi = 1``; the naive ``nu`` is too large iff phi exceeds it (pi < 1)."""
    return (math.sqrt(pi * pi + 4.0) - pi) / 2.0


def prop2_quadratic(pi: float, phi: float, constant: float = 1.0) -> float:
    """``(1-phi) a^2 + (2 - 2pi - 2phi + phi pi) a + c (1-pi)^2`` with ``a = pi / (1 - phi^2)``."""
    a = pi / (1.0 - phi * phi)
    return (1.0 - phi) * a * a + (2.0 - 2.0 * pi - 2.0 * phi + phi * pi) * a + constant * (1.0 - pi) ** 2


def prop_bounds(pi: float, phi: float, warn: bool = True) -> PropBounds:
    """Evaluate the closed-form bias conditions and cross-check them.

    ``nu`` cancels from every sign condition, so a unit value is used. An
    :class:`InternalConsistencyWarning` is emitted when the published
    ``nu'`` condition disagrees with the sign of :func:`derivative_formulas`.
    """
    if not (0 < pi <= 1 and 0 < phi < 1):
        raise DomainError("need 0 < pi <= 1 and 0 < phi < 1")
    params = ThinnedArParams(1.0, phi, pi)
    thr = prop1_threshold(pi)
    q = prop2_quadratic(pi, phi)
    q_alt = prop2_quadratic(pi, phi, 4.0)
    lim = naive_limits(params)
    nu_prime = derivative_formulas(params)[1]
    out = PropBounds(
        prop1_threshold=thr,
        overestimates_nu=bool(phi < thr),
        nu_prime_negative=bool(q > 0),
        nu_prime_negative_alt=bool(q_alt > 0),
        quadratic=q,
        corrected_threshold=corrected_threshold(pi),
        overestimates_nu_exact=bool(lim.nu_lim > 1.0),
        nu_prime_negative_exact=bool(nu_prime < 0),
        nu_prime_negative_corrected=bool(q < 0),
    )
    if warn and out.nu_prime_negative != out.nu_prime_negative_exact:
        warnings.warn(f"published nu' sign condition disagrees with the derivative at pi={pi}, phi={phi}",
                      InternalConsistencyWarning, stacklevel=2)
    return out


def nu_lim_fd_slope(pi: float, phi: float, nu: float = 1.0, h: float = 1e-6) -> float:
    """Central finite difference of ``nu_lim`` in ``pi`` (one-sided at ``pi = 1``)."""
    f = lambda p: naive_limits(ThinnedArParams(nu, phi, p)).nu_lim  # noqa: E731
    if pi + h > 1:
        return (f(pi) - f(pi - h)) / h
    return (f(pi + h) - f(pi - h)) / (2 * h)


# -- naive Poisson autoregression fit ---------------------------------------------------

@dataclass(frozen=True)
class NaiveFit:
    nu_hat: float
    phi_hat: float
    loglik: float
    converged: bool
    n_iter: int
    at_boundary: bool
    se_nu: float
    se_phi: float


def _naive_terms(a: float, b: float, prev: np.ndarray, cur: np.ndarray):
    nu, phi = math.exp(a), math.exp(b)
    lam = nu + phi * prev
    ll = float(np.sum(cur * np.log(lam) - lam))
    w = cur / lam - 1.0
    g = np.array([nu * w.sum(), phi * np.dot(w, prev)])
    q = cur / (lam * lam)
    h_nn, h_np, h_pp = -q.sum(), -np.dot(q, prev), -np.dot(q, prev * prev)
    H = np.array([[nu * nu * h_nn + g[0], nu * phi * h_np],
                  [nu * phi * h_np, phi * phi * h_pp + g[1]]])
    return ll, g, H, w


def naive_pois_ar_mle(y, init: tuple[float, float] | None = None, max_iter: int = 200,
                      tol: float = 1e-8, n_batches: int = 100) -> NaiveFit:
    """Conditional MLE of ``Y_t | Y_{t-1} ~ Pois(nu + phi Y_{t-1})``.

    Newton iterations on ``(log nu, log phi)`` with step halving; converged when
    the per-observation score has infinity-norm below ``tol``. Standard errors
    are sandwich estimates with batch-means scores, which stay valid when the
    model is misspecified (as it is for thinned data).
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or y.size < 3:
        raise DomainError("need a 1-d series of length >= 3")
    if np.any(y < 0):
        raise DomainError("counts must be nonnegative")
    prev, cur = y[:-1], y[1:]
    n = cur.size
    if init is None:
        m = max(float(y.mean()), 1e-3)
        init = (0.5 * m, 0.5)
    a, b = math.log(max(init[0], 1e-10)), math.log(max(init[1], 1e-10))
    ll, g, H, w = _naive_terms(a, b, prev, cur)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(g)) / n < tol:
            converged = True
            break
        try:
            step = -np.linalg.solve(H, g)
            ascent = float(step @ g) > 0
        except np.linalg.LinAlgError:
            ascent = False
        if not ascent:  # fall back to Fisher scoring, always an ascent direction
            F = _fisher(a, b, prev)
            step = np.linalg.solve(F, g)
        step = np.clip(step, -5.0, 5.0)
        t = 1.0
        for _ in range(60):
            a1, b1 = a + t * step[0], b + t * step[1]
            ll1, g1, H1, w1 = _naive_terms(a1, b1, prev, cur)
            if np.isfinite(ll1) and ll1 >= ll - 1e-12 * abs(ll):
                break
            t *= 0.5
        else:
            break
        a, b, ll, g, H, w = a1, b1, ll1, g1, H1, w1
    else:
        converged = np.max(np.abs(g)) / n < tol
    nu, phi = math.exp(a), math.exp(b)
    ll_full = ll - float(np.sum(special.gammaln(cur + 1)))
    se_nu, se_phi = _sandwich_se(nu, phi, prev, cur, w, n_batches)
    at_boundary = nu < 1e-6 or phi < 1e-6
    return NaiveFit(nu, phi, ll_full, bool(converged and not at_boundary), it, at_boundary, se_nu, se_phi)


def _fisher(a, b, prev):
    nu, phi = math.exp(a), math.exp(b)
    lam = nu + phi * prev
    J = np.stack([np.full_like(prev, nu), phi * prev])
    return (J / lam) @ J.T + 1e-12 * np.eye(2)


def _sandwich_se(nu, phi, prev, cur, w, n_batches):
    lam = nu + phi * prev
    q = cur / (lam * lam)
    A = np.array([[q.sum(), np.dot(q, prev)], [np.dot(q, prev), np.dot(q, prev * prev)]])
    scores = np.stack([w, w * prev], axis=1)
    n = scores.shape[0]
    nb = min(n_batches, n // 10)
    if nb >= 10:
        size = n // nb
        bs = scores[: nb * size].reshape(nb, size, 2).sum(axis=1)
        B = (bs - bs.mean(axis=0)).T @ (bs - bs.mean(axis=0)) * (n / (nb * size)) * nb / (nb - 1)
    else:
        B = scores.T @ scores
    try:
        Ainv = np.linalg.inv(A)
    except np.linalg.LinAlgError:
        return math.nan, math.nan
    V = Ainv @ B @ Ainv
    return float(math.sqrt(max(V[0, 0], 0.0))), float(math.sqrt(max(V[1, 1], 0.0)))


# -- curve tables -----------------------------------------------------------------------

def consequence_curve(nu: float, phi: float, grid: int = 99, divide_by_pi: bool = False) -> pd.DataFrame:
    """Naive limits, derivatives and bias conditions on ``pi = k / (grid + 1)``, ``k = 1..grid``.

    With ``divide_by_pi`` the naive fit is applied to ``y / pi``: ``phi`` is
    unchanged and ``nu_lim`` (and its derivative) are rescaled accordingly.
    """
    pis = np.arange(1, grid + 1) / (grid + 1)
    rows = []
    for pi in pis:
        params = ThinnedArParams(nu, phi, float(pi))
        lim = naive_limits(params)
        dphi, dnu = derivative_formulas(params)
        nu_lim = lim.nu_lim
        if divide_by_pi:
            dnu = dnu / pi - nu_lim / pi ** 2
            nu_lim = nu_lim / pi
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", InternalConsistencyWarning)
            pb = prop_bounds(float(pi), phi)
        rows.append({
            "pi": float(pi), "phi_lim": lim.phi_lim, "nu_lim": nu_lim, "phi_prime": dphi, "nu_prime": dnu,
            "prop1_threshold": pb.prop1_threshold, "overestimates_nu": pb.overestimates_nu,
            "nu_prime_negative": pb.nu_prime_negative,
            "corrected_threshold": pb.corrected_threshold,
            "overestimates_nu_exact": pb.overestimates_nu_exact,
            "nu_prime_negative_exact": pb.nu_prime_negative_exact,
        })
    return pd.DataFrame(rows)
