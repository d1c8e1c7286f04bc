"""Forward simulation of binomially thinned Poisson autoregressions."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numba
import numpy as np

from .errors import DomainError, ValidationError
from .rng import stream as rng_stream


@dataclass(frozen=True)
class ThinnedArParams:
    """Canonical model: ``X_t | X_{t-1} ~ Pois(nu + phi X_{t-1})``, ``Y_t | X_t ~ Bin(X_t, pi)``."""

    nu: float
    phi: float
    pi: float

    def __post_init__(self):
        if not (np.isfinite(self.nu) and self.nu > 0):
            raise DomainError(f"nu must be positive, got {self.nu}")
        if not (np.isfinite(self.phi) and self.phi >= 0):
            raise DomainError(f"phi must be nonnegative, got {self.phi}")
        if not (0 < self.pi <= 1):
            raise DomainError(f"pi must lie in (0, 1], got {self.pi}")

    @property
    def stationary(self) -> bool:
        return self.phi < 1


@dataclass
class SimOutput:
    x: np.ndarray
    y: np.ndarray
    seed: int
    stream: int | tuple[int, ...] = 0


@numba.njit(cache=True)
def _ar_path(gen, nu, phi, theta, hist0, burn_in, n_out):
    """Poisson AR path with time-varying ``nu``/``phi`` (length ``n_out``) and lag weights ``theta``.

    Burn-in steps use ``nu[0]``/``phi[0]``. ``hist0`` seeds every lag.
    """
    J = theta.shape[0]
    hist = np.full(J, hist0, dtype=np.float64)  # hist[0] is the most recent count
    out = np.empty(n_out, dtype=np.int64)
    for step in range(burn_in + n_out):
        t = step - burn_in
        k = 0 if t < 0 else t
        s = 0.0
        for j in range(J):
            s += theta[j] * hist[j]
        x = gen.poisson(nu[k] + phi[k] * s)
        for j in range(J - 1, 0, -1):
            hist[j] = hist[j - 1]
        hist[0] = x
        if t >= 0:
            out[t] = x
    return out


def _start_value(nu: float, phi: float) -> float:
    return float(np.round(nu / (1.0 - phi))) if phi < 1 else float(np.round(nu))


def simulate_thinned_pois_ar(params: ThinnedArParams, t_len: int, burn_in: int = 100,
                             seed: int = 0, stream: int | tuple[int, ...] = 0) -> SimOutput:
    """Simulate ``t_len`` steps after ``burn_in`` discarded steps.

    The chain starts at the rounded stationary mean (or ``round(nu)`` when
    ``phi >= 1``). Output is a deterministic function of ``(seed, stream)``.
    """
    if t_len < 1:
        raise DomainError("t_len must be positive")
    if burn_in < 0:
        raise DomainError("burn_in must be nonnegative")
    if params.phi >= 1:
        warnings.warn(f"phi={params.phi} >= 1: the process is not stationary", RuntimeWarning, stacklevel=2)
    keys = stream if isinstance(stream, tuple) else (stream,)
    gen = rng_stream(seed, *keys)
    x = _ar_path(gen, np.full(t_len, float(params.nu)), np.full(t_len, float(params.phi)), np.ones(1),
                 _start_value(params.nu, params.phi), burn_in, t_len)
    y = x.copy() if params.pi == 1 else gen.binomial(x, params.pi)
    return SimOutput(x, y.astype(np.int64), seed, stream)


def simulate_general(spec, t_len: int, strata: int | list[str] = 1, seed: int = 0,
                     truth: dict | None = None, covariates: dict[str, np.ndarray] | None = None,
                     burn_in: int = 100, replicate: int | None = None) -> list[SimOutput]:
    """Simulate every stratum of a general link model.

    ``truth`` maps parameter-entry names (``"nu.intercept"``,
    ``"phi.fourier52"``, ``"theta"``, ``"<block>.random_intercept.sigma"``, ...)
    to values on their reporting scale, so an intercept with a natural-scale
    prior takes the rate itself and a link-scale intercept its log or logit;
    it defaults to ``spec.truth``. Models without a ``nu`` block start from
    ``truth["lambda1"]`` (else the median of the ``x1`` prior). Stratum ``i`` draws its counts from stream
    ``i`` and any random-intercept noise from stream ``(i, 1)``, so strata are
    independent and a one-stratum, one-lag model with constant links replays
    :func:`simulate_thinned_pois_ar` exactly. A ``replicate`` index is
    prepended to every stream key.
    """
    from .models.design import build_design
    from .models.links import linear_predictors, natural_rates
    from .models.spec import check_simplex
    from .models.transforms import ParamLayout

    if t_len < 1:
        raise DomainError("t_len must be positive")
    labels = [str(i + 1) for i in range(strata)] if isinstance(strata, int) else list(strata)
    S = len(labels)
    truth = dict(truth if truth is not None else (spec.truth or {}))
    prefix = () if replicate is None else (int(replicate),)
    design = build_design(spec, S, t_len, covariates)
    layout = ParamLayout.from_spec(spec, labels, t_len, design)

    if spec.theta_mode == "fixed":
        theta = np.asarray(spec.theta_weights, dtype=float)
    else:
        theta = np.asarray(truth.get("theta", np.full(spec.serial_len, 1.0 / spec.serial_len)), dtype=float)
    theta = check_simplex(theta)
    if theta.size != spec.serial_len:
        raise ValidationError("theta length must equal serial_len")

    natural: dict[str, np.ndarray] = {}
    for e in layout.entries:
        if e.kind in ("coef", "scale", "kappa"):
            if e.name not in truth:
                raise ValidationError(f"simulation truth is missing {e.name!r}")
            v = np.asarray(truth[e.name], dtype=float)
            natural[e.name] = np.broadcast_to(v, e.shape).copy() if v.size in (1, int(np.prod(e.shape))) \
                else v
            if natural[e.name].size != int(np.prod(e.shape)):
                raise ValidationError(f"truth for {e.name!r} needs shape {e.shape}")
    for e in layout.entries:
        if e.kind == "eps":
            natural[e.name] = np.stack([rng_stream(seed, *prefix, i, 1).standard_normal(t_len) for i in range(S)])
    u = layout.unconstrain(natural)
    values = layout.transform(u).values
    eta = linear_predictors(layout, design, values, (S, t_len))
    has_nu = bool(spec.links["nu"])
    nu, phi, pi = natural_rates(eta, has_nu)
    if has_nu:
        if np.any(phi[:, 0] >= 1):
            warnings.warn("phi >= 1 at t=1: burn-in starts from round(nu)", RuntimeWarning, stacklevel=2)
        starts = [_start_value(nu[i, 0], phi[i, 0]) for i in range(S)]
    else:
        # without an exogenous term the level is set by the initial mean
        lam1 = truth.get("lambda1", spec.x1_prior.median())
        starts = np.round(np.broadcast_to(np.asarray(lam1, dtype=float), (S,))).tolist()

    out = []
    for i in range(S):
        gen = rng_stream(seed, *prefix, i)
        x = _ar_path(gen, nu[i], phi[i], theta, float(starts[i]), burn_in, t_len)
        if np.all(pi[i] == 1):
            y = x.copy()
        else:
            y = gen.binomial(x, pi[i])
        out.append(SimOutput(x, np.asarray(y, dtype=np.int64), seed, (*prefix, i)))
    return out


def simulate_survey(x, population, days, tests, window: int = 14, seed: int = 0,
                    replicate: int | None = None) -> list[tuple[int, int, int, int]]:
    """Binomial survey rows ``(stratum, day, tests, positives)`` against rolling incidence.

    ``x`` is (S, T); the success probability on day ``d`` is the sum of the
    last ``window`` counts up to ``d`` (partial at the start) over the
    stratum population, clipped to [0, 1]. Stratum ``i`` draws from stream
    ``(i, 2)``, preceded by ``replicate`` when given.
    """
    prefix = () if replicate is None else (int(replicate),)
    x = np.atleast_2d(np.asarray(x, dtype=float))
    pop = np.broadcast_to(np.asarray(population, dtype=float), (x.shape[0],))
    c = np.concatenate([np.zeros((x.shape[0], 1)), np.cumsum(x, axis=1)], axis=1)
    rows = []
    for i in range(x.shape[0]):
        gen = rng_stream(seed, *prefix, i, 2)
        for d in days:
            if not 1 <= d <= x.shape[1]:
                raise ValidationError(f"survey day {d} outside 1..{x.shape[1]}")
            p = min(max((c[i, d] - c[i, max(d - window, 0)]) / pop[i], 0.0), 1.0)
            rows.append((i, int(d), int(tests), int(gen.binomial(int(tests), p))))
    return rows
