"""Exact-model sampler: HMC (or RWM) on (nu, phi, pi) alternating with latent-count sweeps.

The continuous block works on ``q = (log nu, logit phi, logit pi)`` given the
current true counts ``x``; each iteration then sweeps every ``x_t`` with the
integer random-walk update. Everything after setup runs compiled.
"""

from __future__ import annotations

import math

import numba
import numpy as np

from ..data import ObservedSeries
from ..errors import InitializationError, ValidationError
from ..models.exact import ExactPriors
from ..models.kernels import prior_logpdf
from ..rng import stream
from .config import ChainConfig
from .latent import latent_sweep, proposal_width
from .samplers import warmup_windows
from .store import DrawStore


@numba.njit(cache=True)
def exact_logp_grad(q, x, y, pri):
    """Log-density of q given counts, up to terms free of q, with its gradient."""
    T = x.shape[0]
    nu = math.exp(q[0])
    phi = 1.0 / (1.0 + math.exp(-q[1]))
    pi = 1.0 / (1.0 + math.exp(-q[2]))
    dphi = phi * (1.0 - phi)
    dpi = pi * (1.0 - pi)
    g = np.zeros(3)
    lpn, gn = prior_logpdf(int(pri[0, 0]), pri[0, 1], pri[0, 2], pri[0, 3], nu)
    lpp, gp = prior_logpdf(int(pri[1, 0]), pri[1, 1], pri[1, 2], pri[1, 3], phi)
    lpi, gi = prior_logpdf(int(pri[2, 0]), pri[2, 1], pri[2, 2], pri[2, 3], pi)
    lp = q[0] + math.log(dphi) + math.log(dpi) + lpn + lpp + lpi
    if not math.isfinite(lp):
        return -np.inf, g
    g_nu = 0.0
    g_phi = 0.0
    sx = 0.0
    sy = 0.0
    for t in range(T):
        sx += x[t]
        sy += y[t]
        if t >= 1:
            lam = nu + phi * x[t - 1]
            lp += x[t] * math.log(lam) - lam
            w = x[t] / lam - 1.0
            g_nu += w
            g_phi += w * x[t - 1]
    lp += sy * math.log(pi) + (sx - sy) * math.log1p(-pi)
    g_pi = sy / pi - (sx - sy) / (1.0 - pi)
    g[0] = g_nu * nu + 1.0 + gn * nu
    g[1] = g_phi * dphi + 1.0 - 2.0 * phi + gp * dphi
    g[2] = g_pi * dpi + 1.0 - 2.0 * pi + gi * dpi
    return lp, g


@numba.njit(cache=True)
def _leapfrog(q, p, g, eps, inv_m, n_steps, x, y, pri):
    q = q.copy()
    p = p + 0.5 * eps * g
    lp = -np.inf
    for i in range(n_steps):
        q = q + eps * inv_m * p
        lp, g = exact_logp_grad(q, x, y, pri)
        if not math.isfinite(lp):
            return q, p, -np.inf, g, False
        if i < n_steps - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return q, p, lp, g, True


@numba.njit(cache=True)
def _find_step(gen, q, lp, g, inv_m, eps, x, y, pri):
    p = np.empty(3)
    for k in range(3):
        p[k] = gen.standard_normal() / math.sqrt(inv_m[k])
    h0 = lp - 0.5 * np.sum(inv_m * p * p)
    _, p1, lp1, _, ok = _leapfrog(q, p, g, eps, inv_m, 1, x, y, pri)
    a = lp1 - 0.5 * np.sum(inv_m * p1 * p1) - h0 if ok else -np.inf
    direction = 1.0 if a > math.log(0.5) else -1.0
    for _ in range(100):
        if direction > 0 and not a > math.log(0.5):
            break
        if direction < 0 and not a < math.log(0.5):
            break
        eps = eps * 2.0 ** direction
        if eps < 1e-12 or eps > 1e6:
            break
        _, p1, lp1, _, ok = _leapfrog(q, p, g, eps, inv_m, 1, x, y, pri)
        a = lp1 - 0.5 * np.sum(inv_m * p1 * p1) - h0 if ok else -np.inf
    return eps


@numba.njit(cache=True)
def exact_chain(gen, y, x0, q0, pri, n_iter, n_warmup, thin, n_leap, jitter, delta, use_hmc,
                win_start, win_end, adapt_points, width0, record_latent):
    """Run one chain; returns ``(draws (n_keep, 3), latent (n_keep, T), stats (6,))``.

    ``stats`` = (accept rate, latent accept rate, step size, width, divergences, rwm mean scale).
    """
    T = y.shape[0]
    n_keep = (n_iter - n_warmup) // thin
    draws = np.empty((n_keep, 3))
    lat = np.empty((n_keep if record_latent else 0, T), dtype=np.int64)
    x = x0.copy()
    q = q0.copy()
    inv_m = np.ones(3)
    width = width0
    lp, g = exact_logp_grad(q, x, y, pri)
    eps = _find_step(gen, q, lp, g, inv_m, 1.0, x, y, pri) if use_hmc else 0.0
    # dual averaging state
    mu = math.log(10.0 * eps) if use_hmc else 0.0
    hbar = 0.0
    lebar = 0.0
    k_da = 0
    log_scale = np.full(3, math.log(0.3))
    # window accumulators
    wsum = np.zeros(3)
    wsq = np.zeros(3)
    wn = 0
    w_nu = 0.0
    w_phi = 0.0
    w_n = 0
    n_win = win_start.shape[0]
    acc_sum = 0.0
    lat_acc = 0
    n_post = 0
    divergent = 0
    kept = 0
    adapt_idx = 0
    for it in range(n_iter):
        lp, g = exact_logp_grad(q, x, y, pri)
        if use_hmc:
            n_steps = int(round(n_leap * (1.0 - jitter + 2.0 * jitter * gen.random())))
            if n_steps < 1:
                n_steps = 1
            p0 = np.empty(3)
            for k in range(3):
                p0[k] = gen.standard_normal() / math.sqrt(inv_m[k])
            h0 = -lp + 0.5 * np.sum(inv_m * p0 * p0)
            q1, p1, lp1, g1, ok = _leapfrog(q, p0, g, eps, inv_m, n_steps, x, y, pri)
            acc = 0.0
            if ok:
                dh = h0 - (-lp1 + 0.5 * np.sum(inv_m * p1 * p1))
                if math.isfinite(dh):
                    acc = 1.0 if dh > 0 else math.exp(dh)
                    if dh < -1000.0 and it >= n_warmup:
                        divergent += 1
                elif it >= n_warmup:
                    divergent += 1
            elif it >= n_warmup:
                divergent += 1
            if gen.random() < acc:
                q = q1
        else:
            acc = 0.0
            for k in range(3):
                prop = q.copy()
                prop[k] += math.exp(log_scale[k]) * gen.standard_normal()
                lp1, _ = exact_logp_grad(prop, x, y, pri)
                a = 0.0
                if math.isfinite(lp1):
                    a = 1.0 if lp1 >= lp else math.exp(lp1 - lp)
                if gen.random() < a:
                    q = prop
                    lp = lp1
                if it < n_warmup:
                    log_scale[k] += (it + 1.0) ** -0.6 * (a - delta)
                acc += a / 3.0
        nu = math.exp(q[0])
        phi = 1.0 / (1.0 + math.exp(-q[1]))
        pi = 1.0 / (1.0 + math.exp(-q[2]))
        nacc = latent_sweep(gen, x, y, nu, phi, pi, width, True, 1.0)
        if it < n_warmup:
            w_nu += nu
            w_phi += phi
            w_n += 1
            if use_hmc:
                k_da += 1
                w = 1.0 / (k_da + 10.0)
                hbar = (1.0 - w) * hbar + w * (delta - acc)
                leps = mu - math.sqrt(k_da) / 0.05 * hbar
                eta = k_da ** -0.75
                lebar = eta * leps + (1.0 - eta) * lebar
                eps = math.exp(leps)
            for wi in range(n_win):
                if win_start[wi] <= it < win_end[wi]:
                    wsum += q
                    wsq += q * q
                    wn += 1
                if it + 1 == win_end[wi] and use_hmc:
                    var = (wsq - wsum * wsum / wn) / (wn - 1) if wn > 1 else np.ones(3)
                    inv_m = (wn / (wn + 5.0)) * var + 1e-3 * (5.0 / (wn + 5.0))
                    wsum[:] = 0.0
                    wsq[:] = 0.0
                    wn = 0
                    lp, g = exact_logp_grad(q, x, y, pri)
                    eps = _find_step(gen, q, lp, g, inv_m, eps, x, y, pri)
                    mu = math.log(10.0 * eps)
                    hbar = 0.0
                    lebar = 0.0
                    k_da = 0
            if adapt_idx < adapt_points.shape[0] and it + 1 == adapt_points[adapt_idx]:
                m_nu = w_nu / w_n
                m_phi = w_phi / w_n
                if m_phi < 1.0:
                    width = max(1, int(round(math.sqrt(3.0 * m_nu / (1.0 - m_phi) / (1.0 - m_phi * m_phi)))))
                w_nu = 0.0
                w_phi = 0.0
                w_n = 0
                adapt_idx += 1
            if it + 1 == n_warmup and use_hmc:
                eps = math.exp(lebar)
        else:
            acc_sum += acc
            lat_acc += nacc
            n_post += 1
            if (it - n_warmup) % thin == thin - 1:
                draws[kept, 0] = nu
                draws[kept, 1] = phi
                draws[kept, 2] = pi
                if record_latent:
                    lat[kept] = x
                kept += 1
    stats = np.empty(6)
    stats[0] = acc_sum / max(n_post, 1)
    stats[1] = lat_acc / max(n_post * (T - 1), 1)
    stats[2] = eps
    stats[3] = width
    stats[4] = divergent
    stats[5] = math.exp(np.mean(log_scale))
    return draws, lat, stats


def run_exact_mcmc(priors: ExactPriors, y, config: ChainConfig, x1: int, record_latent: bool = True,
                   stream_keys: tuple[int, ...] = ()) -> DrawStore:
    """Sample the exact posterior of the single-lag model with ``x_1`` known.

    Initial values: prior medians jittered by uniform(-0.5, 0.5) on the
    unconstrained scale; ``x_t = max(y_t, round(y_t / pi_0))`` with ``pi_0`` the
    prior median of ``pi``. The latent proposal width starts from the prior
    medians and is re-estimated at each warmup window from the window means of
    ``(nu, phi)``, then frozen.
    """
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1 or y.size < 2:
        raise ValidationError("exact sampler needs a single series of length >= 2")
    if x1 < y[0]:
        raise ValidationError("known x1 must be >= y1")
    pri = np.array([priors.nu.packed(), priors.phi.packed(), priors.pi.packed()], dtype=float)
    med = np.array([priors.nu.median(), priors.phi.median(), priors.pi.median()])
    q_med = np.array([math.log(med[0]), math.log(med[1] / (1 - med[1])), math.log(med[2] / (1 - med[2]))])
    x0 = np.maximum(y, np.round(y / med[2]).astype(np.int64))
    x0[0] = x1
    init, windows, _ = warmup_windows(config.n_warmup)
    win_start = np.array([w[0] for w in windows], dtype=np.int64)
    win_end = np.array([w[1] for w in windows], dtype=np.int64)
    adapt_points = np.array(sorted({init, *win_end.tolist(), config.n_warmup} - {0}), dtype=np.int64)
    width0 = proposal_width(med[0], min(med[1], 0.99))
    results = []
    for c in range(config.n_chains):
        gen = stream(config.seed, *stream_keys, c)
        for attempt in range(config.max_init_tries):
            q0 = q_med + gen.uniform(-0.5, 0.5, 3)
            lp, _ = exact_logp_grad(q0, x0, y, pri)
            if np.isfinite(lp):
                break
        else:
            raise InitializationError("no finite starting point for the exact sampler")
        draws, lat, st = exact_chain(gen, y, x0, q0, pri, config.n_iter, config.n_warmup, config.thin,
                                     config.n_leapfrog, config.leapfrog_jitter, config.accept_target,
                                     config.sampler == "hmc", win_start, win_end, adapt_points, width0,
                                     record_latent)
        stats = {"sampler": config.sampler, "accept_rate": float(st[0]), "latent_accept_rate": float(st[1]),
                 "step_size": float(st[2]), "width": int(st[3]), "n_divergent": int(st[4])}
        results.append((draws, lat, stats))
    extras = {"x": np.stack([r[1] for r in results])[:, :, None, :]} if record_latent else {}
    return DrawStore(np.stack([r[0] for r in results]), ["nu", "phi", "pi"], [r[2] for r in results], extras)


def run_exact_for_series(spec, data: ObservedSeries, config: ChainConfig, **kw) -> DrawStore:
    """Spec-driven entry point: priors from the config, ``x_1`` from the config or the data."""
    priors = ExactPriors.from_spec(spec)
    if spec.x1_mode != "known":
        raise ValidationError("the exact engine treats x1 as known")
    if data.n_strata != 1:
        raise ValidationError("the exact engine fits one series")
    if spec.x1_value is not None:
        x1 = int(round(spec.x1_value[0]))
    elif data.x is not None:
        x1 = int(data.x[0, 0])
    else:
        raise ValidationError("x1 is declared known but neither the config nor the data supplies it")
    return run_exact_mcmc(priors, data.y[0], config, x1, **kw)
