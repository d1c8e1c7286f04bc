"""Gradient HMC and componentwise random-walk Metropolis with warmup adaptation.

HMC uses a fixed (jittered) number of leapfrog steps, dual-averaged step size
and a diagonal inverse metric estimated over doubling warmup windows
(75-step initial buffer, 25-step first window, 50-step terminal buffer,
shrunk proportionally for short warmups). RWM adapts one log-scale per
coordinate by Robbins-Monro towards the target acceptance rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import InitializationError
from ..rng import stream
from .config import ChainConfig
from .store import DrawStore

Target = Callable[[np.ndarray, bool], tuple]


def warmup_windows(n_warmup: int) -> tuple[int, list[tuple[int, int]], int]:
    """``(init_buffer, [(start, end), ...], terminal_buffer)`` for metric adaptation.

    Windows are half-open iteration ranges. With fewer than 20 warmup
    iterations no metric is adapted.
    """
    if n_warmup < 20:
        return n_warmup, [], 0
    init, term, base = 75, 50, 25
    if init + term + base > n_warmup:
        init = int(0.15 * n_warmup)
        term = int(0.1 * n_warmup)
        base = n_warmup - init - term
    windows = []
    start, size = init, base
    end_slow = n_warmup - term
    while start < end_slow:
        end = start + size
        if end + 2 * size > end_slow:
            end = end_slow
        windows.append((start, end))
        start, size = end, 2 * size
    return init, windows, term


class DualAveraging:
    """Step-size adaptation of Hoffman & Gelman (2014, algorithm 5)."""

    def __init__(self, eps: float, delta: float, gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.delta, self.gamma, self.t0, self.kappa = delta, gamma, t0, kappa
        self.restart(eps)

    def restart(self, eps: float) -> None:
        self.mu = math.log(10.0 * eps)
        self.hbar = 0.0
        self.log_eps_bar = 0.0
        self.k = 0

    def update(self, accept_stat: float) -> float:
        self.k += 1
        k = self.k
        w = 1.0 / (k + self.t0)
        self.hbar = (1 - w) * self.hbar + w * (self.delta - accept_stat)
        log_eps = self.mu - math.sqrt(k) / self.gamma * self.hbar
        eta = k ** (-self.kappa)
        self.log_eps_bar = eta * log_eps + (1 - eta) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _leapfrog(target, q, p, g, eps, inv_m, n_steps):
    """Returns ``(q, p, logp, grad, ok)``; stops early on a non-finite density."""
    q = q.copy()
    p = p + 0.5 * eps * g
    lp = -np.inf
    for i in range(n_steps):
        q = q + eps * inv_m * p
        lp, g = target(q, True)
        if not np.isfinite(lp) or not np.all(np.isfinite(g)):
            return q, p, -np.inf, g, False
        if i < n_steps - 1:
            p = p + eps * g
    p = p + 0.5 * eps * g
    return q, p, lp, g, True


def find_reasonable_step(target, q, lp, g, inv_m, rng, eps: float = 1.0) -> float:
    """Double or halve ``eps`` until a single leapfrog step's acceptance crosses 1/2."""
    p = rng.standard_normal(q.size) / np.sqrt(inv_m)
    h0 = lp - 0.5 * np.sum(inv_m * p * p)

    def log_ratio(e):
        _, p1, lp1, _, ok = _leapfrog(target, q, p, g, e, inv_m, 1)
        if not ok:
            return -np.inf
        return lp1 - 0.5 * np.sum(inv_m * p1 * p1) - h0

    a = log_ratio(eps)
    direction = 1.0 if a > math.log(0.5) else -1.0
    for _ in range(100):
        if direction > 0 and not a > math.log(0.5):
            break
        if direction < 0 and not a < math.log(0.5):
            break
        eps = eps * 2.0 ** direction
        if eps < 1e-12 or eps > 1e6:
            break
        a = log_ratio(eps)
    return eps


@dataclass
class ChainResult:
    draws: np.ndarray
    extras: dict
    stats: dict


def _initial_point(target, init, dim, rng, tries):
    for attempt in range(tries):
        if callable(init):
            q = np.asarray(init(rng), dtype=float)
        elif init is not None:
            q = np.asarray(init, dtype=float).copy()
            if attempt:
                q = q + rng.uniform(-1.0, 1.0, q.size) * min(attempt, 2)
        else:
            q = rng.uniform(-2.0, 2.0, dim)
        lp, g = target(q, True)
        if np.isfinite(lp) and np.all(np.isfinite(g)):
            return q, lp, g
    raise InitializationError(f"no finite starting point after {tries} attempts")


def _hmc_chain(target, q, lp, g, cfg: ChainConfig, rng, record) -> ChainResult:
    dim = q.size
    inv_m = np.ones(dim)
    eps = find_reasonable_step(target, q, lp, g, inv_m, rng)
    da = DualAveraging(eps, cfg.accept_target)
    init, windows, _ = warmup_windows(cfg.n_warmup)
    window_ends = {end: start for start, end in windows}
    window_draws: list[np.ndarray] = []
    in_window = np.zeros(cfg.n_warmup + 1, dtype=bool)
    for s, e in windows:
        in_window[s:e] = True
    keep = []
    accept_sum, divergent, n_post = 0.0, 0, 0
    for it in range(cfg.n_iter):
        n_steps = max(1, int(round(cfg.n_leapfrog * rng.uniform(1 - cfg.leapfrog_jitter, 1 + cfg.leapfrog_jitter))))
        p0 = rng.standard_normal(dim) / np.sqrt(inv_m)
        h0 = -lp + 0.5 * np.sum(inv_m * p0 * p0)
        q1, p1, lp1, g1, ok = _leapfrog(target, q, p0, g, eps, inv_m, n_steps)
        if ok:
            h1 = -lp1 + 0.5 * np.sum(inv_m * p1 * p1)
            dh = h0 - h1
            acc = 1.0 if dh > 0 else math.exp(dh) if np.isfinite(dh) else 0.0
            if not np.isfinite(dh) or dh < -1000:
                divergent += it >= cfg.n_warmup
        else:
            acc = 0.0
            divergent += it >= cfg.n_warmup
        if rng.uniform() < acc:
            q, lp, g = q1, lp1, g1
        if it < cfg.n_warmup:
            eps = da.update(acc)
            if in_window[it]:
                window_draws.append(q.copy())
            if it + 1 in window_ends:
                W = np.asarray(window_draws)
                n = W.shape[0]
                var = W.var(axis=0, ddof=1) if n > 1 else np.ones(dim)
                inv_m = (n / (n + 5.0)) * var + 1e-3 * (5.0 / (n + 5.0))
                window_draws = []
                eps = find_reasonable_step(target, q, lp, g, inv_m, rng, eps)
                da.restart(eps)
            if it + 1 == cfg.n_warmup:
                eps = da.final
        else:
            accept_sum += acc
            n_post += 1
            if (it - cfg.n_warmup) % cfg.thin == cfg.thin - 1:
                keep.append(record(q))
    stats = {"sampler": "hmc", "accept_rate": accept_sum / max(n_post, 1), "step_size": eps,
             "n_divergent": int(divergent), "inv_metric": inv_m.tolist()}
    return _pack(keep, stats)


def _rwm_chain(target, q, lp, cfg: ChainConfig, rng, record) -> ChainResult:
    dim = q.size
    log_scale = np.full(dim, math.log(0.5))
    delta = cfg.accept_target
    keep = []
    accept_sum, n_post = 0.0, 0
    for it in range(cfg.n_iter):
        acc_it = 0.0
        for k in range(dim):
            prop = q.copy()
            prop[k] += math.exp(log_scale[k]) * rng.standard_normal()
            lp1, _ = target(prop, False)
            a = 1.0 if lp1 >= lp else (math.exp(lp1 - lp) if np.isfinite(lp1) else 0.0)
            if rng.uniform() < a:
                q, lp = prop, lp1
            if it < cfg.n_warmup:
                log_scale[k] += (it + 1) ** -0.6 * (a - delta)
            acc_it += a
        if it >= cfg.n_warmup:
            accept_sum += acc_it / dim
            n_post += 1
            if (it - cfg.n_warmup) % cfg.thin == cfg.thin - 1:
                keep.append(record(q))
    stats = {"sampler": "rwm", "accept_rate": accept_sum / max(n_post, 1),
             "proposal_scale": np.exp(log_scale).tolist()}
    return _pack(keep, stats)


def _pack(keep, stats) -> ChainResult:
    draws = np.asarray([k[0] for k in keep])
    extras = {}
    if keep and keep[0][1]:
        extras = {name: np.asarray([k[1][name] for k in keep]) for name in keep[0][1]}
    return ChainResult(draws, extras, stats)


def run_chains(target: Target, config: ChainConfig, init=None, dim: int | None = None,
               report: Callable[[np.ndarray], np.ndarray] | None = None, names: list[str] | None = None,
               generated: Callable[[np.ndarray], dict] | None = None, stream_keys: tuple[int, ...] = ()) -> DrawStore:
    """Sample ``config.n_chains`` chains from ``target``.

    Parameters
    ----------
    target : callable
        ``target(u, want_gradient) -> (logp, grad)`` on the unconstrained space;
        ``-inf`` marks forbidden points.
    init : callable, array or None
        ``init(rng) -> u``, a fixed starting vector (jittered on retry) or
        ``None`` for uniform(-2, 2) starts (then ``dim`` is required).
    report : callable, optional
        Maps ``u`` to the constrained vector stored per draw (default identity).
    generated : callable, optional
        Maps ``u`` to a dict of arrays stored as latent fields.
    stream_keys : tuple
        Extra keys prepended to the chain index when deriving RNG streams.
    """
    if init is None and dim is None:
        raise ValueError("give either init or dim")
    report = report or (lambda u: np.asarray(u, dtype=float).copy())

    def record(q):
        return report(q), (generated(q) if generated else None)

    results = []
    for c in range(config.n_chains):
        rng = stream(config.seed, *stream_keys, c)
        q, lp, g = _initial_point(target, init, dim, rng, config.max_init_tries)
        if config.sampler == "hmc":
            results.append(_hmc_chain(target, q, lp, g, config, rng, record))
        else:
            results.append(_rwm_chain(target, q, lp, config, rng, record))
    draws = np.stack([r.draws for r in results])
    if names is None:
        names = [f"u[{k + 1}]" for k in range(draws.shape[2])]
    extras = {k: np.stack([r.extras[k] for r in results]) for k in results[0].extras}
    return DrawStore(draws, list(names), [r.stats for r in results], extras)
