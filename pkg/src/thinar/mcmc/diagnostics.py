"""Convergence diagnostics: split R-hat, effective sample size and Monte-Carlo errors."""

from __future__ import annotations

import numpy as np
import pandas as pd

from ..errors import ValidationError

QUANTILES = (0.025, 0.05, 0.5, 0.95, 0.975)


def _as_chains(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2:
        raise ValidationError("expected draws shaped (chains, draws)")
    return x


def split_rhat(x) -> float:
    """Split-chain potential scale reduction (no rank normalisation).

    Each chain is cut into two halves (a middle draw is dropped for odd
    lengths). Returns ``inf`` when the within-chain variance is zero.
    """
    x = _as_chains(x)
    m, n = x.shape
    if m < 2 or n < 4:
        raise ValidationError("split R-hat needs >= 2 chains with >= 4 draws each")
    half = n // 2
    parts = np.concatenate([x[:, :half], x[:, n - half:]], axis=0)
    W = parts.var(axis=1, ddof=1).mean()
    if not W > 0:
        return np.inf
    B = half * parts.mean(axis=1).var(ddof=1)
    var_plus = (half - 1) / half * W + B / half
    return float(np.sqrt(var_plus / W))


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    d = x - x.mean(axis=-1, keepdims=True)
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(d, size, axis=-1)
    return np.fft.irfft(f * np.conj(f), size, axis=-1)[..., :n] / n


def ess(x) -> float:
    """Effective sample size by Geyer's initial monotone positive sequence.

    Autocorrelations are pooled across chains through the between/within
    variance combination. Returns ``nan`` for a constant column.
    """
    x = _as_chains(x)
    m, n = x.shape
    if n < 4:
        return float("nan")
    acov = _autocov(x)
    chain_var = acov[:, 0] * n / (n - 1)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1) / n
    if m > 1:
        var_plus += x.mean(axis=1).var(ddof=1)
    if not var_plus > 0:
        return float("nan")
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # Geyer: sum consecutive pairs while positive, then enforce monotone decrease
    pairs = []
    t = 0
    while t + 1 < n:
        p = rho[t] + rho[t + 1]
        if p <= 0:
            break
        pairs.append(p)
        t += 2
    pairs = np.minimum.accumulate(np.asarray(pairs)) if pairs else np.asarray([1.0])
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def mcse_mean(x) -> float:
    x = _as_chains(x)
    e = ess(x)
    if not np.isfinite(e):
        return 0.0
    return float(x.std(ddof=1) / np.sqrt(e))


def mcse_quantile(x, p: float) -> float:
    """Monte-Carlo standard error of the ``p`` quantile from the ESS of the indicator ``x <= q_p``."""
    x = _as_chains(x)
    flat = x.reshape(-1)
    q = np.quantile(flat, p)
    ind = (x <= q).astype(float)
    e = ess(ind)
    if not np.isfinite(e):
        return 0.0
    se_p = np.sqrt(p * (1 - p) / e)
    lo, hi = np.quantile(flat, [max(p - se_p, 0.0), min(p + se_p, 1.0)])
    return float((hi - lo) / 2)


def ess_and_summary(store, parameters: list[str] | None = None) -> pd.DataFrame:
    """Per-parameter mean, sd, median, quantiles (linear interpolation), ESS, split R-hat and MCSEs."""
    names = parameters or store.names
    rows = []
    for name in names:
        x = store.column(name)
        flat = x.reshape(-1)
        qs = np.quantile(flat, QUANTILES)
        row = {"parameter": name, "mean": flat.mean(), "sd": flat.std(ddof=1) if flat.size > 1 else 0.0,
               "median": float(np.median(flat))}
        row.update({f"q{100 * p:g}": v for p, v in zip(QUANTILES, qs)})
        row["ess"] = ess(x)
        row["rhat"] = split_rhat(x) if x.shape[0] >= 2 and x.shape[1] >= 4 else float("nan")
        row["mcse_mean"] = mcse_mean(x)
        row["mcse_median"] = mcse_quantile(x, 0.5)
        rows.append(row)
    return pd.DataFrame(rows)
