"""Linear predictors for the three link blocks and their gradient pullback."""

from __future__ import annotations

import numpy as np
from scipy import special

from .design import TermDesign
from .spec import BLOCKS
from .transforms import ParamLayout


def linear_predictors(layout: ParamLayout, design: dict[str, list[TermDesign]],
                      values: dict[str, np.ndarray], shape: tuple[int, int]) -> dict[str, np.ndarray]:
    """Per-block linear predictor (S, T) on the link scale."""
    eta = {b: np.zeros(shape) for b in BLOCKS}
    for block in BLOCKS:
        for td in design[block]:
            base = f"{block}.{td.term.label}"
            if td.term.kind == "random_intercept":
                eta[block] += values[f"{base}.sigma"][0] * values[f"{base}.eps"]
            elif td.term.per_stratum:
                eta[block] += np.einsum("stk,sk->st", td.X, values[base])
            else:
                eta[block] += td.X @ values[base]
    return eta


def natural_rates(eta: dict[str, np.ndarray], has_nu: bool) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    nu = np.exp(eta["nu"]) if has_nu else np.zeros_like(eta["nu"])
    return nu, np.exp(eta["phi"]), special.expit(eta["pi"])


def pullback_eta(design: dict[str, list[TermDesign]], values: dict[str, np.ndarray],
                 g_eta: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    """Gradients w.r.t. link coefficients, scales and noise from d/d eta."""
    grads: dict[str, np.ndarray] = {}
    for block in BLOCKS:
        g = g_eta[block]
        for td in design[block]:
            base = f"{block}.{td.term.label}"
            if td.term.kind == "random_intercept":
                eps = values[f"{base}.eps"]
                sigma = values[f"{base}.sigma"][0]
                grads[f"{base}.sigma"] = np.array([np.sum(g * eps)])
                grads[f"{base}.eps"] = g * sigma
            elif td.term.per_stratum:
                grads[base] = np.einsum("stk,st->sk", td.X, g)
            else:
                grads[base] = np.einsum("stk,st->k", td.X, g)
    return grads
