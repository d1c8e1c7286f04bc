"""Design matrices for the link blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BSpline

from ..errors import ValidationError
from .spec import BLOCKS, ModelSpec, Term


@dataclass
class TermDesign:
    term: Term
    X: np.ndarray | None  # (S, T, k); None for random_intercept
    colnames: list[str]

    @property
    def k(self) -> int:
        return 0 if self.X is None else self.X.shape[2]


def fourier_columns(t: np.ndarray, period: float) -> np.ndarray:
    ang = 2.0 * np.pi * t / period
    return np.column_stack([np.sin(ang), np.cos(ang)])


def dow_columns(t: np.ndarray, offset: int = 0) -> np.ndarray:
    day = (t - 1 + offset) % 7
    out = np.zeros((t.size, 7))
    out[np.arange(t.size), day.astype(int)] = 1.0
    return out


def bspline_columns(t: np.ndarray, df: int, t_len: int) -> np.ndarray:
    """``df`` clamped cubic B-splines with equally spaced interior knots on [1, t_len]."""
    degree = 3
    n_interior = df - degree - 1
    lo, hi = 1.0, float(max(t_len, 2))
    interior = np.linspace(lo, hi, n_interior + 2)[1:-1]
    knots = np.concatenate([[lo] * (degree + 1), interior, [hi] * (degree + 1)])
    x = np.clip(np.asarray(t, dtype=float), lo, hi)
    return BSpline.design_matrix(x, knots, degree).toarray()


def term_design(term: Term, n_strata: int, t_len: int, covariates: dict[str, np.ndarray]) -> TermDesign:
    t = np.arange(1, t_len + 1, dtype=float)
    if term.kind == "intercept":
        cols, names = np.ones((t_len, 1)), ["intercept"]
    elif term.kind == "fourier":
        cols = fourier_columns(t, term.period)
        names = [f"sin{term.period:g}", f"cos{term.period:g}"]
    elif term.kind == "dow":
        cols = dow_columns(t, term.offset)
        names = [f"dow{d}" for d in range(7)]
    elif term.kind == "bspline":
        cols = bspline_columns(t, term.df, t_len)
        names = [f"B{j + 1}" for j in range(term.df)]
    elif term.kind == "covariate":
        if term.name not in covariates:
            raise ValidationError(f"unknown covariate {term.name!r}; available: {sorted(covariates)}")
        cov = np.asarray(covariates[term.name], dtype=float)
        if cov.shape != (n_strata, t_len):
            raise ValidationError(f"covariate {term.name!r} shape {cov.shape} != {(n_strata, t_len)}")
        return TermDesign(term, cov[:, :, None].copy(), [term.name])
    else:
        return TermDesign(term, None, [])
    X = np.broadcast_to(cols[None, :, :], (n_strata, t_len, cols.shape[1])).copy()
    return TermDesign(term, X, names)


def build_design(spec: ModelSpec, n_strata: int, t_len: int,
                 covariates: dict[str, np.ndarray] | None = None) -> dict[str, list[TermDesign]]:
    """Design tensors per link block, keyed by ``'nu'``, ``'phi'``, ``'pi'``."""
    covariates = covariates or {}
    return {b: [term_design(term, n_strata, t_len, covariates) for term in spec.links[b]] for b in BLOCKS}
