"""Exact joint log-density of the canonical integer-valued model."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from ..errors import ValidationError
from .priors import Prior


@dataclass(frozen=True)
class ExactPriors:
    """Natural-scale priors on (nu, phi, pi) for the exact sampler."""

    nu: Prior = Prior("truncnormal_pos", (9.0, 4.0))
    phi: Prior = Prior("truncnormal_unit", (0.6, 0.3))
    pi: Prior = Prior("truncnormal_unit", (0.6, 0.3))

    @classmethod
    def from_spec(cls, spec) -> "ExactPriors":
        """Read the natural-scale intercept priors of a canonical :class:`ModelSpec`."""
        if not spec.is_canonical:
            raise ValidationError("the exact engine supports the single-lag intercept-only model only")
        pri = {}
        for block in ("nu", "phi", "pi"):
            term = spec.links[block][0]
            if term.prior_scale != "natural":
                raise ValidationError(f"the exact engine needs a natural-scale prior on {block}")
            pri[block] = term.prior
        return cls(**pri)

    def logpdf(self, nu: float, phi: float, pi: float) -> float:
        return float(self.nu.logpdf(nu) + self.phi.logpdf(phi) + self.pi.logpdf(pi))


def log_joint_exact(params, x, y, priors: ExactPriors | None = None, x1_mode: str = "known",
                    lambda1: float | None = None) -> float:
    """``sum_t Bin(y_t; x_t, pi) + sum_{t>=2} Pois(x_t; nu + phi x_{t-1})`` plus optional priors.

    ``params`` is a :class:`~thinar.simulate.ThinnedArParams` or an object with
    ``nu``, ``phi`` and ``pi`` attributes. With ``x1_mode="prior"`` the first
    count contributes ``Pois(x_1; lambda1)``. Returns ``-inf`` whenever some
    ``y_t > x_t``.
    """
    x = np.asarray(x)
    y = np.asarray(y)
    if x.shape != y.shape or x.ndim != 1:
        raise ValidationError("x and y must be 1-d sequences of equal length")
    if np.any(y > x) or np.any(x < 0):
        return -np.inf
    nu, phi, pi = float(params.nu), float(params.phi), float(params.pi)
    if pi == 1.0:
        lp = 0.0 if np.array_equal(x, y) else -np.inf
    else:
        lp = float(np.sum(stats.binom.logpmf(y, x, pi)))
    if x.size > 1:
        lp += float(np.sum(stats.poisson.logpmf(x[1:], nu + phi * x[:-1])))
    if x1_mode == "prior":
        if lambda1 is None:
            raise ValidationError("x1_mode='prior' needs lambda1")
        lp += float(stats.poisson.logpmf(x[0], lambda1))
    elif x1_mode != "known":
        raise ValidationError("x1_mode must be 'known' or 'prior'")
    if priors is not None:
        lp += priors.logpdf(nu, phi, pi)
    return lp
