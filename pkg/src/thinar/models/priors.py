"""Prior families with log-densities and derivatives.

Supported families (``params`` in brackets):

- ``normal`` [mean, sd]
- ``truncnormal_pos`` [mean, sd]  normal truncated to (0, inf)
- ``truncnormal_unit`` [mean, sd] normal truncated to (0, 1)
- ``exponential`` [rate]
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from ..errors import ValidationError

FAMILIES = {
    "normal": 2,
    "truncnormal_pos": 2,
    "truncnormal_unit": 2,
    "exponential": 1,
}
ALIASES = {"N": "normal", "N+": "truncnormal_pos", "N_+": "truncnormal_pos", "N01": "truncnormal_unit",
           "N_{0-1}": "truncnormal_unit", "exp": "exponential"}

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Prior:
    family: str
    params: tuple[float, ...]

    def __post_init__(self):
        family = ALIASES.get(self.family, self.family)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "params", tuple(float(v) for v in self.params))
        if family not in FAMILIES:
            raise ValidationError(f"unsupported prior family {self.family!r}")
        if len(self.params) != FAMILIES[family]:
            raise ValidationError(f"prior {family} takes {FAMILIES[family]} parameters, got {len(self.params)}")
        if family == "exponential":
            if self.params[0] <= 0:
                raise ValidationError("exponential rate must be positive")
        elif self.params[1] <= 0:
            raise ValidationError(f"{family} sd must be positive")

    @classmethod
    def from_dict(cls, d) -> "Prior":
        if isinstance(d, Prior):
            return d
        try:
            return cls(d["family"], tuple(d["params"]))
        except KeyError as exc:
            raise ValidationError(f"prior needs 'family' and 'params': {d!r}") from exc

    def to_dict(self) -> dict:
        return {"family": self.family, "params": list(self.params)}

    @property
    def support(self) -> str:
        """'real', 'positive' or 'unit'."""
        return {"normal": "real", "truncnormal_pos": "positive", "exponential": "positive",
                "truncnormal_unit": "unit"}[self.family]

    @property
    def code(self) -> int:
        """Integer family code used by compiled kernels."""
        return ("normal", "truncnormal_pos", "truncnormal_unit", "exponential").index(self.family)

    def packed(self) -> tuple[int, float, float, float]:
        """``(code, p0, p1, log normalising constant)`` for compiled kernels."""
        p1 = self.params[1] if len(self.params) > 1 else 0.0
        return self.code, self.params[0], p1, self._log_norm_const()

    def _log_norm_const(self) -> float:
        if self.family == "truncnormal_pos":
            m, s = self.params
            return math.log(special.ndtr(m / s))
        if self.family == "truncnormal_unit":
            m, s = self.params
            return math.log(special.ndtr((1.0 - m) / s) - special.ndtr(-m / s))
        return 0.0

    def logpdf(self, x):
        """Log-density, summed over ``x``; ``-inf`` outside the support."""
        x = np.asarray(x, dtype=float)
        if self.family == "exponential":
            (rate,) = self.params
            if np.any(x <= 0):
                return -np.inf
            return float(np.sum(math.log(rate) - rate * x))
        m, s = self.params
        if self.family == "truncnormal_pos" and np.any(x <= 0):
            return -np.inf
        if self.family == "truncnormal_unit" and np.any((x <= 0) | (x >= 1)):
            return -np.inf
        z = (x - m) / s
        return float(np.sum(-0.5 * z * z - math.log(s) - _LOG_SQRT_2PI) - x.size * self._log_norm_const())

    def dlogpdf(self, x):
        """Elementwise derivative of the log-density."""
        x = np.asarray(x, dtype=float)
        if self.family == "exponential":
            return np.full_like(x, -self.params[0])
        m, s = self.params
        return -(x - m) / (s * s)

    def median(self) -> float:
        """Prior median, used for sampler initialisation."""
        if self.family == "exponential":
            return math.log(2.0) / self.params[0]
        m, s = self.params
        if self.family == "normal":
            return m
        lo = special.ndtr(-m / s)
        hi = 1.0 if self.family == "truncnormal_pos" else special.ndtr((1.0 - m) / s)
        return float(m + s * special.ndtri(0.5 * (lo + hi)))
