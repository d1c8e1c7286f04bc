"""Reported-scale sampler coordinates for the centred approximate model.

With a constant reporting probability the centred posterior has a long ridge:
scaling ``pi`` down while scaling every ``Z_t``, ``nu`` and ``lambda_1`` up
leaves the fit to the reported counts nearly unchanged. A diagonal mass
matrix cannot follow it. The coordinates here sample ``V_t = pi Z_t`` and
shift ``log nu`` and ``log lambda_1`` by ``log pi``, which straightens the
ridge. The target density is the same posterior (the change of variables adds
``-n log pi`` with ``n`` the number of latent states).
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .approx import ApproxModel

_MIN_LOG_PI = -700.0  # below this the latent scale factor 1/pi overflows


def _log_expit(x: float) -> float:
    return -float(np.logaddexp(0.0, -x))


class ReportedScaleTarget:
    """Wraps an :class:`ApproxModel` so samplers work in reported-scale coordinates.

    ``__call__``, ``initial_point``, ``report`` and ``generated`` mirror the
    model's interface; :meth:`to_base` maps a point back to the model's own
    coordinates.
    """

    def __init__(self, model: ApproxModel):
        if not self.applies(model):
            raise ValueError("reported-scale coordinates need a centred model with a single pi intercept")
        self.model = model
        lay = model.layout
        self.dim = model.dim
        self.i_pi = lay.by_name["pi.intercept"].slice.start
        self.latent = lay.by_name["Z"].slice
        shifted = []
        nu = lay.by_name.get("nu.intercept")
        if nu is not None and nu.transform in ("identity", "exp"):  # coordinates equal to log nu
            shifted.append(nu.slice)
        if "lambda1" in lay.by_name:
            shifted.append(lay.by_name["lambda1"].slice)
        self.shifted = np.concatenate([np.arange(s.start, s.stop) for s in shifted]).astype(int) \
            if shifted else np.zeros(0, dtype=int)
        self.n_latent = self.latent.stop - self.latent.start

    @staticmethod
    def applies(model: ApproxModel) -> bool:
        if not model.centred:
            return False
        terms = model.spec.links["pi"]
        return len(terms) == 1 and terms[0].kind == "intercept" and not terms[0].per_stratum

    def to_base(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        log_pi = _log_expit(v[self.i_pi])
        u = v.copy()
        u[self.latent] = v[self.latent] * np.exp(-log_pi)
        u[self.shifted] = v[self.shifted] - log_pi
        return u

    def from_base(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        log_pi = _log_expit(u[self.i_pi])
        v = u.copy()
        v[self.latent] = u[self.latent] * np.exp(log_pi)
        v[self.shifted] = u[self.shifted] + log_pi
        return v

    def __call__(self, v: np.ndarray, want_gradient: bool = True):
        v = np.asarray(v, dtype=float)
        pi = special.expit(v[self.i_pi])
        log_pi = _log_expit(v[self.i_pi])
        if log_pi < _MIN_LOG_PI:
            return -np.inf, (np.zeros_like(v) if want_gradient else None)
        u = self.to_base(v)
        lp, g = self.model.logp_grad(u, want_gradient)
        lp = lp - self.n_latent * log_pi
        if not want_gradient:
            return lp, None
        if not np.isfinite(lp):
            return lp, np.zeros_like(v)
        out = g.copy()
        out[self.latent] = g[self.latent] / pi
        dlogpi = 1.0 - pi
        out[self.i_pi] = (g[self.i_pi] - dlogpi * float(g[self.latent] @ u[self.latent])
                          - dlogpi * float(g[self.shifted].sum()) - self.n_latent * dlogpi)
        return lp, out

    logp_grad = __call__

    def logp(self, v: np.ndarray) -> float:
        return self(v, want_gradient=False)[0]

    def initial_point(self, rng: np.random.Generator) -> np.ndarray:
        return self.from_base(self.model.initial_point(rng))

    def report(self, v: np.ndarray) -> np.ndarray:
        return self.model.report(self.to_base(v))

    def generated(self, v: np.ndarray) -> dict[str, np.ndarray]:
        return self.model.generated(self.to_base(v))
