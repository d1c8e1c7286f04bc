"""Normal-normal approximate posterior with analytic gradient.

Latent layer ``Z_it ~ N(lambda_it, sqrt(V_it))`` with ``V = lambda`` (Poisson)
or ``lambda + lambda^2 / psi`` (negative-binomial hook), written non-centred
as ``Z = lambda + sqrt(V) z*``. Observations ``Y_it ~ N(pi Z, sqrt(pi (1-pi) Z))``.
An optional survey block adds ``P ~ Bin(R, clamp(rolling_sum(Z) / pop))``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special

from ..data import AuxData, ObservedSeries
from ..errors import ValidationError
from .design import build_design
from .kernels import LOG_2PI, canonical_logp_grad, latent_backward, latent_forward, linear_logp_grad
from .links import linear_predictors, natural_rates, pullback_eta
from .spec import ModelSpec
from .transforms import ParamLayout, Transformed

SD_FLOOR = 1e-3
Z_FLOOR = 1e-6
AUX_EPS = 1e-10


@dataclass
class LatentState:
    """Deterministic quantities at one unconstrained point, all shaped (S, T)."""

    nu: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    lam: np.ndarray
    Z: np.ndarray
    zstar: np.ndarray
    theta: np.ndarray
    lag: np.ndarray
    kappa: float
    latent_logdens: float
    ok: bool


class ApproxModel:
    """Log-density of the approximate model for one data set.

    Parameters
    ----------
    spec : ModelSpec
    data : ObservedSeries
        Reported counts. When the first true count is treated as known and the
        spec carries no value, ``data.x[:, 0]`` is used.
    aux : AuxData, optional
        Survey rows; required when ``spec.aux`` is set.
    """

    def __init__(self, spec: ModelSpec, data: ObservedSeries, aux: AuxData | None = None):
        self.spec = spec
        self.data = data
        S, T = data.n_strata, data.t_len
        if spec.strata is not None and spec.strata != S:
            raise ValidationError(f"spec expects {spec.strata} strata, data has {S}")
        if spec.t_len is not None and spec.t_len != T:
            raise ValidationError(f"spec expects t_len={spec.t_len}, data has {T}")
        self.shape = (S, T)
        self.y = data.y.astype(float)
        self.design = build_design(spec, S, T, data.covariates)
        self.layout = ParamLayout.from_spec(spec, data.strata, T, design=self.design)
        self.known = spec.x1_mode == "known"
        self.centred = spec.parametrization == "centred"
        self.latent_name = "Z" if self.centred else "zstar"
        self.has_nu = bool(spec.links["nu"])
        if self.known:
            if spec.x1_value is not None:
                x1 = np.broadcast_to(np.asarray(spec.x1_value, dtype=float), (S,)).copy()
            elif data.x is not None:
                x1 = data.x[:, 0].astype(float)
            else:
                raise ValidationError("x1 is declared known but neither the config nor the data supplies it")
            if np.any(x1 <= Z_FLOOR):
                raise ValidationError("known x1 must be positive")
            self.x1 = x1
        else:
            self.x1 = np.zeros(S)
        self.theta_fixed = None if spec.theta_mode == "estimated" and spec.serial_len > 1 \
            else np.asarray(spec.theta_weights or (1.0,), dtype=float)
        self._setup_aux(aux)
        self._pri = self._fused_priors()
        self.fused = self._pri is not None
        self._linear = None if self.fused else self._linear_setup()

    def _fused_priors(self) -> np.ndarray | None:
        """Packed priors when the fused single-series kernel applies, else ``None``."""
        spec = self.spec
        if not (spec.is_canonical and self.known and self.shape[0] == 1):
            return None
        rows = []
        for block, support in (("nu", "positive"), ("phi", "unit"), ("pi", "unit")):
            term = spec.links[block][0]
            if term.prior_scale != "natural" or term.prior.support != support:
                return None
            rows.append(term.prior.packed())
        return np.array(rows, dtype=float)

    def _linear_setup(self) -> tuple | None:
        """Arguments for the fused linear-link kernel when it applies, else ``None``."""
        spec = self.spec
        if not (self.shape[0] == 1 and spec.serial_len == 1 and spec.count_family == "poisson"
                and spec.aux is None):
            return None
        cols, blocks, means, sds = [], [], [], []
        for b, block in enumerate(("nu", "phi", "pi")):
            for td in self.design[block]:
                term = td.term
                if term.kind == "random_intercept" or term.prior_scale != "link" or term.prior.family != "normal":
                    return None
                cols.append(td.X[0])
                blocks += [b] * td.k
                means += [term.prior.params[0]] * td.k
                sds += [term.prior.params[1]] * td.k
        P = len(blocks)
        coef = [e for e in self.layout.entries if e.kind == "coef"]
        if sum(e.size for e in coef) != P or any(e.slice.start >= P for e in coef):
            return None
        lam1_pri = np.zeros(4) if self.known else np.array(self.layout.by_name["lambda1"].prior.packed(), dtype=float)
        return (np.ascontiguousarray(np.concatenate(cols, axis=1)), np.array(blocks, dtype=np.int64),
                np.array(means, dtype=float), np.array(sds, dtype=float), lam1_pri)

    def _setup_aux(self, aux: AuxData | None) -> None:
        self.aux = None
        if self.spec.aux is None:
            if aux is not None:
                raise ValidationError("survey data given but the model has no aux block")
            return
        if aux is None:
            raise ValidationError("the model has an aux block but no survey data was given")
        S, T = self.shape
        if np.any(aux.stratum < 0) or np.any(aux.stratum >= S):
            raise ValidationError("survey stratum index out of range")
        if np.any(aux.t > T):
            raise ValidationError(f"survey day beyond the series length {T}")
        missing = [s for s in self.data.strata if s not in self.spec.aux.population]
        if missing:
            raise ValidationError(f"aux population missing for strata {missing}")
        self.aux = aux
        self.aux_pop = np.array([self.spec.aux.population[s] for s in self.data.strata])[aux.stratum]
        self.aux_hi = aux.t  # exclusive end in the padded cumulative sum
        self.aux_lo = np.maximum(aux.t - self.spec.aux.window, 0)
        self.aux_const = float(np.sum(special.gammaln(aux.tests + 1) - special.gammaln(aux.positives + 1)
                                      - special.gammaln(aux.tests - aux.positives + 1)))

    @property
    def dim(self) -> int:
        return self.layout.dim

    # -- evaluation -----------------------------------------------------------------

    def _theta(self, tr: Transformed) -> np.ndarray:
        return self.theta_fixed if self.theta_fixed is not None else tr.values["theta"]

    def state(self, u: np.ndarray, tr: Transformed | None = None) -> LatentState:
        tr = tr or self.layout.transform(u)
        S, T = self.shape
        eta = linear_predictors(self.layout, self.design, tr.values, self.shape)
        nu, phi, pi = natural_rates(eta, self.has_nu)
        theta = self._theta(tr)
        lambda1 = tr.values["lambda1"] if not self.known else np.zeros(S)
        kappa = float(tr.values["psi"][0]) if "psi" in tr.values else 0.0
        lam, Z, lag, zs, dens, ok = latent_forward(nu, phi, theta, np.ascontiguousarray(tr.values[self.latent_name]),
                                                   self.x1, lambda1, kappa, self.known, self.centred, Z_FLOOR)
        return LatentState(nu, phi, pi, lam, Z, zs, theta, lag, kappa, dens, ok)

    def logp(self, u: np.ndarray) -> float:
        return self.logp_grad(u, want_gradient=False)[0]

    def logp_grad(self, u: np.ndarray, want_gradient: bool = True):
        """Return ``(logp, grad)``; ``logp = -inf`` marks the rejection region."""
        u = np.asarray(u, dtype=float)
        if self.fused:
            if u.shape != (self.dim,):
                raise ValidationError(f"expected unconstrained vector of length {self.dim}, got {u.shape}")
            lp, g = canonical_logp_grad(np.ascontiguousarray(u), self.y[0], self.x1[0], self.centred,
                                        self._pri, Z_FLOOR, SD_FLOOR)
            return lp, (g if want_gradient else None)
        if self._linear is not None:
            if u.shape != (self.dim,):
                raise ValidationError(f"expected unconstrained vector of length {self.dim}, got {u.shape}")
            X, blocks, means, sds, lam1_pri = self._linear
            lp, g = linear_logp_grad(np.ascontiguousarray(u), self.y[0], X, blocks, means, sds, self.has_nu,
                                     self.known, self.x1[0], lam1_pri, self.centred, Z_FLOOR, SD_FLOOR)
            return lp, (g if want_gradient else None)
        with np.errstate(over="ignore", invalid="ignore"):  # overflow lands in the -inf region
            return self._logp_grad_general(u, want_gradient)

    def _logp_grad_general(self, u: np.ndarray, want_gradient: bool = True):
        tr = self.layout.transform(u)
        if not np.isfinite(tr.log_prior):
            return -np.inf, (np.zeros(self.dim) if want_gradient else None)
        st = self.state(u, tr)
        if not st.ok:
            return -np.inf, (np.zeros(self.dim) if want_gradient else None)
        S, T = self.shape
        latent = tr.values[self.latent_name]
        if self.centred:
            lp_latent = st.latent_logdens
        else:
            lp_latent = -0.5 * float(np.sum(latent * latent)) - 0.5 * LOG_2PI * latent.size

        # observation layer
        Z, pi, y = st.Z, st.pi, self.y
        v_raw = pi * (1.0 - pi) * Z
        floored = v_raw < SD_FLOOR * SD_FLOOR
        v = np.where(floored, SD_FLOOR * SD_FLOOR, v_raw)
        r = y - pi * Z
        lp_obs = float(np.sum(-0.5 * (LOG_2PI + np.log(v)) - 0.5 * r * r / v))

        # survey layer
        lp_aux = 0.0
        if self.aux is not None:
            C = np.concatenate([np.zeros((S, 1)), np.cumsum(Z, axis=1)], axis=1)
            W = C[self.aux.stratum, self.aux_hi] - C[self.aux.stratum, self.aux_lo]
            p_raw = W / self.aux_pop
            p = np.clip(p_raw, AUX_EPS, 1.0 - AUX_EPS)
            R, P = self.aux.tests, self.aux.positives
            lp_aux = self.aux_const + float(np.sum(P * np.log(p) + (R - P) * np.log1p(-p)))

        logp = lp_obs + lp_latent + lp_aux + tr.log_prior + tr.log_jac
        if not want_gradient:
            return logp, None

        dl_dv = np.where(floored, 0.0, -0.5 / v + 0.5 * r * r / (v * v))
        gZ = pi * r / v + dl_dv * pi * (1.0 - pi)
        g_pi = Z * r / v + dl_dv * (1.0 - 2.0 * pi) * Z
        if self.aux is not None:
            gW = np.where((p_raw > AUX_EPS) & (p_raw < 1.0 - AUX_EPS), (P / p - (R - P) / (1.0 - p)) / self.aux_pop, 0.0)
            D = np.zeros((S, T + 1))
            np.add.at(D, (self.aux.stratum, self.aux_lo), gW)
            np.add.at(D, (self.aux.stratum, self.aux_hi), -gW)
            gZ = gZ + np.cumsum(D, axis=1)[:, :T]
        gZ = np.ascontiguousarray(gZ)
        g_latent, g_lam, g_theta, g_kappa = latent_backward(gZ, st.lam, st.Z, st.zstar, st.phi, st.theta,
                                                            st.kappa, self.known, self.centred)
        if not self.centred:
            g_latent = g_latent - latent
        mask = np.ones((S, T))
        mask[:, 0] = 0.0
        g_eta = {
            "nu": g_lam * st.nu * mask,
            "phi": g_lam * st.lag * st.phi * mask,
            "pi": g_pi * pi * (1.0 - pi),
        }
        grads = pullback_eta(self.design, tr.values, g_eta)
        grads[self.latent_name] = g_latent
        if self.theta_fixed is None:
            grads["theta"] = g_theta
        if not self.known:
            grads["lambda1"] = g_lam[:, 0]
        if "psi" in tr.values:
            grads["psi"] = np.array([g_kappa])
        return logp, self.layout.pullback(tr, grads)

    __call__ = logp_grad

    # -- initialisation and reporting ------------------------------------------------

    def initial_point(self, rng: np.random.Generator, jitter: float = 0.5) -> np.ndarray:
        """Start from prior medians, with link-scale baselines taken from the data; latent states aim at ``y / pi``.

        Baseline terms (``intercept`` or ``dow``) with link-scale priors start
        at clipped moment estimates so that the latent recursion is not
        explosive at the first evaluation; they get the full uniform
        ``+-jitter`` on the unconstrained scale, other coefficients a quarter of it.
        Without a ``nu`` block every log-phi term gets a twentieth, since the
        series then grows geometrically at rate ``phi``.
        """
        base = self._baseline_rates()
        natural = {}
        jit = np.zeros(self.dim)
        for e in self.layout.entries:
            if e.kind in ("coef", "scale", "lambda1", "kappa") and e.prior is not None:
                natural[e.name] = np.full(e.shape, e.prior.median())
            if e.kind == "latent":
                continue
            scale = jitter
            if e.kind == "coef":
                term = self.spec.links[e.block][e.term_index]
                if term.kind in ("intercept", "dow") and term.prior_scale == "link":
                    natural[e.name] = np.broadcast_to(base[e.block][:, None] if len(e.shape) == 2 else
                                                      np.median(base[e.block]), e.shape).copy()
                elif term.kind not in ("intercept", "dow"):
                    scale = jitter / 4.0
            if e.block == "phi" and not self.has_nu:
                scale = jitter / 20.0
            jit[e.slice] = scale
        u = self.layout.unconstrain(natural)
        u += rng.uniform(-1.0, 1.0, size=self.dim) * jit
        lat = self.layout.by_name[self.latent_name]
        u[lat.slice] = self._latent_guess(u).reshape(-1)
        return u

    def _baseline_rates(self) -> dict[str, np.ndarray]:
        """Per-stratum link-scale starting values from clipped moment estimates."""
        from ..errors import EstimationError
        from ..moments import mom_estimate

        S = self.shape[0]
        out = {b: np.empty(S) for b in ("nu", "phi", "pi")}
        for i in range(S):
            y = self.y[i]
            try:
                est = mom_estimate(y)
                phi, pi = est.phi, est.pi
            except EstimationError:
                phi, pi = 0.5, 0.5
            pi = float(np.clip(np.nan_to_num(pi, nan=0.5), 0.1, 0.9))
            if self.has_nu:
                phi = float(np.clip(np.nan_to_num(phi, nan=0.5), 0.1, 0.6))
                nu = max(float(np.mean(y)) * (1.0 - phi) / pi, 0.1)
            else:
                phi, nu = 1.0, 1.0
            out["nu"][i], out["phi"][i], out["pi"][i] = np.log(nu), np.log(phi), special.logit(pi)
        return out

    def _latent_guess(self, u: np.ndarray) -> np.ndarray:
        """Sequentially choose latent values so that Z_t tracks max(y_t / pi_t, 1)."""
        tr = self.layout.transform(u)
        eta = linear_predictors(self.layout, self.design, tr.values, self.shape)
        nu, phi, pi = natural_rates(eta, self.has_nu)
        theta = self._theta(tr)
        kappa = float(tr.values["psi"][0]) if "psi" in tr.values else 0.0
        S, T = self.shape
        t0 = 1 if self.known else 0
        Z = np.zeros((S, T))
        Z[:, 0] = self.x1
        out = np.zeros((S, T - t0))
        target = np.maximum(self.y / pi, 1.0)
        for t in range(t0, T):
            if t == 0:
                lam = tr.values["lambda1"]
            else:
                lag = sum(theta[j - 1] * Z[:, t - j] for j in range(1, min(len(theta), t) + 1))
                lam = nu[:, t] + phi[:, t] * lag
            lam = np.maximum(lam, 1e-3)
            sd = np.sqrt(lam + kappa * lam * lam)
            zs = np.clip((target[:, t] - lam) / sd, -4.0, 4.0)
            zt = lam + sd * zs
            bad = zt <= Z_FLOOR
            zs[bad], zt[bad] = 0.0, lam[bad]
            Z[:, t] = zt
            out[:, t - t0] = zt if self.centred else zs
        return out

    def report_labels(self) -> list[str]:
        return self.layout.report_labels

    def report(self, u: np.ndarray) -> np.ndarray:
        return self.layout.report(self.layout.transform(u))

    def generated(self, u: np.ndarray) -> dict[str, np.ndarray]:
        """Per-draw ``lambda`` and ``zstar`` fields (S, T) for count reconstruction."""
        st = self.state(np.asarray(u, dtype=float))
        return {"lambda": st.lam.copy(), "zstar": st.zstar.copy()}


def log_posterior_approx(spec: ModelSpec, data: ObservedSeries, u: np.ndarray, want_gradient: bool = False,
                         aux: AuxData | None = None):
    """Functional wrapper around :class:`ApproxModel`; returns ``(logp, grad or None)``."""
    return ApproxModel(spec, data, aux).logp_grad(u, want_gradient)


def transform_params(spec: ModelSpec, u: np.ndarray, strata: list[str], t_len: int,
                     covariates: dict[str, np.ndarray] | None = None) -> Transformed:
    """Constrained parameters plus prior and log-Jacobian totals for ``u``."""
    design = build_design(spec, len(strata), t_len, covariates)
    return ParamLayout.from_spec(spec, strata, t_len, design).transform(u)

