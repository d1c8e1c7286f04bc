"""Unconstrained parameter layout and change-of-variables bookkeeping.

Positivity uses ``exp``, the unit interval uses the logistic function and the
serial-interval simplex uses stick-breaking. Every transform reports its
log-Jacobian so that densities stated on the constrained scale stay correct.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import special

from ..errors import DomainError, ValidationError
from .design import TermDesign
from .priors import Prior
from .spec import BLOCKS, ModelSpec

LINKS = {"nu": "log", "phi": "log", "pi": "logit"}
STD_NORMAL = Prior("normal", (0.0, 1.0))


@dataclass
class Entry:
    name: str
    kind: str  # coef | scale | eps | theta | lambda1 | kappa | latent
    shape: tuple[int, ...]
    transform: str  # identity | exp | logistic | stick
    prior: Prior | None = None
    link: str | None = None  # for natural-scale coefficients
    block: str | None = None
    term_index: int | None = None
    labels: list[str] = field(default_factory=list)
    alpha: float = 1.0  # Dirichlet concentration for the simplex
    start: int = 0
    size: int = field(init=False)
    slice: slice = field(init=False)

    def __post_init__(self):
        self.size = self.shape[0] - 1 if self.transform == "stick" else int(np.prod(self.shape))
        self.slice = slice(self.start, self.start + self.size)


@dataclass
class Transformed:
    """Constrained values plus what is needed to pull gradients back to ``u``."""

    values: dict[str, np.ndarray]  # model-scale: link coefficients, scales, theta, ...
    natural: dict[str, np.ndarray]  # reporting scale
    log_prior: float
    log_jac: float
    _dvalue_du: dict[str, np.ndarray]
    _dprior_du: np.ndarray
    _theta_jac: np.ndarray | None = None


def _stick_forward(u: np.ndarray):
    """Stan-style stick-breaking: zeros map to the uniform simplex."""
    K = u.size + 1
    theta = np.empty(K)
    jac = np.zeros((u.size, K))  # d theta / d u
    log_jac = 0.0
    remaining = 1.0
    d_remaining = np.zeros(u.size)
    for k in range(K - 1):
        zk = special.expit(u[k] - np.log(K - k - 1))
        theta[k] = remaining * zk
        dz = zk * (1.0 - zk)
        jac[:, k] = d_remaining * zk
        jac[k, k] += remaining * dz
        log_jac += np.log(dz) + np.log(remaining)
        d_remaining = d_remaining - jac[:, k]
        remaining -= theta[k]
    theta[K - 1] = remaining
    jac[:, K - 1] = d_remaining
    return theta, jac, log_jac


def _stick_inverse(theta: np.ndarray) -> np.ndarray:
    K = theta.size
    u = np.empty(K - 1)
    remaining = 1.0
    for k in range(K - 1):
        zk = theta[k] / remaining
        u[k] = special.logit(zk) + np.log(K - k - 1)
        remaining -= theta[k]
    return u


class ParamLayout:
    """Maps a flat unconstrained vector onto named model quantities."""

    def __init__(self, entries: list[Entry]):
        start = 0
        for e in entries:
            e.start = start
            e.slice = slice(start, start + e.size)
            start += e.size
        self.entries = entries
        self.dim = start
        self.by_name = {e.name: e for e in entries}

    @classmethod
    def from_spec(cls, spec: ModelSpec, strata: list[str], t_len: int,
                  design: dict[str, list[TermDesign]]) -> "ParamLayout":
        S = len(strata)
        entries: list[Entry] = []
        for block in BLOCKS:
            for j, td in enumerate(design[block]):
                term = td.term
                base = f"{block}.{term.label}"
                if term.kind == "random_intercept":
                    entries.append(Entry(f"{base}.sigma", "scale", (1,), "exp", term.scale_prior,
                                         block=block, term_index=j, labels=[f"{block}.sigma"]))
                    entries.append(Entry(f"{base}.eps", "eps", (S, t_len), "identity",
                                         STD_NORMAL, block=block, term_index=j))
                    continue
                shape = (S, td.k) if term.per_stratum else (td.k,)
                if term.per_stratum:
                    labels = [f"{block}.{c}[{s}]" for s in strata for c in td.colnames]
                else:
                    labels = [f"{block}.{c}" for c in td.colnames]
                if term.prior_scale == "natural":
                    transform = "exp" if term.prior.support == "positive" else "logistic"
                    if transform == "exp" and LINKS[block] == "logit":
                        raise ValidationError("positive natural prior cannot feed a logit link")
                    labels = [lab.replace(f"{block}.intercept", block) for lab in labels]
                    entries.append(Entry(base, "coef", shape, transform, term.prior, LINKS[block],
                                         block=block, term_index=j, labels=labels))
                else:
                    entries.append(Entry(base, "coef", shape, "identity", term.prior,
                                         block=block, term_index=j, labels=labels))
        if spec.theta_mode == "estimated" and spec.serial_len > 1:
            entries.append(Entry("theta", "theta", (spec.serial_len,), "stick",
                                 labels=[f"theta[{j + 1}]" for j in range(spec.serial_len)],
                                 alpha=spec.theta_alpha))
        if spec.x1_mode == "prior":
            entries.append(Entry("lambda1", "lambda1", (S,), "exp", spec.x1_prior,
                                 labels=[f"lambda1[{s}]" for s in strata]))
        if spec.count_family == "negbin":
            entries.append(Entry("psi", "kappa", (1,), "exp", spec.negbin_prior, labels=["psi"]))
        t0 = 1 if spec.x1_mode == "known" else 0
        latent = "zstar" if spec.parametrization == "noncentred" else "Z"
        entries.append(Entry(latent, "latent", (S, t_len - t0), "identity"))
        return cls(entries)

    @property
    def report_labels(self) -> list[str]:
        out = []
        for e in self.entries:
            out.extend(e.labels)
        return out

    def transform(self, u: np.ndarray) -> Transformed:
        u = np.asarray(u, dtype=float)
        if u.shape != (self.dim,):
            raise ValidationError(f"expected unconstrained vector of length {self.dim}, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise DomainError("unconstrained vector must be finite")
        values: dict[str, np.ndarray] = {}
        natural: dict[str, np.ndarray] = {}
        dvalue: dict[str, np.ndarray] = {}
        dprior = np.zeros(self.dim)
        log_prior = 0.0
        log_jac = 0.0
        theta_jac = None
        for e in self.entries:
            ue = u[e.slice]
            sl = e.slice
            if e.transform == "identity":
                v = ue.reshape(e.shape)
                values[e.name] = v
                natural[e.name] = v
                dvalue[e.name] = np.ones(e.shape)
                if e.prior is not None:
                    log_prior += e.prior.logpdf(v)
                    dprior[sl] += e.prior.dlogpdf(ue)
            elif e.transform == "exp":
                v = np.exp(ue)
                log_jac += float(np.sum(ue))
                dprior[sl] += 1.0
                if e.prior is not None:
                    log_prior += e.prior.logpdf(v)
                    dprior[sl] += e.prior.dlogpdf(v) * v
                natural[e.name] = v.reshape(e.shape)
                if e.kind == "coef":  # log link of a positive natural value
                    values[e.name] = ue.reshape(e.shape)
                    dvalue[e.name] = np.ones(e.shape)
                elif e.kind == "kappa":  # psi = exp(u); model uses 1/psi
                    values[e.name] = np.exp(-ue).reshape(e.shape)
                    dvalue[e.name] = -np.exp(-ue).reshape(e.shape)
                else:
                    values[e.name] = v.reshape(e.shape)
                    dvalue[e.name] = v.reshape(e.shape)
            elif e.transform == "logistic":
                v = special.expit(ue)
                dv = v * (1.0 - v)
                log_jac += float(np.sum(np.log(dv)))
                dprior[sl] += 1.0 - 2.0 * v
                log_prior += e.prior.logpdf(v)
                dprior[sl] += e.prior.dlogpdf(v) * dv
                natural[e.name] = v.reshape(e.shape)
                if e.link == "logit":
                    values[e.name] = ue.reshape(e.shape)
                    dvalue[e.name] = np.ones(e.shape)
                else:  # log of a unit-interval value
                    values[e.name] = np.log(v).reshape(e.shape)
                    dvalue[e.name] = (1.0 - v).reshape(e.shape)
            else:  # stick
                theta, theta_jac, lj = _stick_forward(ue)
                log_jac += lj
                dprior[sl] += _stick_logjac_grad(ue)
                if e.alpha != 1.0:
                    log_prior += (e.alpha - 1.0) * float(np.sum(np.log(theta)))
                    dprior[sl] += theta_jac @ ((e.alpha - 1.0) / theta)
                values[e.name] = theta
                natural[e.name] = theta
                dvalue[e.name] = None
        if not np.isfinite(log_prior):
            log_prior = -np.inf
        return Transformed(values, natural, log_prior, log_jac, dvalue, dprior, theta_jac)

    def pullback(self, tr: Transformed, grads: dict[str, np.ndarray]) -> np.ndarray:
        """d logp / d u from gradients w.r.t. model-scale values, plus prior and Jacobian terms."""
        du = tr._dprior_du.copy()
        for e in self.entries:
            g = grads.get(e.name)
            if g is None:
                continue
            if e.transform == "stick":
                du[e.slice] += tr._theta_jac @ np.asarray(g)
            else:
                du[e.slice] += (np.asarray(g) * tr._dvalue_du[e.name]).reshape(-1)
        return du

    def unconstrain(self, natural: dict[str, np.ndarray]) -> np.ndarray:
        """Inverse of the natural-scale map; missing entries are set to zero."""
        u = np.zeros(self.dim)
        for e in self.entries:
            if e.name not in natural:
                continue
            v = np.asarray(natural[e.name], dtype=float)
            if e.transform == "identity":
                u[e.slice] = v.reshape(-1)
            elif e.transform == "exp":
                u[e.slice] = np.log(v).reshape(-1)
            elif e.transform == "logistic":
                u[e.slice] = special.logit(v).reshape(-1)
            else:
                u[e.slice] = _stick_inverse(v)
        return u

    def report(self, tr: Transformed) -> np.ndarray:
        """Flat constrained vector aligned with :attr:`report_labels`."""
        parts = [np.asarray(tr.natural[e.name]).reshape(-1) for e in self.entries if e.labels]
        return np.concatenate(parts) if parts else np.zeros(0)


def _stick_logjac_grad(u: np.ndarray) -> np.ndarray:
    K = u.size + 1
    z = special.expit(u - np.log(K - 1 - np.arange(K - 1)))
    return 1.0 - 2.0 * z - z * (K - 2 - np.arange(K - 1))
