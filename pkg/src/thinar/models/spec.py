"""Declarative model description and its JSON schema.

A config file looks like::

    {
      "name": "sim-study",
      "serial_len": 1,
      "theta": {"mode": "fixed", "weights": [1.0]},
      "count_family": {"family": "poisson"},
      "parametrization": "noncentred",
      "links": {
        "nu":  [{"term": "intercept", "prior": {"family": "truncnormal_pos", "params": [9, 4]},
                 "prior_scale": "natural"}],
        "phi": [...],
        "pi":  [...]
      },
      "x1": {"mode": "known"},
      "aux": {"window": 14, "population": {"A": 1.2e6}}
    }

Link blocks map to ``log(nu)``, ``log(phi)`` and ``logit(pi)``. An empty or
missing ``nu`` block means no exogenous term (nu = 0). Terms:

``intercept``, ``fourier`` (``period``), ``bspline`` (``df``), ``dow``
(``offset``), ``covariate`` (``name``), ``random_intercept`` (``scale_prior``).
Coefficient terms accept ``prior`` (default normal(0, 1)) and
``per_stratum`` (default false). With ``prior_scale: "natural"`` the prior is
placed on the link's natural scale (e.g. on phi itself rather than log phi),
which is how the simulation-study priors are stated.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from ..errors import ValidationError
from .priors import Prior

BLOCKS = ("nu", "phi", "pi")
TERM_KINDS = ("intercept", "fourier", "bspline", "dow", "covariate", "random_intercept")
DEFAULT_COEF_PRIOR = Prior("normal", (0.0, 1.0))
DEFAULT_SCALE_PRIOR = Prior("exponential", (1.0,))


@dataclass(frozen=True)
class Term:
    kind: str
    prior: Prior = DEFAULT_COEF_PRIOR
    prior_scale: str = "link"
    per_stratum: bool = False
    period: float | None = None
    df: int | None = None
    name: str | None = None
    offset: int = 0
    scale_prior: Prior = DEFAULT_SCALE_PRIOR

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ValidationError(f"unknown link term {self.kind!r}")
        if self.kind == "fourier" and (self.period is None or self.period <= 0):
            raise ValidationError("fourier term needs a positive 'period'")
        if self.kind == "bspline" and (self.df is None or self.df < 4):
            raise ValidationError("bspline term needs integer 'df' >= 4")
        if self.kind == "covariate" and not self.name:
            raise ValidationError("covariate term needs a 'name'")
        if self.prior_scale not in ("link", "natural"):
            raise ValidationError("prior_scale must be 'link' or 'natural'")
        if self.prior_scale == "natural" and self.kind != "intercept":
            raise ValidationError("natural-scale priors are only allowed on intercept terms")

    @property
    def label(self) -> str:
        if self.kind == "fourier":
            return f"fourier{self.period:g}"
        if self.kind == "bspline":
            return f"bspline{self.df}"
        if self.kind == "covariate":
            return f"cov_{self.name}"
        return self.kind

    @classmethod
    def from_dict(cls, d: dict) -> "Term":
        d = dict(d)
        kind = d.pop("term", None) or d.pop("kind", None)
        if kind is None:
            raise ValidationError(f"link term without 'term': {d!r}")
        kw: dict[str, Any] = {}
        if "prior" in d:
            kw["prior"] = Prior.from_dict(d.pop("prior"))
        if "scale_prior" in d:
            kw["scale_prior"] = Prior.from_dict(d.pop("scale_prior"))
        for key in ("prior_scale", "per_stratum", "period", "df", "name", "offset"):
            if key in d:
                kw[key] = d.pop(key)
        if d:
            raise ValidationError(f"unknown keys in term {kind!r}: {sorted(d)}")
        return cls(kind, **kw)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"term": self.kind}
        if self.kind == "random_intercept":
            out["scale_prior"] = self.scale_prior.to_dict()
            return out
        out["prior"] = self.prior.to_dict()
        if self.prior_scale != "link":
            out["prior_scale"] = self.prior_scale
        if self.per_stratum:
            out["per_stratum"] = True
        for key in ("period", "df", "name"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.kind == "dow" and self.offset:
            out["offset"] = self.offset
        return out


@dataclass(frozen=True)
class AuxSpec:
    """Prevalence-survey block: binomial positives against a rolling incidence sum."""

    population: dict[str, float]
    window: int = 14

    def __post_init__(self):
        if self.window < 1:
            raise ValidationError("aux window must be >= 1")
        for k, v in self.population.items():
            if not v > 0:
                raise ValidationError(f"population for stratum {k!r} must be positive")


@dataclass(frozen=True)
class ModelSpec:
    links: dict[str, tuple[Term, ...]]
    serial_len: int = 1
    theta_mode: str = "fixed"
    theta_weights: tuple[float, ...] | None = None
    theta_alpha: float = 1.0
    count_family: str = "poisson"
    negbin_prior: Prior = Prior("exponential", (0.1,))
    x1_mode: str = "known"
    x1_value: tuple[float, ...] | None = None
    x1_prior: Prior = Prior("truncnormal_pos", (10.0, 10.0))
    aux: AuxSpec | None = None
    parametrization: str = "noncentred"
    strata: int | None = None
    t_len: int | None = None
    name: str = "model"
    truth: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        links = {b: tuple(self.links.get(b, ())) for b in BLOCKS}
        unknown = set(self.links) - set(BLOCKS)
        if unknown:
            raise ValidationError(f"unknown link blocks {sorted(unknown)}")
        object.__setattr__(self, "links", links)
        if not links["phi"]:
            raise ValidationError("the phi link block needs at least one term")
        if not links["pi"]:
            raise ValidationError("the pi link block needs at least one term")
        if self.serial_len < 1:
            raise ValidationError("serial_len must be >= 1")
        if self.theta_mode not in ("fixed", "estimated"):
            raise ValidationError("theta mode must be 'fixed' or 'estimated'")
        if self.theta_mode == "fixed":
            w = self.theta_weights
            if w is None:
                if self.serial_len != 1:
                    raise ValidationError("fixed theta needs explicit weights when serial_len > 1")
                w = (1.0,)
            w = tuple(float(v) for v in w)
            check_simplex(w)
            if len(w) != self.serial_len:
                raise ValidationError("theta weights length must equal serial_len")
            object.__setattr__(self, "theta_weights", w)
        if self.count_family not in ("poisson", "negbin"):
            raise ValidationError("count_family must be 'poisson' or 'negbin'")
        if self.x1_mode not in ("known", "prior"):
            raise ValidationError("x1 mode must be 'known' or 'prior'")
        if self.parametrization not in ("noncentred", "centred"):
            raise ValidationError("parametrization must be 'noncentred' or 'centred'")
        for block, terms in links.items():
            labels = [t.label for t in terms]
            if len(set(labels)) != len(labels):
                raise ValidationError(f"duplicate terms in {block} block")
            for t in terms:
                if t.prior_scale == "natural":
                    if t.prior.support == "real":
                        raise ValidationError(f"natural-scale prior on {block} needs bounded support")
                    if block == "pi" and t.prior.support != "unit":
                        raise ValidationError("natural-scale prior on pi must live on (0, 1)")

    @property
    def is_canonical(self) -> bool:
        """Single-lag, intercept-only model of the simulation study."""
        return (
            self.serial_len == 1
            and self.count_family == "poisson"
            and self.aux is None
            and all(len(self.links[b]) == 1 and self.links[b][0].kind == "intercept"
                    and not self.links[b][0].per_stratum for b in BLOCKS)
        )

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        try:
            raw_links = d.pop("links")
        except KeyError as exc:
            raise ValidationError("config needs a 'links' section") from exc
        links = {b: tuple(Term.from_dict(t) for t in terms) for b, terms in raw_links.items()}
        kw: dict[str, Any] = {"links": links}
        for key in ("serial_len", "parametrization", "strata", "t_len", "name"):
            if key in d:
                kw[key] = d.pop(key)
        theta = d.pop("theta", None)
        if theta is not None:
            kw["theta_mode"] = theta.get("mode", "fixed")
            if "weights" in theta:
                kw["theta_weights"] = tuple(theta["weights"])
            if "alpha" in theta:
                kw["theta_alpha"] = float(theta["alpha"])
        fam = d.pop("count_family", None)
        if fam is not None:
            if isinstance(fam, str):
                fam = {"family": fam}
            kw["count_family"] = fam["family"]
            if "psi_prior" in fam:
                kw["negbin_prior"] = Prior.from_dict(fam["psi_prior"])
        x1 = d.pop("x1", None)
        if x1 is not None:
            kw["x1_mode"] = x1.get("mode", "known")
            if "value" in x1:
                v = x1["value"]
                kw["x1_value"] = tuple(np.atleast_1d(np.asarray(v, dtype=float)).tolist())
            if "prior" in x1:
                kw["x1_prior"] = Prior.from_dict(x1["prior"])
        aux = d.pop("aux", None)
        if aux is not None:
            pop = aux.get("population")
            if pop is None:
                raise ValidationError("aux block requires 'population' per stratum")
            if not isinstance(pop, dict):
                raise ValidationError("aux population must map stratum label -> population")
            kw["aux"] = AuxSpec({str(k): float(v) for k, v in pop.items()}, int(aux.get("window", 14)))
        if "truth" in d:
            kw["truth"] = d.pop("truth")
        d.pop("description", None)
        if d:
            raise ValidationError(f"unknown config keys {sorted(d)}")
        return cls(**kw)

    @classmethod
    def from_json(cls, path) -> "ModelSpec":
        try:
            raw = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(raw)

    def to_dict(self) -> dict:
        out: dict[str, Any] = {"name": self.name, "serial_len": self.serial_len}
        theta: dict[str, Any] = {"mode": self.theta_mode}
        if self.theta_mode == "fixed":
            theta["weights"] = list(self.theta_weights)
        else:
            theta["alpha"] = self.theta_alpha
        out["theta"] = theta
        fam: dict[str, Any] = {"family": self.count_family}
        if self.count_family == "negbin":
            fam["psi_prior"] = self.negbin_prior.to_dict()
        out["count_family"] = fam
        out["parametrization"] = self.parametrization
        out["links"] = {b: [t.to_dict() for t in self.links[b]] for b in BLOCKS}
        x1: dict[str, Any] = {"mode": self.x1_mode}
        if self.x1_mode == "known" and self.x1_value is not None:
            x1["value"] = list(self.x1_value)
        if self.x1_mode == "prior":
            x1["prior"] = self.x1_prior.to_dict()
        out["x1"] = x1
        if self.aux is not None:
            out["aux"] = {"window": self.aux.window, "population": dict(self.aux.population)}
        for key in ("strata", "t_len"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.truth is not None:
            out["truth"] = self.truth
        return out


def check_simplex(w, tol: float = 1e-12) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or abs(w.sum() - 1.0) > tol:
        raise ValidationError(f"serial-interval weights must be a simplex, got {w.tolist()}")
    return w


def canonical_spec(
    phi_prior: Prior = Prior("truncnormal_unit", (0.6, 0.3)),
    pi_prior: Prior = Prior("truncnormal_unit", (0.6, 0.3)),
    nu_prior: Prior = Prior("truncnormal_pos", (9.0, 4.0)),
    x1_value=None,
    parametrization: str = "noncentred",
) -> ModelSpec:
    """The single-series study model with x1 known and natural-scale priors."""
    return ModelSpec(
        links={
            "nu": (Term("intercept", prior=nu_prior, prior_scale="natural"),),
            "phi": (Term("intercept", prior=phi_prior, prior_scale="natural"),),
            "pi": (Term("intercept", prior=pi_prior, prior_scale="natural"),),
        },
        x1_mode="known",
        x1_value=None if x1_value is None else tuple(np.atleast_1d(x1_value).astype(float)),
        parametrization=parametrization,
        name="sim-study",
    )
