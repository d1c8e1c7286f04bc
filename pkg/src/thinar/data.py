"""Observed series and prevalence-survey containers, plus CSV loaders."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ValidationError


@dataclass
class ObservedSeries:
    """Reported counts ``y`` (strata x T) with aligned covariates.

    ``x`` optionally carries true counts (simulated fixtures only); it is
    used when the first true count is treated as known.
    """

    y: np.ndarray
    strata: list[str]
    covariates: dict[str, np.ndarray] = field(default_factory=dict)
    x: np.ndarray | None = None

    def __post_init__(self):
        self.y = np.atleast_2d(np.asarray(self.y))
        if not np.issubdtype(self.y.dtype, np.integer):
            if not np.all(self.y == np.round(self.y)):
                raise ValidationError("reported counts must be integers")
            self.y = self.y.astype(np.int64)
        if np.any(self.y < 0):
            raise ValidationError("reported counts must be nonnegative")
        if len(self.strata) != self.y.shape[0]:
            raise ValidationError("one stratum label per row of y is required")
        for name, cov in list(self.covariates.items()):
            cov = np.atleast_2d(np.asarray(cov, dtype=float))
            if cov.shape != self.y.shape:
                raise ValidationError(f"covariate {name!r} has shape {cov.shape}, expected {self.y.shape}")
            self.covariates[name] = cov
        if self.x is not None:
            self.x = np.atleast_2d(np.asarray(self.x)).astype(np.int64)
            if self.x.shape != self.y.shape:
                raise ValidationError("x must align with y")

    @property
    def n_strata(self) -> int:
        return self.y.shape[0]

    @property
    def t_len(self) -> int:
        return self.y.shape[1]

    @classmethod
    def single(cls, y, x=None, label: str = "1") -> "ObservedSeries":
        return cls(np.asarray(y)[None, :], [label], x=None if x is None else np.asarray(x)[None, :])


@dataclass
class AuxData:
    """Survey rows: stratum index, day ``t`` (1-based), tests ``R``, positives ``P``."""

    stratum: np.ndarray
    t: np.ndarray
    tests: np.ndarray
    positives: np.ndarray

    def __post_init__(self):
        self.stratum = np.asarray(self.stratum, dtype=np.int64)
        self.t = np.asarray(self.t, dtype=np.int64)
        self.tests = np.asarray(self.tests, dtype=np.int64)
        self.positives = np.asarray(self.positives, dtype=np.int64)
        n = self.stratum.size
        if not (self.t.size == self.tests.size == self.positives.size == n):
            raise ValidationError("survey columns must have equal length")
        if np.any(self.positives < 0) or np.any(self.positives > self.tests):
            raise ValidationError("survey rows need 0 <= positives <= tests")
        if np.any(self.t < 1):
            raise ValidationError("survey day index starts at 1")

    def __len__(self) -> int:
        return int(self.stratum.size)


def _read_csv(path) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype={"stratum": str})
    except FileNotFoundError as exc:
        raise ValidationError(f"no such file: {path}") from exc


def load_series(path) -> ObservedSeries:
    """Read ``stratum,t,y[,x][,covariate...]``; t must run 1..T without gaps in every stratum."""
    df = _read_csv(path)
    for col in ("stratum", "t", "y"):
        if col not in df.columns:
            raise ValidationError(f"{path}: missing column {col!r}")
    if df["y"].isna().any():
        row = int(df.index[df["y"].isna()][0]) + 2
        raise ValidationError(f"{path}: missing y at row {row}")
    neg = np.flatnonzero(df["y"].to_numpy() < 0)
    if neg.size:
        raise ValidationError(f"{path}: negative count at row {int(neg[0]) + 2}")
    labels = list(dict.fromkeys(df["stratum"].tolist()))
    t_len = None
    for lab in labels:
        t = np.sort(df.loc[df["stratum"] == lab, "t"].to_numpy())
        expected = np.arange(1, t.size + 1)
        if t.size == 0 or not np.array_equal(t, expected):
            bad = next((int(e) for a, e in zip(t, expected) if a != e), int(t.size + 1))
            raise ValidationError(f"{path}: stratum {lab!r} has a gap in t at t={bad}")
        if t_len is None:
            t_len = t.size
        elif t.size != t_len:
            raise ValidationError(f"{path}: strata have different lengths")
    df = df.sort_values(["stratum", "t"], key=lambda s: s.map({lab: i for i, lab in enumerate(labels)})
                        if s.name == "stratum" else s)
    n = len(labels)
    y = df["y"].to_numpy().reshape(n, t_len)
    x = df["x"].to_numpy().reshape(n, t_len) if "x" in df.columns else None
    covs = {c: df[c].to_numpy(dtype=float).reshape(n, t_len)
            for c in df.columns if c not in ("stratum", "t", "y", "x")}
    return ObservedSeries(y=y, strata=labels, covariates=covs, x=x)


def load_survey(path, strata: list[str] | None = None) -> tuple[AuxData, list[str]]:
    """Read ``stratum,t,tests,positives``; stratum labels are mapped onto ``strata`` if given."""
    df = _read_csv(path)
    for col in ("stratum", "t", "tests", "positives"):
        if col not in df.columns:
            raise ValidationError(f"{path}: missing column {col!r}")
    if len(df) == 0:
        raise ValidationError(f"{path}: empty survey")
    if strata is None:
        strata = list(dict.fromkeys(df["stratum"].tolist()))
    index = {lab: i for i, lab in enumerate(strata)}
    unknown = set(df["stratum"]) - set(index)
    if unknown:
        raise ValidationError(f"{path}: survey strata {sorted(unknown)} not present in series")
    aux = AuxData(df["stratum"].map(index).to_numpy(), df["t"].to_numpy(),
                  df["tests"].to_numpy(), df["positives"].to_numpy())
    return aux, strata


def write_series(path, series: ObservedSeries, include_x: bool = False) -> None:
    rows = []
    for i, lab in enumerate(series.strata):
        for t in range(series.t_len):
            row = {"stratum": lab, "t": t + 1}
            if include_x and series.x is not None:
                row["x"] = int(series.x[i, t])
            row["y"] = int(series.y[i, t])
            for name, cov in series.covariates.items():
                row[name] = cov[i, t]
            rows.append(row)
    pd.DataFrame(rows).to_csv(Path(path), index=False)


def write_survey(path, aux: AuxData, strata: list[str]) -> None:
    pd.DataFrame({"stratum": [strata[i] for i in aux.stratum], "t": aux.t, "tests": aux.tests,
                  "positives": aux.positives}).to_csv(Path(path), index=False)
