"""Fit pipelines shared by the CLI and the experiment drivers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .data import AuxData, ObservedSeries
from .errors import ValidationError
from .mcmc import ChainConfig, DrawStore, ess_and_summary, run_chains
from .mcmc.exact import run_exact_for_series
from .models import ApproxModel, ModelSpec
from .models.reparam import ReportedScaleTarget
from .reconstruct import Reconstruction, ReconstructionSummary, reconstruct_counts, summarize_counts

EXACT_CONFIG = ChainConfig(n_chains=4, n_iter=100_000, n_warmup=1000, thin=10)
APPROX_CONFIG = ChainConfig(n_chains=4, n_iter=7000, n_warmup=3000)


@dataclass
class FitResult:
    engine: str
    store: DrawStore
    summary: pd.DataFrame
    counts: ReconstructionSummary | None = None
    n_excluded: int = 0

    def rhat_max(self, parameters: list[str] | None = None) -> float:
        s = self.summary if parameters is None else self.summary[self.summary.parameter.isin(parameters)]
        return float(s.rhat.max())


def approx_counts(store: DrawStore, model: ApproxModel) -> Reconstruction:
    """Integer ``X`` draws ``(C, N, S, T)`` from stored ``lambda`` / ``zstar`` fields.

    With a known first count the first column is that count and only later
    time points are transformed.
    """
    if "lambda" not in store.extras or "zstar" not in store.extras:
        raise ValidationError("draws carry no lambda/zstar fields; refit with reconstruction enabled")
    lam, zs = store.extras["lambda"], store.extras["zstar"]
    t0 = 1 if model.known else 0
    rec = reconstruct_counts(zs[..., t0:], lam[..., t0:])
    x = rec.x
    if t0:
        first = np.broadcast_to(np.round(model.x1).astype(np.int64)[:, None], lam.shape[:-1] + (1,))
        x = np.concatenate([first, x], axis=-1)
    valid = rec.valid.all(axis=-1)
    return Reconstruction(x, valid, int(np.sum(~valid)), rec.n_clamped)


def fit_approx(spec: ModelSpec, data: ObservedSeries, config: ChainConfig = APPROX_CONFIG,
               aux: AuxData | None = None, level: float = 0.9, reconstruct: bool = True,
               stream_keys: tuple[int, ...] = ()) -> FitResult:
    model = ApproxModel(spec, data, aux)
    # same posterior; the sampler sees coordinates without the pi/latent-scale ridge
    target = ReportedScaleTarget(model) if ReportedScaleTarget.applies(model) else model
    store = run_chains(target, config, init=target.initial_point, report=target.report,
                       names=model.report_labels(), generated=target.generated if reconstruct else None,
                       stream_keys=stream_keys)
    summary = ess_and_summary(store)
    if not reconstruct:
        return FitResult("approx", store, summary)
    rec = approx_counts(store, model)
    counts = summarize_counts(rec.x, level, data.strata, valid=rec.valid)
    return FitResult("approx", store, summary, counts, rec.n_excluded)


def fit_exact(spec: ModelSpec, data: ObservedSeries, config: ChainConfig = EXACT_CONFIG, level: float = 0.9,
              stream_keys: tuple[int, ...] = ()) -> FitResult:
    store = run_exact_for_series(spec, data, config, stream_keys=stream_keys)
    summary = ess_and_summary(store)
    counts = summarize_counts(store.extras["x"], level, data.strata)
    return FitResult("exact", store, summary, counts)
