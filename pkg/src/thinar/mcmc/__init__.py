"""Samplers, latent-count updates and convergence diagnostics."""

from .config import ChainConfig
from .diagnostics import ess, ess_and_summary, mcse_mean, mcse_quantile, split_rhat
from .samplers import run_chains
from .store import DrawStore

__all__ = ["ChainConfig", "DrawStore", "ess", "ess_and_summary", "mcse_mean", "mcse_quantile",
           "run_chains", "split_rhat"]
