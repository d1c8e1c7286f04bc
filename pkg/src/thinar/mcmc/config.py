"""Run-shape configuration shared by all samplers."""

from __future__ import annotations

from dataclasses import dataclass

from ..errors import ValidationError

DEFAULT_TARGET = {"hmc": 0.8, "rwm": 0.44}


@dataclass(frozen=True)
class ChainConfig:
    """``n_iter`` counts all iterations including the ``n_warmup`` adaptation phase.

    Post-warmup iterations are thinned by ``thin``. HMC trajectories use
    ``n_leapfrog`` steps jittered uniformly by ``+-leapfrog_jitter``.
    """

    n_chains: int = 4
    n_iter: int = 2000
    n_warmup: int = 1000
    thin: int = 1
    seed: int = 0
    sampler: str = "hmc"
    target_accept: float | None = None
    n_leapfrog: int = 32
    leapfrog_jitter: float = 0.2
    max_init_tries: int = 100

    def __post_init__(self):
        if self.sampler not in DEFAULT_TARGET:
            raise ValidationError(f"sampler must be one of {sorted(DEFAULT_TARGET)}")
        if self.n_chains < 1:
            raise ValidationError("n_chains must be >= 1")
        if not 0 <= self.n_warmup < self.n_iter:
            raise ValidationError("need 0 <= n_warmup < n_iter")
        if self.thin < 1:
            raise ValidationError("thin must be >= 1")
        if not 0 < self.accept_target < 1:
            raise ValidationError("target_accept must lie in (0, 1)")
        if self.n_leapfrog < 1 or not 0 <= self.leapfrog_jitter < 1:
            raise ValidationError("need n_leapfrog >= 1 and 0 <= leapfrog_jitter < 1")

    @property
    def accept_target(self) -> float:
        return self.target_accept if self.target_accept is not None else DEFAULT_TARGET[self.sampler]

    @property
    def n_keep(self) -> int:
        return (self.n_iter - self.n_warmup) // self.thin
