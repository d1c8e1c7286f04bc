"""Binomially thinned Poisson autoregressions: simulation, moments, naive-fit consequences and
normal-approximation posterior reconstruction of true counts."""

__version__ = "0.1.0"
