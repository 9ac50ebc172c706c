"""Degenerate nonlocal operators: bracket checks, jump-SDE simulation,
covariance diagnostics and heat-kernel probes."""

__version__ = "0.1.0"
