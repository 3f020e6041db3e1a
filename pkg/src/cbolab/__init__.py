"""cbolab: consensus-based optimization dynamics and convergence diagnostics."""

__version__ = "0.1.0"
