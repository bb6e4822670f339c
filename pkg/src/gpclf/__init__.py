"""Learning Lyapunov-derivative uncertainty with GPs and min-norm GP-CLF-SOCP control."""

__version__ = "0.1.0"
