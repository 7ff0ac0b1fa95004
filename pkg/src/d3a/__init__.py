"""Multi-source domain adaptation with dynamic discrepancy weighting and active
boundary sample selection, on a small numpy MLP."""

__version__ = "0.1.0"
