"""Exponential separation of the length spectrum on a genus-2 hyperbolic
surface: spectrum enumeration, calibrated conformal bump perturbations,
geodesic relaxation, proximity audits, and windowed separation certificates.
"""

__version__ = "0.1.0"
