"""Localisation bounds and meta-learned multi-objective control for RIS-assisted URLLC links."""

__version__ = "0.1.0"
