"""Visually grounded compound PCFG induction."""
__version__ = "0.1.0"
