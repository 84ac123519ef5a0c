"""Core module initialization."""
from .interfaces import BaseNegativeSampler, BaseValidationCriterion

__all__ = ["BaseNegativeSampler", "BaseValidationCriterion"]
