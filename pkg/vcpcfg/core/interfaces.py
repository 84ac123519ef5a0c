"""
Abstract base classes for the pluggable parts of training.
Small, focused interfaces: one for choosing contrastive negatives, one for the
per-epoch validation criterion.
"""
from abc import ABC, abstractmethod
from typing import Any, Sequence


class BaseNegativeSampler(ABC):
    """Chooses which other batch example supplies the negatives for example ``i``."""

    @abstractmethod
    def pick(self, batch_size: int, i: int) -> int:
        """
        Pick a negative source.

        Args:
            batch_size: Number of examples in the batch (at least 2).
            i: Index of the positive example.

        Returns:
            Index of another example in the same batch.
        """
        pass


class BaseValidationCriterion(ABC):
    """Scores a model on held-out data; lower is better."""

    name: str = "criterion"

    @abstractmethod
    def evaluate(self, model: Any, examples: Sequence[Any]) -> float:
        """
        Compute the criterion.

        Args:
            model: Current model parameters.
            examples: Validation examples.

        Returns:
            The criterion value (lower is better).
        """
        pass
