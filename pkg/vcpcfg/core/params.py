"""Named parameter containers shared by the grammar and the encoders."""
from __future__ import annotations

from dataclasses import fields, replace
from typing import Callable, Dict, Iterator, Mapping, Tuple, TypeVar

import numpy as np

from vcpcfg.core.autodiff import Tape

G = TypeVar("G", bound="ParamGroup")


class ParamGroup:
    """
    Mixin for dataclasses whose fields are arrays or nested groups.

    The same class holds numpy arrays between steps and TapeValues while a
    sentence is being processed (see ``lift``).
    """

    def named(self, prefix: str = "") -> Iterator[Tuple[str, object]]:
        for f in fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            if isinstance(value, ParamGroup):
                yield from value.named(name)
            elif value is not None:
                yield name, value

    def map(self: G, fn: Callable[[str, object], object], prefix: str = "") -> G:
        changes = {}
        for f in fields(self):
            value = getattr(self, f.name)
            name = f"{prefix}.{f.name}" if prefix else f.name
            if isinstance(value, ParamGroup):
                changes[f.name] = value.map(fn, name)
            elif value is not None:
                changes[f.name] = fn(name, value)
        return replace(self, **changes)

    def lift(self: G, tape: Tape, prefix: str = "") -> G:
        """Put every array on ``tape`` as a named parameter leaf."""
        return self.map(lambda name, value: tape.param(name, value), prefix)

    def constants(self: G, tape: Tape, prefix: str = "") -> G:
        return self.map(lambda name, value: tape.constant(value), prefix)

    def load(self: G, values: Mapping[str, np.ndarray], prefix: str = "") -> G:
        """Same structure, arrays taken from ``values`` by name."""
        return self.map(lambda name, value: np.array(values[name], dtype=np.float64), prefix)

    def as_dict(self, prefix: str = "") -> Dict[str, np.ndarray]:
        return dict(self.named(prefix))


def xavier_uniform(rng: np.random.Generator, shape: Tuple[int, ...]) -> np.ndarray:
    """
    Glorot uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).

    Matrices are stored (out, in); leading axes of higher-rank shapes index
    independent matrices, and a vector counts as a single row.
    """
    if len(shape) == 1:
        fan_out, fan_in = 1, shape[0]
    else:
        fan_out, fan_in = shape[-2], shape[-1]
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)

