"""Shared tensor types for public plans, consensus iterates, duals and penalties.

Every public quantity exchanged during coordination is a dense tensor indexed
by (item, node, period). Values are stored flat in row-major order with the
item index outermost and the period index innermost, so entry ``(i, j, t)``
lives at ``(i * J + j) * T + t``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable

import numpy as np


class DimsMismatch(ValueError):
    """Raised when two tensors with different dimensions are combined."""


@dataclass(frozen=True)
class Dims:
    A: int
    J: int
    T: int

    def __post_init__(self):
        for name in ("A", "J", "T"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def size(self) -> int:
        return self.A * self.J * self.T

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.A, self.J, self.T)

    def flat_index(self, i: int, j: int, t: int) -> int:
        return (i * self.J + j) * self.T + t

    def to_list(self) -> list[int]:
        return [self.A, self.J, self.T]


_OPS: dict[str, Callable[[np.ndarray, np.ndarray], np.ndarray]] = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
}


class PlanTensor:
    """Immutable dense (item, node, period) tensor."""

    __slots__ = ("dims", "_values")

    def __init__(self, dims: Dims, values: Iterable[float] | np.ndarray):
        arr = np.array(values, dtype=float).reshape(-1)
        if arr.size != dims.size:
            raise DimsMismatch(f"expected {dims.size} values for dims {dims.to_list()}, got {arr.size}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("plan tensor values must be finite")
        arr.flags.writeable = False
        self.dims = dims
        self._values = arr

    @classmethod
    def zeros(cls, dims: Dims) -> "PlanTensor":
        return cls(dims, np.zeros(dims.size))

    @classmethod
    def full(cls, dims: Dims, value: float) -> "PlanTensor":
        return cls(dims, np.full(dims.size, float(value)))

    @property
    def values(self) -> np.ndarray:
        return self._values

    def as_array(self) -> np.ndarray:
        """Writable copy shaped ``(A, J, T)``."""
        return self._values.reshape(self.dims.shape).copy()

    def __getitem__(self, key):
        if isinstance(key, tuple):
            return float(self._values[self.dims.flat_index(*key)])
        return float(self._values[key])

    def __len__(self) -> int:
        return self.dims.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, PlanTensor):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self._values, other._values)

    def __hash__(self):
        return hash((self.dims, self._values.tobytes()))

    def __repr__(self) -> str:
        return f"PlanTensor(dims={self.dims.to_list()}, values={self._values.tolist()})"

    def __add__(self, other: "PlanTensor") -> "PlanTensor":
        return elementwise("add", self, other)

    def __sub__(self, other: "PlanTensor") -> "PlanTensor":
        return elementwise("sub", self, other)

    def __mul__(self, other: "PlanTensor") -> "PlanTensor":
        return elementwise("mul", self, other)

    def scale(self, factor: float) -> "PlanTensor":
        return PlanTensor(self.dims, self._values * factor)

    def to_json(self) -> dict:
        return {"dims": self.dims.to_list(), "values": [float(v) for v in self._values]}

    @classmethod
    def from_json(cls, obj: dict) -> "PlanTensor":
        return cls(Dims(*obj["dims"]), obj["values"])


def _check_same(a: PlanTensor, b: PlanTensor) -> None:
    if a.dims != b.dims:
        raise DimsMismatch(f"dims differ: {a.dims.to_list()} vs {b.dims.to_list()}")


def elementwise(op: str, a: PlanTensor, b: PlanTensor) -> PlanTensor:
    """Apply ``add``, ``sub`` or ``mul`` entry by entry."""
    _check_same(a, b)
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; expected one of {sorted(_OPS)}") from None
    return PlanTensor(a.dims, fn(a.values, b.values))


def norm2(a: PlanTensor) -> float:
    return float(np.linalg.norm(a.values))


def inner(a: PlanTensor, b: PlanTensor) -> float:
    _check_same(a, b)
    return float(np.dot(a.values, b.values))
