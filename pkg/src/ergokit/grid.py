"""Dense real-valued functions on Z_P^l and Z_P^l x X.

Values are stored as numpy arrays of shape ``(P,) * l`` (plus a trailing
axis of length ``|X|`` for randomized functions), so the flat row-major
order coincides with mixed-radix indexing of ``(v_1, ..., v_l)``.

All expectations are averages, never sums: the grid carries the uniform
probability measure and X carries its own weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import PreconditionError, ResourceGuardError, ShapeMismatchError

IDENTITY_TOL = 1e-12
ACCUMULATED_TOL = 1e-9

_memory_cap = 2**27


def memory_cap() -> int:
    return _memory_cap


def set_memory_cap(entries: int) -> int:
    """Set the maximum number of dense entries; returns the previous cap."""
    global _memory_cap
    if entries < 1:
        raise PreconditionError("memory cap must be positive")
    previous, _memory_cap = _memory_cap, int(entries)
    return previous


def check_entries(count: int, what: str = "array") -> None:
    if count > _memory_cap:
        raise ResourceGuardError(
            f"{what} needs {count} entries, above the cap of {_memory_cap}"
        )


@dataclass(frozen=True)
class FiniteProbabilitySpace:
    """A finite set {0, ..., size-1} with non-negative weights summing to 1."""

    weights: tuple

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 0:
            raise PreconditionError("probability space must be nonempty")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise PreconditionError("weights must be finite and non-negative")
        if abs(w.sum() - 1.0) > IDENTITY_TOL:
            raise PreconditionError(f"weights sum to {w.sum()!r}, not 1")
        object.__setattr__(self, "weights", tuple(float(x) for x in w))

    @classmethod
    def uniform(cls, size: int) -> "FiniteProbabilitySpace":
        if size < 1:
            raise PreconditionError("size must be positive")
        return cls(np.full(size, 1.0 / size))

    @property
    def size(self) -> int:
        return len(self.weights)

    def array(self) -> np.ndarray:
        return np.asarray(self.weights)

    def product(self, other: "FiniteProbabilitySpace") -> "FiniteProbabilitySpace":
        """Product space, indexed row-major as ``(x, y) -> x * other.size + y``."""
        return FiniteProbabilitySpace(np.outer(self.array(), other.array()).ravel())


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float64, copy=True, order="C")
    arr.flags.writeable = False
    return arr


class GridFunction:
    """A real function on Z_P^l.

    ``values`` may be given flat (length P**l) or already shaped. If
    ``bound`` is set, the function is declared bounded by it and this is
    checked on construction.
    """

    __slots__ = ("values", "P", "l", "bound")

    def __init__(self, values, P: int | None = None, l: int | None = None,
                 bound: float | None = None):
        arr = np.asarray(values, dtype=np.float64)
        if P is None or l is None:
            if arr.ndim == 0:
                raise PreconditionError("P and l are required for l = 0 functions")
            P = arr.shape[0] if P is None else P
            l = arr.ndim if l is None else l
        P, l = int(P), int(l)
        if P < 1 or l < 0:
            raise PreconditionError(f"invalid grid Z_{P}^{l}")
        check_entries(P**l, "grid function")
        if arr.size != P**l:
            raise ShapeMismatchError(f"expected {P**l} values for Z_{P}^{l}, got {arr.size}")
        arr = arr.reshape((P,) * l)
        _check_values(arr, bound)
        self.values = _freeze(arr)
        self.P = P
        self.l = l
        self.bound = bound

    space = None

    @property
    def grid_shape(self) -> tuple:
        return (self.P,) * self.l

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    @classmethod
    def constant(cls, c: float, P: int, l: int) -> "GridFunction":
        return cls(np.full((P,) * l, float(c)), P, l)

    @classmethod
    def indicator(cls, points, P: int, l: int) -> "GridFunction":
        arr = np.zeros((P,) * l)
        for p in points:
            arr[tuple(np.atleast_1d(p)) if l else ()] = 1.0
        return cls(arr, P, l)

    def with_values(self, values) -> "GridFunction":
        return GridFunction(values, self.P, self.l)

    def __call__(self, *v: int) -> float:
        return float(self.values[tuple(int(x) % self.P for x in v)])

    def __repr__(self) -> str:
        return f"GridFunction(P={self.P}, l={self.l})"


class RandomizedGridFunction:
    """A real function on Z_P^l x X for a finite weighted space X."""

    __slots__ = ("values", "P", "l", "space", "bound")

    def __init__(self, values, space: FiniteProbabilitySpace, P: int | None = None,
                 l: int | None = None, bound: float | None = None):
        arr = np.asarray(values, dtype=np.float64)
        nx = space.size
        if P is None or l is None:
            if arr.ndim < 2:
                raise PreconditionError("P and l are required when values are flat")
            P = arr.shape[0] if P is None else P
            l = arr.ndim - 1 if l is None else l
        P, l = int(P), int(l)
        if P < 1 or l < 0:
            raise PreconditionError(f"invalid grid Z_{P}^{l}")
        check_entries(P**l * nx, "randomized grid function")
        if arr.size != P**l * nx:
            raise ShapeMismatchError(
                f"expected {P**l * nx} values for Z_{P}^{l} x X(|X|={nx}), got {arr.size}"
            )
        arr = arr.reshape((P,) * l + (nx,))
        _check_values(arr, bound)
        self.values = _freeze(arr)
        self.P = P
        self.l = l
        self.space = space
        self.bound = bound

    @property
    def grid_shape(self) -> tuple:
        return (self.P,) * self.l

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def slice(self, x: int) -> GridFunction:
        return GridFunction(self.values[..., x], self.P, self.l)

    @classmethod
    def from_deterministic(cls, f: GridFunction,
                           space: FiniteProbabilitySpace | None = None) -> "RandomizedGridFunction":
        space = space or FiniteProbabilitySpace.uniform(1)
        arr = np.repeat(f.values[..., None], space.size, axis=-1)
        return cls(arr, space, f.P, f.l)

    def with_values(self, values) -> "RandomizedGridFunction":
        return RandomizedGridFunction(values, self.space, self.P, self.l)

    def __repr__(self) -> str:
        return f"RandomizedGridFunction(P={self.P}, l={self.l}, |X|={self.space.size})"


AnyGrid = Union[GridFunction, RandomizedGridFunction]


def _check_values(arr: np.ndarray, bound: float | None) -> None:
    if not np.all(np.isfinite(arr)):
        raise PreconditionError("grid function values must be finite")
    if bound is not None and arr.size and np.max(np.abs(arr)) > bound + IDENTITY_TOL:
        raise PreconditionError(f"values exceed the declared bound {bound}")


def measure_weights(f: AnyGrid) -> np.ndarray:
    """Per-entry probability weights broadcastable against ``f.values``."""
    grid_mass = 1.0 / (f.P**f.l)
    if f.space is None:
        return np.full((1,) * f.l, grid_mass)
    return f.space.array().reshape((1,) * f.l + (-1,)) * grid_mass


def expectation(f: AnyGrid) -> float:
    return float(np.sum(f.values * measure_weights(f)))


def same_domain(f: AnyGrid, g: AnyGrid) -> None:
    if (f.P, f.l) != (g.P, g.l):
        raise ShapeMismatchError(f"domains differ: Z_{f.P}^{f.l} vs Z_{g.P}^{g.l}")
    if (f.space is None) != (g.space is None):
        raise ShapeMismatchError("cannot mix deterministic and randomized functions")
    if f.space is not None and f.space != g.space:
        raise ShapeMismatchError("functions live over different spaces X")


def sigma_sum(v: Sequence[int], P: int) -> int:
    """The sum of the coordinates of v, reduced mod P (0 for the empty tuple)."""
    return int(sum(int(x) for x in v)) % P


def inner_product(f: AnyGrid, g: AnyGrid) -> float:
    same_domain(f, g)
    return float(np.sum(f.values * g.values * measure_weights(f)))


def lp_norm(f: AnyGrid, p: float = 2) -> float:
    if p == math.inf or p == "inf":
        return float(np.max(np.abs(f.values))) if f.values.size else 0.0
    if p not in (1, 2):
        raise PreconditionError("p must be 1, 2 or inf")
    w = measure_weights(f)
    if p == 1:
        return float(np.sum(np.abs(f.values) * w))
    return math.sqrt(float(np.sum(f.values**2 * w)))


def shift(f: AnyGrid, w: Sequence[int]) -> AnyGrid:
    """Return v -> f(v + w), arithmetic mod P."""
    w = tuple(int(x) for x in w)
    if len(w) != f.l:
        raise ShapeMismatchError(f"shift has {len(w)} coordinates, grid has {f.l}")
    shifted = np.roll(f.values, tuple(-x for x in w), axis=tuple(range(f.l))) if f.l else f.values
    return f.with_values(shifted)


def random_grid_function(rng: np.random.Generator, P: int, l: int, low: float = -1.0,
                         high: float = 1.0, space: FiniteProbabilitySpace | None = None) -> AnyGrid:
    """Uniform random values; convenience for experiments and tests."""
    if space is None:
        return GridFunction(rng.uniform(low, high, size=(P,) * l), P, l)
    return RandomizedGridFunction(rng.uniform(low, high, size=(P,) * l + (space.size,)),
                                  space, P, l)
