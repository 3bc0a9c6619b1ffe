"""Commuting torus maps and orbit sampling onto Z_P^l.

Torus coordinates are 64-bit fixed-point fractions: the integer x stands
for x / 2^64 and addition wraps mod 2^64. Compositions of the maps are
therefore exact and commuting maps commute bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import PreconditionError, ShapeMismatchError
from .grid import GridFunction, check_entries

SCALE = 1 << 64
NAMED_ANGLES = {
    "sqrt2-1": math.sqrt(2) - 1,
    "golden": (math.sqrt(5) - 1) / 2,
    "phi-1": (math.sqrt(5) - 1) / 2,
    "sqrt3-1": math.sqrt(3) - 1,
    "e-2": math.e - 2,
}


def to_fixed(alpha) -> int:
    """The fixed-point representative of alpha mod 1 (nearest multiple of 2^-64)."""
    if isinstance(alpha, str):
        key = alpha.strip().lower()
        alpha = NAMED_ANGLES[key] if key in NAMED_ANGLES else float(alpha)
    frac = Fraction(alpha) % 1
    return int(round(frac * SCALE)) % SCALE


def to_float(x: np.ndarray) -> np.ndarray:
    """Fixed-point values as floats in [0, 1), exactly rounded down to 53 bits."""
    return (np.asarray(x, dtype=np.uint64) >> np.uint64(11)).astype(np.float64) * 2.0**-53


def _mul(n: np.ndarray, a: int) -> np.ndarray:
    """n * a mod 2^64 for integer arrays n (any sign)."""
    return (np.asarray(n).astype(np.int64).astype(np.uint64) * np.uint64(a))


@dataclass(frozen=True)
class Observable:
    """f(state) in [-1, 1]: ``cos`` of a coordinate or an ``indicator`` of [a, b)."""

    kind: str
    coord: int = 0
    a: float = 0.0
    b: float = 0.5

    def __post_init__(self):
        if self.kind not in ("cos", "indicator"):
            raise PreconditionError(f"unknown observable {self.kind!r}")
        if self.kind == "indicator" and not 0 <= self.a <= self.b <= 1:
            raise PreconditionError("indicator needs 0 <= a <= b <= 1")

    def __call__(self, states: np.ndarray) -> np.ndarray:
        x = to_float(states[..., self.coord])
        if self.kind == "cos":
            return np.cos(2 * np.pi * x)
        return ((x >= self.a) & (x < self.b)).astype(float)


class DynamicalSystem:
    """l commuting maps on a torus with fixed-point states.

    ``rotation``: T_i x = x + alpha_i on T^r (alpha_i has r components).
    ``skew``: T_1(x, y) = (x + alpha, y + x) and optionally
    T_2(x, y) = (x, y + beta), which commutes with T_1.
    ``product``: coordinatewise product of systems with the same l.
    """

    def __init__(self, kind: str, dim: int, l: int, params: dict, parts: tuple = ()):
        self.kind, self.dim, self.l, self.params, self.parts = kind, dim, l, params, parts

    @classmethod
    def rotation(cls, angles) -> "DynamicalSystem":
        """``angles[i]`` is the angle vector of generator i (a scalar for T^1)."""
        rows = [np.atleast_1d(np.asarray(a, dtype=object)) for a in angles]
        if not rows:
            raise PreconditionError("need at least one generator")
        r = len(rows[0])
        if any(len(x) != r for x in rows):
            raise ShapeMismatchError("all angle vectors need the same dimension")
        fixed = tuple(tuple(to_fixed(a) for a in row) for row in rows)
        return cls("rotation", r, len(rows), {"angles": fixed})

    @classmethod
    def skew(cls, alpha, beta=None) -> "DynamicalSystem":
        params = {"alpha": to_fixed(alpha)}
        l = 1
        if beta is not None:
            params["beta"] = to_fixed(beta)
            l = 2
        return cls("skew", 2, l, params)

    @classmethod
    def product(cls, first: "DynamicalSystem", second: "DynamicalSystem") -> "DynamicalSystem":
        if first.l != second.l:
            raise ShapeMismatchError("product systems need the same number of maps")
        return cls("product", first.dim + second.dim, first.l, {}, (first, second))

    @classmethod
    def identity(cls, l: int, dim: int = 1) -> "DynamicalSystem":
        return cls.rotation([[0.0] * dim for _ in range(l)])

    def initial_state(self, x0) -> np.ndarray:
        """Real coordinates in [0, 1), or a uint64 array already in fixed point."""
        if isinstance(x0, np.ndarray) and x0.dtype == np.uint64:
            vals = x0.ravel()
        else:
            vals = np.array([to_fixed(v) for v in np.atleast_1d(np.asarray(x0, dtype=object))],
                            dtype=np.uint64)
        if len(vals) != self.dim:
            raise ShapeMismatchError(f"state needs {self.dim} coordinates")
        return vals

    def act(self, state: np.ndarray, powers: np.ndarray) -> np.ndarray:
        """T^v state for integer exponent vectors ``powers`` of shape (..., l)."""
        powers = np.asarray(powers, dtype=np.int64)
        if powers.shape[-1] != self.l:
            raise ShapeMismatchError(f"exponents need {self.l} components")
        state = np.asarray(state, dtype=np.uint64)
        with np.errstate(over="ignore"):
            if self.kind == "rotation":
                out = np.broadcast_to(state, powers.shape[:-1] + (self.dim,)).copy()
                for i, row in enumerate(self.params["angles"]):
                    for c, a in enumerate(row):
                        out[..., c] += _mul(powers[..., i], a)
                return out
            if self.kind == "skew":
                return self._skew(state, powers)
            a, b = self.parts
            return np.concatenate([a.act(state[: a.dim], powers), b.act(state[a.dim:], powers)], axis=-1)

    def _skew(self, state, powers):
        n = powers[..., 0]
        if np.any(n < 0):
            raise PreconditionError("skew-shift powers are implemented for n >= 0")
        alpha = self.params["alpha"]
        x = np.broadcast_to(state[0], n.shape).astype(np.uint64)
        y = np.broadcast_to(state[1], n.shape).astype(np.uint64)
        nu = n.astype(np.uint64)
        # T_1^n (x, y) = (x + n alpha, y + n x + n(n-1)/2 alpha), all mod 2^64
        tri = np.where(nu % np.uint64(2) == 0, (nu // np.uint64(2)) * (nu - np.uint64(1)),
                       nu * ((nu - np.uint64(1)) // np.uint64(2)))
        new_x = x + nu * np.uint64(alpha)
        new_y = y + nu * x + tri * np.uint64(alpha)
        if self.l == 2:
            new_y = new_y + _mul(powers[..., 1], self.params["beta"])
        return np.stack([new_x, new_y], axis=-1)

    def step(self, state: np.ndarray, i: int) -> np.ndarray:
        """Apply the single map T_i (0-based)."""
        e = np.zeros(self.l, dtype=np.int64)
        e[i] = 1
        return self.act(state, e)

    def describe(self) -> dict:
        if self.kind == "product":
            return {"kind": "product", "parts": [p.describe() for p in self.parts]}
        return {"kind": self.kind, "l": self.l, "dim": self.dim,
                "params": {k: (v if not isinstance(v, tuple) else [list(r) for r in v])
                           for k, v in self.params.items()}}


class OrbitSample(list):
    """The sampled functions g_1..g_l with provenance in ``meta``."""

    meta: dict


def orbit_sample(system: DynamicalSystem, x0, P: int,
                 observables: Sequence[Observable] | None = None) -> OrbitSample:
    """g_i(v) = f_i(T^v x0) for v in [P]^l, read as functions on Z_P^l.

    Identifying [P] with Z_P makes each g_i jump across the wrap, a
    deliberate truncation artifact recorded in the metadata.
    """
    if P < 1:
        raise PreconditionError("P must be positive")
    l = system.l
    check_entries(P**l * system.dim, "orbit sample")
    obs = list(observables) if observables is not None else [Observable("cos", 0)] * l
    if len(obs) != l:
        raise ShapeMismatchError(f"need {l} observables, got {len(obs)}")
    state = system.initial_state(x0)
    powers = np.moveaxis(np.indices((P,) * l), 0, -1)
    states = system.act(state, powers)
    out = OrbitSample(GridFunction(f(states), P, l) for f in obs)
    out.meta = {"system": system.describe(), "P": P,
                "x0": [int(s) for s in state], "observables": [vars(f).copy() for f in obs],
                "wraparound": True}
    return out
