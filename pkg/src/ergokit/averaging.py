"""Averaging operators on Z_P^l: the multiple average A_N, the sliding mean
S_N and the diagonally averaged projection Delta_N, together with the
hypergraph lifting that turns A_N into Delta_N of edge-measurable functions.

Throughout, [N] = {0, ..., N-1} and all index arithmetic wraps mod P.
"""

from __future__ import annotations

import itertools
from typing import Iterable, Sequence

import numpy as np

from . import kernels, oracles
from .errors import MeasurabilityError, PreconditionError, ShapeMismatchError, InvariantViolation
from .grid import (
    IDENTITY_TOL,
    AnyGrid,
    FiniteProbabilitySpace,
    GridFunction,
    RandomizedGridFunction,
    check_entries,
)


def _edge(e: Iterable[int], n_coords: int) -> tuple:
    e = tuple(sorted(set(int(i) for i in e)))
    if any(i < 1 or i > n_coords for i in e):
        raise PreconditionError(f"edge {e} is not a subset of {{1, ..., {n_coords}}}")
    return e


class EdgeFunction:
    """An e-measurable function on Z_P^n x X, stored compactly on Z_P^e x X.

    ``compact`` has one axis per element of ``edge`` (increasing order),
    plus a trailing X axis when ``space`` is given. Edges are 1-based.
    """

    __slots__ = ("compact", "edge", "n_coords", "P", "space")

    def __init__(self, compact, edge: Iterable[int], n_coords: int, P: int,
                 space: FiniteProbabilitySpace | None = None):
        self.edge = _edge(edge, n_coords)
        self.n_coords = int(n_coords)
        self.P = int(P)
        self.space = space
        shape = (self.P,) * len(self.edge) + ((space.size,) if space is not None else ())
        arr = np.asarray(compact, dtype=np.float64)
        if arr.size != int(np.prod(shape)):
            raise ShapeMismatchError(f"compact values need shape {shape}, got {arr.shape}")
        arr = np.array(arr.reshape(shape), order="C")
        if not np.all(np.isfinite(arr)):
            raise PreconditionError("edge function values must be finite")
        arr.flags.writeable = False
        self.compact = arr

    @classmethod
    def from_dense(cls, f: AnyGrid, edge: Iterable[int], check: bool = True) -> "EdgeFunction":
        """Compress a dense function known to be e-measurable."""
        e = _edge(edge, f.l)
        other = tuple(i - 1 for i in range(1, f.l + 1) if i not in e)
        compact = f.values.mean(axis=other) if other else f.values
        ef = cls(compact, e, f.l, f.P, f.space)
        if check and np.max(np.abs(ef.expand() - f.values), initial=0.0) > IDENTITY_TOL:
            raise MeasurabilityError(f"function is not {set(e)}-measurable")
        return ef

    @classmethod
    def constant(cls, c: float, edge, n_coords: int, P: int,
                 space: FiniteProbabilitySpace | None = None) -> "EdgeFunction":
        e = _edge(edge, n_coords)
        shape = (P,) * len(e) + ((space.size,) if space is not None else ())
        return cls(np.full(shape, float(c)), e, n_coords, P, space)

    def expand(self) -> np.ndarray:
        """Read-only broadcast view on the full grid (no copy)."""
        shape = [1] * self.n_coords
        for i in self.edge:
            shape[i - 1] = self.P
        if self.space is not None:
            shape.append(self.space.size)
        full = (self.P,) * self.n_coords + ((self.space.size,) if self.space is not None else ())
        return np.broadcast_to(self.compact.reshape(shape), full)

    def dense(self) -> AnyGrid:
        check_entries(self.P**self.n_coords * (self.space.size if self.space else 1), "dense edge function")
        if self.space is None:
            return GridFunction(self.expand(), self.P, self.n_coords)
        return RandomizedGridFunction(self.expand(), self.space, self.P, self.n_coords)

    @property
    def base(self) -> AnyGrid:
        return self.dense()

    def with_compact(self, compact) -> "EdgeFunction":
        return EdgeFunction(compact, self.edge, self.n_coords, self.P, self.space)

    def __repr__(self) -> str:
        return f"EdgeFunction(edge={set(self.edge)}, P={self.P}, n={self.n_coords})"


def is_measurable(f: AnyGrid, edge: Iterable[int], tol: float = IDENTITY_TOL) -> bool:
    """Exact e-measurability test: f equals its average over the coordinates outside e."""
    e = _edge(edge, f.l)
    other = tuple(i - 1 for i in range(1, f.l + 1) if i not in e)
    if not other:
        return True
    proj = f.values.mean(axis=other, keepdims=True)
    return bool(np.max(np.abs(f.values - proj)) <= tol)


def resampling_check(f: AnyGrid, edge: Iterable[int], rng: np.random.Generator,
                     trials: int = 256, tol: float = IDENTITY_TOL) -> bool:
    """Randomized e-measurability test by resampling coordinates outside e."""
    e = set(_edge(edge, f.l))
    for _ in range(trials):
        v = rng.integers(0, f.P, size=f.l)
        w = v.copy()
        for i in range(1, f.l + 1):
            if i not in e:
                w[i - 1] = rng.integers(0, f.P)
        if np.max(np.abs(f.values[tuple(v)] - f.values[tuple(w)]), initial=0.0) > tol:
            return False
    return True


# ---------------------------------------------------------------------------
# A_N, S_N, Delta_N


def _require_N(N: int) -> int:
    N = int(N)
    if N < 1:
        raise PreconditionError("N must be a positive integer")
    return N


def multiple_average(fs: Sequence[GridFunction], N: int, oracle: bool = False) -> GridFunction:
    """A_N(f_1, ..., f_l)(a) = E_{n in [N]} prod_i f_i(a + n e_i)."""
    N = _require_N(N)
    if not fs:
        raise PreconditionError("need at least one function")
    P, l = fs[0].P, fs[0].l
    if len(fs) != l:
        raise ShapeMismatchError(f"A_N on Z_P^{l} takes {l} functions, got {len(fs)}")
    for f in fs:
        if (f.P, f.l) != (P, l) or f.space is not None:
            raise ShapeMismatchError("all functions must live on the same Z_P^l")
    if oracle:
        return GridFunction(oracles.multiple_average([f.values for f in fs], P, N), P, l)
    stack = np.stack([f.values for f in fs])
    return GridFunction(kernels.multiple_average(stack, N), P, l)


def multiple_average_sweep(fs: Sequence[GridFunction], Ns: Iterable[int]):
    """Yield (N, A_N) for increasing N, reusing the running sum between steps."""
    P, l = fs[0].P, fs[0].l
    Ns = sorted(set(_require_N(N) for N in Ns))
    acc = np.zeros((P,) * l)
    n_done = 0
    for N in Ns:
        for n in range(n_done, N):
            term = np.ones((P,) * l)
            for i, f in enumerate(fs):
                term *= np.roll(f.values, -(n % P), axis=i)
            acc += term
        n_done = N
        yield N, GridFunction(acc / N, P, l)


def sliding_average(g: AnyGrid, N: int, oracle: bool = False) -> AnyGrid:
    """S_N g(v) = E_{n in [N]} g(v + n) on Z_P (with an optional X axis)."""
    N = _require_N(N)
    if g.l != 1:
        raise ShapeMismatchError("S_N acts on functions of one grid variable")
    if oracle:
        return g.with_values(oracles.sliding_average(np.asarray(g.values), N))
    rows = g.values.T if g.space is not None else g.values[None, :]
    out = kernels.window_sums(rows, N) / N
    return g.with_values(out.T if g.space is not None else out[0])


def _fibers(values: np.ndarray, l: int, P: int, has_x: bool):
    """Rearrange (P,)*(l+1) [+X] into rows of fibres along coordinate l+1."""
    if has_x:
        nx = values.shape[-1]
        arr = np.moveaxis(values, -1, l)  # (P,)*l, X, P
        fib = arr.reshape(-1, P)
        sig = np.repeat(_sigma_grid(P, l).ravel(), nx)
        return fib, sig, (P,) * l + (nx,)
    return values.reshape(-1, P), _sigma_grid(P, l).ravel(), (P,) * l


def _sigma_grid(P: int, l: int) -> np.ndarray:
    if l == 0:
        return np.zeros(())
    return np.sum(np.indices((P,) * l), axis=0) % P


def diagonal_projection(f: AnyGrid, N: int, oracle: bool = False) -> AnyGrid:
    """Delta_N f(v, x) = E_{n in [N]} f((v, -Sigma(v) - n), x) on Z_P^l x X."""
    N = _require_N(N)
    if isinstance(f, EdgeFunction):
        return diagonal_projection_product([f], N)
    if f.l < 1:
        raise ShapeMismatchError("Delta_N needs at least one grid coordinate")
    l, P = f.l - 1, f.P
    has_x = f.space is not None
    if oracle:
        out = oracles.diagonal_projection(np.asarray(f.values), P, l, N)
    else:
        fib, sig, shape = _fibers(f.values, l, P, has_x)
        out = kernels.diag_project(fib, sig, N).reshape(shape)
    if has_x:
        return RandomizedGridFunction(out, f.space, P, l)
    return GridFunction(out, P, l)


def diagonal_projection_product(edge_fns: Sequence[EdgeFunction], N: int,
                                chunk_entries: int = 1 << 20) -> AnyGrid:
    """Delta_N of a product of edge functions without materialising the product.

    The full product is formed one slab (along the first coordinate) at a time.
    """
    N = _require_N(N)
    if not edge_fns:
        raise PreconditionError("need at least one edge function")
    P, n = edge_fns[0].P, edge_fns[0].n_coords
    space = edge_fns[0].space
    for ef in edge_fns:
        if (ef.P, ef.n_coords) != (P, n) or ef.space != space:
            raise ShapeMismatchError("edge functions must share P, dimension and X")
    l = n - 1
    if l < 0:
        raise ShapeMismatchError("Delta_N needs at least one grid coordinate")
    nx = space.size if space is not None else 1
    views = [ef.expand() for ef in edge_fns]
    if l == 0:
        prod = np.prod(np.stack([np.asarray(v) for v in views]), axis=0)
        fib, sig, shape = _fibers(prod, 0, P, space is not None)
        out = kernels.diag_project(fib, sig, N).reshape(shape)
    else:
        slab = max(1, chunk_entries // (P**l * nx))
        out = np.empty((P,) * l + ((nx,) if space is not None else ()))
        sig_full = _sigma_grid(P, l)
        for start in range(0, P, slab):
            stop = min(P, start + slab)
            prod = np.ones((stop - start,) + (P,) * l + ((nx,) if space is not None else ()))
            for v in views:
                prod *= v[start:stop]
            if space is not None:
                fib = np.moveaxis(prod, -1, l).reshape(-1, P)
                sig = np.repeat(sig_full[start:stop].ravel(), nx)
            else:
                fib = prod.reshape(-1, P)
                sig = sig_full[start:stop].ravel()
            out[start:stop] = kernels.diag_project(fib, sig, N).reshape(out[start:stop].shape)
    if space is not None:
        return RandomizedGridFunction(out, space, P, l)
    return GridFunction(out, P, l)


# ---------------------------------------------------------------------------
# Lifting and the module identity


def lift_functions(fs: Sequence[GridFunction]) -> list[EdgeFunction]:
    """Lift f_1..f_l on Z_P^l to g_{[l+1] minus {i}} on Z_P^{l+1}.

    g_{[l+1] minus {i}}(v) = f_i(v_1, ..., v_{i-1}, -sum_{j != i} v_j, v_{i+1}, ..., v_l),
    so that A_N(f_1, ..., f_l) = Delta_N(prod_i g_{[l+1] minus {i}}).
    """
    if not fs:
        raise PreconditionError("need at least one function")
    P, l = fs[0].P, fs[0].l
    if len(fs) != l:
        raise ShapeMismatchError(f"expected {l} functions on Z_P^{l}, got {len(fs)}")
    check_entries(P ** (l + 1), "lifted functions")
    idx = np.indices((P,) * l)  # coordinates of the compact domain, e = [l+1] minus {i}
    lifts = []
    for i in range(1, l + 1):
        f = fs[i - 1]
        if (f.P, f.l) != (P, l):
            raise ShapeMismatchError("all functions must live on the same Z_P^l")
        e = [j for j in range(1, l + 2) if j != i]
        coords = {j: idx[k] for k, j in enumerate(e)}
        minus_sum = (-sum(coords.values())) % P
        args = tuple(minus_sum if k == i else coords[k] for k in range(1, l + 1))
        lifts.append(EdgeFunction(f.values[args], e, l + 1, P))
    return lifts


def module_multiply(g_full, h: AnyGrid, N: int) -> AnyGrid:
    """Delta_N(g h) for a {1..l}-measurable g, checked against g Delta_N(h)."""
    N = _require_N(N)
    l = h.l - 1
    target = tuple(range(1, l + 1))
    if isinstance(g_full, EdgeFunction):
        if g_full.edge != target:
            if not set(g_full.edge) <= set(target):
                raise MeasurabilityError(f"g must be {set(target)}-measurable, has edge {set(g_full.edge)}")
        ef = g_full
    else:
        ef = EdgeFunction.from_dense(g_full, target)
    if ef.P != h.P or ef.n_coords != h.l:
        raise ShapeMismatchError("g and h must live on the same grid")
    g_vals = np.asarray(ef.expand())
    if h.space is not None and g_vals.ndim == h.l:
        g_vals = g_vals[..., None]
    lhs = diagonal_projection(h.with_values(g_vals * h.values), N)
    g_base = g_vals[..., 0, :] if h.space is not None else g_vals[..., 0]
    rhs = g_base * diagonal_projection(h, N).values
    if np.max(np.abs(lhs.values - rhs), initial=0.0) > IDENTITY_TOL:
        raise InvariantViolation("module identity Delta_N(g h) = g Delta_N(h) failed")
    return lhs


def coarse_fine_gap(g: GridFunction, M: int, N: int) -> float:
    """||S_M S_N g - S_N g||_2, the quantity behind the coarse/fine heuristic."""
    sn = sliding_average(g, N)
    smn = sliding_average(sn, M)
    return float(np.sqrt(np.mean((smn.values - sn.values) ** 2)))


def all_edges(n_coords: int, size: int) -> list[tuple]:
    return [tuple(c) for c in itertools.combinations(range(1, n_coords + 1), size)]
