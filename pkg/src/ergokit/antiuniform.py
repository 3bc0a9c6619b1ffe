"""Basic anti-uniform functions and exhaustive correlation searches.

A basic {1}-anti-uniform function of scale M on Z_P is
``phi(v) = E_{n in [M]} b(v - n)``; the e-version on Z_P^{l+1} is
``phi(v) = E_{m in [M]} prod_{i in e} b_i(v_{e minus i}, Sigma(v_e) + m)``.
Blocks ``b_i`` are stored as arrays indexed by the coordinates of e
without i (increasing order) followed by the diagonal argument.

The searches return the best witness by exhaustive argmax. Whatever they
return has its inner product recomputed from the realized function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from . import kernels
from .averaging import EdgeFunction, _edge, diagonal_projection_product, sliding_average
from .errors import InvariantViolation, PreconditionError, ShapeMismatchError
from .grid import IDENTITY_TOL, GridFunction, check_entries

TIE_TOL = 1e-12
VERIFY_TOL = 1e-9


def _check_bounded(arr: np.ndarray, what: str) -> None:
    if arr.size and np.max(np.abs(arr)) > 1 + IDENTITY_TOL:
        raise PreconditionError(f"{what} must take values in [-1, 1]")


class AntiUniform:
    """A basic anti-uniform function together with its generating data."""

    __slots__ = ("edge", "M", "blocks", "P", "n_coords", "_compact")

    def __init__(self, edge, M: int, blocks: Mapping[int, np.ndarray], P: int, n_coords: int):
        self.edge = _edge(edge, n_coords)
        if not self.edge:
            raise PreconditionError("an anti-uniform function needs a nonempty edge")
        if int(M) < 1:
            raise PreconditionError("scale M must be a positive integer")
        self.M, self.P, self.n_coords = int(M), int(P), int(n_coords)
        d = len(self.edge)
        frozen = {}
        for i in self.edge:
            if i not in blocks:
                raise PreconditionError(f"missing block b_{i}")
            b = np.array(blocks[i], dtype=np.float64)
            if b.shape != (self.P,) * d:
                raise ShapeMismatchError(f"block b_{i} needs shape {(self.P,) * d}, got {b.shape}")
            _check_bounded(b, f"block b_{i}")
            b.flags.writeable = False
            frozen[i] = b
        self.blocks = frozen
        self._compact = None

    @property
    def is_one_dimensional(self) -> bool:
        return self.n_coords == 1

    def compact(self) -> np.ndarray:
        """Values on Z_P^e (the function is e-measurable)."""
        if self._compact is None:
            self._compact = _realize(self)
            self._compact.flags.writeable = False
        return self._compact

    def edge_function(self) -> EdgeFunction:
        return EdgeFunction(self.compact(), self.edge, self.n_coords, self.P)

    @property
    def realized(self) -> GridFunction:
        check_entries(self.P**self.n_coords, "realized anti-uniform function")
        return self.edge_function().dense()

    def __repr__(self) -> str:
        return f"AntiUniform(edge={set(self.edge)}, M={self.M}, P={self.P}, n={self.n_coords})"


def _realize(phi: AntiUniform) -> np.ndarray:
    P, M, e = phi.P, phi.M, phi.edge
    if phi.is_one_dimensional:
        # E_{n in [M]} b(v - n) = (window sum of b starting at v - M + 1) / M
        ws = kernels.window_sums(phi.blocks[1][None, :], M)[0]
        return np.roll(ws, M - 1) / M
    d = len(e)
    check_entries(P ** (d + 1), "anti-uniform realization")
    idx = np.indices((P,) * d)
    # prod_i b_i(v_{e minus i}, t) on Z_P^e x Z_P, then a window mean in t read at Sigma(v_e)
    prod = np.ones((P,) * d + (P,))
    for k, i in enumerate(e):
        rest = tuple(idx[j][..., None] for j in range(d) if j != k)
        prod *= phi.blocks[i][rest + (np.arange(P),)]
    ws = kernels.window_sums(prod.reshape(-1, P), M).reshape(prod.shape) / M
    sig = (np.sum(idx, axis=0) % P)[..., None]
    return np.take_along_axis(ws, sig, axis=-1)[..., 0]


def basic_antiuniform_1(b, M: int) -> AntiUniform:
    """phi(v) = E_{n in [M]} b(v - n) for b: Z_P -> [-1, 1]."""
    arr = np.asarray(b.values if isinstance(b, GridFunction) else b, dtype=float)
    if arr.ndim != 1:
        raise ShapeMismatchError("b must be a function on Z_P")
    return AntiUniform((1,), M, {1: arr}, arr.shape[0], 1)


def basic_antiuniform_e(edge, blocks: Mapping[int, np.ndarray], M: int, P: int,
                        n_coords: int) -> AntiUniform:
    e = _edge(edge, n_coords)
    if n_coords not in e:
        raise PreconditionError(f"edge must contain the last coordinate {n_coords}")
    if n_coords == 1:
        raise PreconditionError("use basic_antiuniform_1 on Z_P")
    return AntiUniform(e, M, blocks, P, n_coords)


def lipschitz_defect(phi: AntiUniform) -> float:
    """max over v and |n| <= M of |phi(v+n) - phi(v)| - 2|n|/M (non-positive when the bound holds)."""
    if not phi.is_one_dimensional:
        raise PreconditionError("the Lipschitz bound concerns scale-M functions on Z_P")
    vals = phi.compact()
    worst = -math.inf
    for n in range(-phi.M, phi.M + 1):
        gap = np.max(np.abs(np.roll(vals, -n) - vals))
        worst = max(worst, float(gap) - 2 * abs(n) / phi.M)
    return worst


@dataclass
class Witness:
    """A found anti-uniform function and its independently verified correlation."""

    phi: AntiUniform
    correlation: float
    location: tuple
    search_value: float
    uniformity_norm: float
    meta: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.phi, self.correlation))


def _require_window(M: int, N: int, eps: float, constant: float) -> None:
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    if int(M) < 1 or int(N) < 1:
        raise PreconditionError("M and N must be positive integers")
    if N < constant * M / eps**2:
        raise PreconditionError(f"need N >= {constant:g} M / eps^2 = {constant * M / eps**2:.6g}, got N = {N}")


def _pick(scores: np.ndarray) -> int:
    """Index of the largest |score|, lowest index among ties within TIE_TOL."""
    mag = np.abs(scores)
    best = mag.max()
    return int(np.flatnonzero(mag >= best - TIE_TOL)[0])


def _shift_scores(g: np.ndarray, h: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    P = g.shape[0]
    if shifts.size * P > (1 << 24):
        full = np.fft.irfft(np.conj(np.fft.rfft(g)) * np.fft.rfft(h), n=P) / P
        return full[shifts % P]
    return kernels.shift_correlations(g, h, shifts)


def correlate_search_1(g, M: int, N: int, eps: float, *, window_constant: float = 10.0,
                       sample: int | None = None, seed: int | None = None,
                       strict: bool = True) -> Witness | None:
    """Find phi of scale M with |<g, phi>| >= eps^2/2 when ||S_N g||_2 >= eps.

    The candidates are phi_s(v) = E_{m in [M]} g(v + s + m) for shifts
    s = n' - n with n, n' in [N]; they are stored in the backward
    orientation with block b(w) = g(w + s + M - 1). Returns None when the
    uniformity norm is below eps and no candidate reaches eps^2/2.
    ``sample`` scores only that many random shifts (completeness is then
    probabilistic and a miss is reported as None, not as a violation).
    With ``strict=False`` a miss despite a large norm also returns None;
    callers running below the guaranteed window constant use this.
    """
    if not isinstance(g, GridFunction) or g.l != 1:
        raise ShapeMismatchError("g must be a deterministic function on Z_P")
    _check_bounded(g.values, "g")
    M, N = int(M), int(N)
    _require_window(M, N, eps, window_constant)
    P = g.P
    vals = np.asarray(g.values)
    norm = float(np.sqrt(np.mean(sliding_average(g, N).values ** 2)))
    sm = sliding_average(g, M).values

    shifts = np.arange(-(N - 1), N, dtype=np.int64)
    _, first = np.unique(shifts % P, return_index=True)
    shifts = shifts[np.sort(first)]
    if sample is not None and sample < shifts.size:
        pick = np.random.default_rng(seed).choice(shifts.size, size=sample, replace=False)
        shifts = shifts[np.sort(pick)]
    scores = _shift_scores(vals, sm, shifts)
    k = _pick(scores)
    s, best = int(shifts[k]), float(scores[k])

    threshold = eps**2 / 2
    if abs(best) < threshold:
        if norm >= eps and sample is None and strict:
            raise InvariantViolation(
                f"||S_N g|| = {norm:.6g} >= eps but the best correlation is {best:.6g} < eps^2/2")
        return None
    phi = basic_antiuniform_1(np.roll(vals, -(s + M - 1)), M)
    verified = float(np.mean(vals * phi.compact()))
    if abs(verified - best) > VERIFY_TOL:
        raise InvariantViolation(f"search value {best!r} disagrees with direct evaluation {verified!r}")
    return Witness(phi, verified, (s,), best, norm, {"shifts_scored": int(shifts.size)})


# ---------------------------------------------------------------------------
# Hypergraph version


def hyperedges(l: int, d: int) -> list[tuple]:
    """All e in {1..l+1} with |e| = d and l+1 in e."""
    import itertools
    return [tuple(sorted(c + (l + 1,))) for c in itertools.combinations(range(1, l + 1), d - 1)]


def _validate_family(g_map: Mapping[tuple, EdgeFunction]) -> tuple[int, int]:
    if not g_map:
        raise PreconditionError("empty family of edge functions")
    first = next(iter(g_map.values()))
    P, n = first.P, first.n_coords
    for e, ge in g_map.items():
        if not isinstance(ge, EdgeFunction):
            raise PreconditionError("family members must be EdgeFunctions")
        if (ge.P, ge.n_coords) != (P, n):
            raise ShapeMismatchError("edge functions must share P and dimension")
        if ge.space is not None:
            raise PreconditionError("the hypergraph search works on deterministic functions")
        if tuple(ge.edge) != _edge(e, n):
            raise ShapeMismatchError(f"key {e} does not match function edge {ge.edge}")
        _check_bounded(ge.compact, f"g_{set(ge.edge)}")
    sizes = {len(e) for e in g_map}
    if len(sizes) != 1 or any(n not in e for e in g_map):
        raise PreconditionError("edges must share one size d and contain the last coordinate")
    return P, n


def _expand_to(ef_compact: np.ndarray, edge: tuple, n: int, P: int) -> np.ndarray:
    shape = [1] * n
    for i in edge:
        shape[i - 1] = P
    return ef_compact.reshape(shape)


def correlate_search_e(g_map: Mapping[tuple, EdgeFunction], e0, M: int, N: int, eps: float, *,
                       window_constant: float = 10.0, strict: bool = True) -> Witness | None:
    """Find phi_{e0} of scale M with |<g_{e0}, phi>| >= eps^2/2 when
    ||Delta_N(prod g_e)||_2 >= eps.

    h = Delta_N(prod g_e) is lifted back to the full grid; h and the
    factors g_e (e != e0) are grouped into blocks b_i, i in e0, each
    independent of v_i. Splitting the complement of e0 as {j} and f,
    every pair (v_f, n) in Z_P^f x [N] gives a candidate; the best one is
    returned. Returns None when the norm is below eps and no candidate
    reaches eps^2/2 (or, with ``strict=False``, whenever none does).
    """
    P, n = _validate_family(g_map)
    e0 = _edge(e0, n)
    keys = {_edge(e, n): ge for e, ge in g_map.items()}
    if e0 not in keys:
        raise PreconditionError(f"target edge {e0} is not in the family")
    if len(e0) >= n:
        raise PreconditionError("the target edge must miss at least one coordinate")
    M, N = int(M), int(N)
    _require_window(M, N, eps, window_constant)
    check_entries(P**n, "correlation search")

    h = diagonal_projection_product(list(keys.values()), N)
    norm = float(np.sqrt(np.mean(h.values**2)))

    # group factors into blocks b_i, i in e0
    groups: dict[int, list[np.ndarray]] = {i: [] for i in e0}
    for e, ge in keys.items():
        if e == e0:
            continue
        i = min(set(e0) - set(e))
        groups[i].append(_expand_to(ge.compact, e, n, P))
    groups[n].append(h.values.reshape(h.values.shape + (1,)))
    block_dense = {}
    for i, parts in groups.items():
        arr = np.ones((1,) * n)
        for part in parts:
            arr = arr * part
        block_dense[i] = np.broadcast_to(arr, (P,) * n)
    B = np.ones((P,) * n)
    for arr in block_dense.values():
        B = B * arr

    comp = [k for k in range(1, n + 1) if k not in e0]
    j, f = comp[0], tuple(comp[1:])
    d = len(e0)
    # B reordered as (e0 axes, f axes, j axis)
    order = [k - 1 for k in e0] + [k - 1 for k in f] + [j - 1]
    Bm = np.transpose(B, order)
    grid = np.indices((P,) * (d + len(f)))
    s_all = np.sum(grid, axis=0) % P if d + len(f) else np.zeros(())
    t = np.arange(P)
    # R(v_e0, v_f, t) = B(v_e0, v_j = -Sigma(v_e0) - Sigma(v_f) - t, v_f)
    jidx = (-s_all[..., None] - t) % P
    R = np.take_along_axis(Bm, jidx, axis=-1)
    T = kernels.window_sums(R.reshape(-1, P), M).reshape(R.shape) / M
    g0 = keys[e0].compact
    C = np.tensordot(g0, T, axes=(tuple(range(d)), tuple(range(d)))) / P**d  # (f axes..., t)
    C = C.reshape(-1, P)
    n_count = min(N, P)
    scores = C[:, :n_count].ravel()
    k = _pick(scores)
    best = float(scores[k])
    vf_flat, n_star = divmod(k, n_count)
    v_f = np.unravel_index(vf_flat, (P,) * len(f)) if f else ()
    v_f = tuple(int(x) for x in v_f)

    threshold = eps**2 / 2
    if abs(best) < threshold:
        if norm >= eps and strict:
            raise InvariantViolation(
                f"||Delta_N(prod g_e)|| = {norm:.6g} >= eps but the best correlation is {best:.6g} < eps^2/2")
        return None

    # tilde b_i(v_{e0 minus i}, w) = b_i(v_e0 with v_i = 0, v_j = -Sigma(v_f) - w - n, v_f)
    sf = sum(v_f) % P
    blocks = {}
    cidx = np.indices((P,) * d)
    for k_pos, i in enumerate(e0):
        rest_axes = [q for q in range(d) if q != k_pos]
        w = cidx[d - 1]
        rest = [cidx[q] for q in range(d - 1)]
        index = [None] * n
        for q_pos, q in enumerate(rest_axes):
            index[e0[q] - 1] = rest[q_pos]
        index[i - 1] = np.zeros_like(w)
        index[j - 1] = (-sf - w - n_star) % P
        for q, coord in zip(f, v_f):
            index[q - 1] = np.full_like(w, coord)
        blocks[i] = np.asarray(block_dense[i])[tuple(index)]
    phi = AntiUniform(e0, M, blocks, P, n)
    verified = float(np.mean(g0 * phi.compact()))
    if abs(verified - best) > VERIFY_TOL:
        raise InvariantViolation(f"search value {best!r} disagrees with direct evaluation {verified!r}")
    return Witness(phi, verified, (v_f, int(n_star)), best, norm, {"j": j, "f": list(f)})
