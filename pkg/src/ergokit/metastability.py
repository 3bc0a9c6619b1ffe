"""Metastability windows for averaged sequences, the extended-space trick
and a finite probe of dominated convergence.

A window [M, F(M)] is certified when every pair of sequence elements in
it is within eps in L^2. The default certificate compares each element
with seq(M) and doubles the worst deviation (triangle inequality); an
exhaustive mode checks all pairs through a Gram matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .averaging import _fibers, diagonal_projection
from .errors import InvariantViolation, PreconditionError, ShapeMismatchError
from .grid import (
    AnyGrid,
    FiniteProbabilitySpace,
    GridFunction,
    RandomizedGridFunction,
    check_entries,
    measure_weights,
)
from .growth import GrowthFunction

_CHUNK = 256


# ---------------------------------------------------------------------------
# Sequences N -> function, evaluated in batches


class AveragedSequence:
    """Base class: ``batch(Ns)`` returns one flattened row per N; ``weights``
    are the per-entry probability weights used for L^2 norms."""

    sequence_id = "sequence"
    weights: np.ndarray

    def batch(self, Ns: Sequence[int]) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, N: int) -> np.ndarray:
        return self.batch([N])[0]

    def certification_start(self, eps: float) -> int | None:
        """An M from which certification is guaranteed, if one is known."""
        return None


def _flat_weights(f: AnyGrid) -> np.ndarray:
    return np.broadcast_to(measure_weights(f), f.values.shape).ravel().copy()


class SlidingSequence(AveragedSequence):
    """N -> S_N g for g on Z_P (optionally with an X axis), via prefix sums."""

    def __init__(self, g: AnyGrid, sequence_id: str = "S_N"):
        if g.l != 1:
            raise ShapeMismatchError("S_N sequences need a function of one grid variable")
        self.g = g
        self.P = g.P
        rows = np.asarray(g.values).reshape(g.P, -1).T  # (|X| or 1, P)
        self._rows = rows
        self._total = rows.sum(axis=1)
        self._cum = np.concatenate([np.zeros((rows.shape[0], 1)), np.cumsum(np.concatenate([rows, rows], axis=1), axis=1)], axis=1)
        self.weights = _flat_weights(g)
        self.sequence_id = sequence_id

    def batch(self, Ns):
        Ns = np.asarray(list(Ns), dtype=np.int64)
        if np.any(Ns < 1):
            raise PreconditionError("N must be positive")
        q, r = np.divmod(Ns, self.P)
        v = np.arange(self.P)
        win = self._cum[:, v[None, :] + r[:, None]] - self._cum[:, v][:, None, :]  # (rows, len, P)
        out = (q[None, :, None] * self._total[:, None, None] + win) / Ns[None, :, None]
        # back to the (P, |X|) row-major layout of g.values
        return np.transpose(out, (1, 2, 0)).reshape(len(Ns), -1)

    def certification_start(self, eps):
        mean = self._total / self.P
        osc = float(np.max(np.abs(self._rows - mean[:, None])))
        return max(1, math.ceil(2 * self.P * osc / eps))


class DiagonalSequence(AveragedSequence):
    """N -> Delta_N f for f on Z_P^{l+1} (optionally with an X axis)."""

    def __init__(self, f: AnyGrid, sequence_id: str = "Delta_N"):
        if f.l < 1:
            raise ShapeMismatchError("Delta_N needs at least one grid coordinate")
        self.f = f
        self.P = f.P
        l = f.l - 1
        fib, sig, shape = _fibers(np.asarray(f.values), l, f.P, f.space is not None)
        rev = fib[:, (-np.arange(f.P)) % f.P]
        self._rev = rev
        self._sig = np.asarray(sig, dtype=np.int64) % f.P
        self._total = rev.sum(axis=1)
        self._cum = np.concatenate([np.zeros((rev.shape[0], 1)), np.cumsum(np.concatenate([rev, rev], axis=1), axis=1)], axis=1)
        proto = diagonal_projection(f, 1)
        self.weights = _flat_weights(proto)
        self.sequence_id = sequence_id

    def batch(self, Ns):
        Ns = np.asarray(list(Ns), dtype=np.int64)
        if np.any(Ns < 1):
            raise PreconditionError("N must be positive")
        q, r = np.divmod(Ns, self.P)
        rows = np.arange(self._rev.shape[0])
        hi = self._cum[rows[None, :], self._sig[None, :] + r[:, None]]
        lo = self._cum[rows, self._sig][None, :]
        # fibre rows are ordered (v, x), matching the (P,)*l + (|X|,) layout
        return (q[:, None] * self._total[None, :] + hi - lo) / Ns[:, None]

    def certification_start(self, eps):
        mean = self._total / self.P
        osc = float(np.max(np.abs(self._rev - mean[:, None])))
        return max(1, math.ceil(2 * self.P * osc / eps))


class MultipleAverageSequence(AveragedSequence):
    """N -> A_N(f_1, ..., f_l), accumulated incrementally for ascending N."""

    def __init__(self, fs: Sequence[GridFunction], sequence_id: str = "A_N"):
        self.fs = list(fs)
        self.P, self.l = fs[0].P, fs[0].l
        if len(self.fs) != self.l:
            raise ShapeMismatchError("A_N on Z_P^l takes l functions")
        self.weights = np.full(self.P**self.l, 1.0 / self.P**self.l)
        self.sequence_id = sequence_id
        self._acc = np.zeros((self.P,) * self.l)
        self._done = 0

    def _advance(self, N: int) -> np.ndarray:
        if N < self._done:
            self._acc = np.zeros((self.P,) * self.l)
            self._done = 0
        for n in range(self._done, N):
            term = np.ones((self.P,) * self.l)
            for i, f in enumerate(self.fs):
                term *= np.roll(f.values, -(n % self.P), axis=i)
            self._acc += term
        self._done = N
        return (self._acc / N).ravel()

    def batch(self, Ns):
        Ns = [int(N) for N in Ns]
        if any(N < 1 for N in Ns):
            raise PreconditionError("N must be positive")
        out = np.empty((len(Ns), self.P**self.l))
        for k in np.argsort(Ns, kind="stable"):
            out[k] = self._advance(Ns[k])
        return out


class CallableSequence(AveragedSequence):
    """Wrap ``fn(N)`` returning a grid function or an array."""

    def __init__(self, fn: Callable[[int], object], weights=None, sequence_id: str = "callable"):
        self.fn = fn
        self._weights = None if weights is None else np.asarray(weights, dtype=float).ravel()
        self.sequence_id = sequence_id

    @property
    def weights(self):
        return self._weights

    def batch(self, Ns):
        rows = []
        for N in Ns:
            val = self.fn(int(N))
            if isinstance(val, (GridFunction, RandomizedGridFunction)):
                if self._weights is None:
                    self._weights = _flat_weights(val)
                val = val.values
            arr = np.asarray(val, dtype=float).ravel()
            if self._weights is None:
                self._weights = np.full(arr.size, 1.0 / arr.size)
            rows.append(arr)
        return np.array(rows)


def as_sequence(seq) -> AveragedSequence:
    return seq if isinstance(seq, AveragedSequence) else CallableSequence(seq)


# ---------------------------------------------------------------------------
# Window search


@dataclass
class MetastabilityReport:
    status: str
    M: int | None
    F_M: int | None
    eps: float
    max_deviation: float | None
    D: float | None
    pairs_checked: object
    sequence_id: str
    growth: str
    scanned: int
    evaluations: int
    exhaustive_max: float | None = None
    window_truncated: bool = False
    meta: dict = field(default_factory=dict)

    @property
    def certified(self) -> bool:
        return self.status == "Certified"


def _deviations(seq: AveragedSequence, base: np.ndarray, Ns: np.ndarray) -> np.ndarray:
    V = seq.batch(Ns)
    return np.sqrt(np.maximum(((V - base) ** 2) @ seq.weights, 0.0))


def max_deviation_from(seq, M: int, end: int, stop_above: float | None = None,
                       chunk: int = _CHUNK) -> tuple[float, int]:
    """max_{M <= N <= end} ||seq(N) - seq(M)||_2 and the number of evaluations."""
    seq = as_sequence(seq)
    base = seq(M)
    D, evals = 0.0, 1
    for start in range(M + 1, end + 1, chunk):
        Ns = np.arange(start, min(end, start + chunk - 1) + 1)
        D = max(D, float(_deviations(seq, base, Ns).max()))
        evals += len(Ns)
        if stop_above is not None and D > stop_above:
            break
    return D, evals


def exhaustive_max_deviation(seq, lo: int, hi: int, chunk: int = 512) -> float:
    """max over lo <= N, N' <= hi of ||seq(N) - seq(N')||_2, via Gram blocks."""
    seq = as_sequence(seq)
    if hi < lo:
        raise PreconditionError("empty range")
    starts = list(range(lo, hi + 1, chunk))
    blocks = {}
    # centring on seq(lo) keeps the Gram cancellation error relative to the deviations
    ref = seq(lo)

    def block(s):
        if s not in blocks:
            Ns = np.arange(s, min(hi, s + chunk - 1) + 1)
            V = (seq.batch(Ns) - ref) * np.sqrt(seq.weights)
            blocks[s] = (V, np.einsum("ij,ij->i", V, V))
        return blocks[s]

    best = 0.0
    for a_i, a in enumerate(starts):
        Va, na = block(a)
        for b in starts[a_i:]:
            Vb, nb = block(b)
            d2 = na[:, None] + nb[None, :] - 2.0 * (Va @ Vb.T)
            best = max(best, float(np.sqrt(max(d2.max(), 0.0))))
        if len(blocks) > 8:
            blocks.pop(a, None)
    return best


def find_metastable_window(seq, F: GrowthFunction | str, eps: float, M_star: int = 1,
                           M_cap: int = 1000, exhaustive: bool = False,
                           N_max: int | None = None) -> MetastabilityReport:
    """Scan M = M_star, ..., M_cap for the first window [M, F(M)] with 2 D(M) <= eps.

    ``N_max`` truncates windows at that index (flagged in the report).
    With ``exhaustive`` the accepted window is re-checked over all pairs
    and the triangle certificate is confirmed to dominate that maximum.
    """
    seq = as_sequence(seq)
    F = GrowthFunction.parse(F) if isinstance(F, str) else F
    if not eps > 0:
        raise PreconditionError("eps must be positive")
    if M_star < 1 or M_star > M_cap:
        raise PreconditionError("need 1 <= M_star <= M_cap")
    evals = 0
    for M in range(M_star, M_cap + 1):
        end = F(M)
        if end < M:
            raise PreconditionError(f"growth function has F({M}) = {end} < {M}")
        truncated = N_max is not None and end > N_max
        if truncated:
            end = max(M, N_max)
        D, used = max_deviation_from(seq, M, end, stop_above=eps / 2)
        evals += used
        if 2 * D <= eps:
            report = MetastabilityReport("Certified", M, end, eps, 2 * D, D, "triangle",
                                         seq.sequence_id, str(F), M - M_star + 1, evals,
                                         window_truncated=truncated)
            if exhaustive:
                ex = exhaustive_max_deviation(seq, M, end)
                report.exhaustive_max = ex
                report.pairs_checked = "exhaustive"
                if ex**2 > (2 * D) ** 2 + 1e-12:
                    raise InvariantViolation("exhaustive maximum exceeds the triangle certificate")
                if ex**2 > eps**2 + 1e-12:
                    raise InvariantViolation("certified window fails the exhaustive re-check")
            return report
    start = seq.certification_start(eps)
    if start is not None and M_cap >= max(start, M_star):
        raise InvariantViolation(
            f"no window up to M_cap = {M_cap}, although certification is guaranteed from M = {start}")
    return MetastabilityReport("NoWindowFound", None, None, eps, None, None, 0, seq.sequence_id,
                               str(F), M_cap - M_star + 1, evals,
                               meta={"M_cap": M_cap, "guaranteed_from": start})


# ---------------------------------------------------------------------------
# Extended probability space


def extend_probability_space(parts: Sequence[AnyGrid]) -> RandomizedGridFunction:
    """g~(v, (x, k)) = g_k(v, x) over X x {1..J} with uniform weight on k.

    The product index is x * J + k (0-based k).
    """
    if not parts:
        raise PreconditionError("need at least one part")
    J = len(parts)
    first = parts[0]
    space = first.space or FiniteProbabilitySpace.uniform(1)
    for p in parts:
        if (p.P, p.l) != (first.P, first.l) or (p.space or FiniteProbabilitySpace.uniform(1)) != space:
            raise ShapeMismatchError("parts must share grid and X")
    vals = [np.asarray(p.values) if p.space is not None else np.asarray(p.values)[..., None] for p in parts]
    stacked = np.stack(vals, axis=-1)  # (P,)*l, |X|, J
    check_entries(stacked.size, "extended function")
    ext = space.product(FiniteProbabilitySpace.uniform(J))
    return RandomizedGridFunction(stacked.reshape(stacked.shape[:-2] + (-1,)), ext, first.P, first.l)


@dataclass(frozen=True)
class JReductionCheck:
    J: int
    lhs: float
    extended_norm: float

    @property
    def identity_rhs(self) -> float:
        """J^(1/2) times the extended-space norm."""
        return math.sqrt(self.J) * self.extended_norm

    @property
    def identity_gap(self) -> float:
        return abs(self.lhs - self.identity_rhs)

    @property
    def bound_holds(self) -> bool:
        """lhs <= J * extended norm, the inequality that is always true."""
        return self.lhs <= self.J * self.extended_norm + 1e-12


def j_reduction_sides(parts: Sequence[AnyGrid], N: int, N_prime: int) -> JReductionCheck:
    """Both sides of the comparison between the summed and the extended deviation.

    lhs = ||Delta_N(sum g_k) - Delta_N'(sum g_k)||; the extended norm is
    ||Delta_N(g~) - Delta_N'(g~)|| over X x {1..J}.
    """
    total = parts[0].with_values(sum(np.asarray(p.values) for p in parts))
    lhs_vals = diagonal_projection(total, N).values - diagonal_projection(total, N_prime).values
    proto = diagonal_projection(total, 1)
    lhs = math.sqrt(float(np.sum(lhs_vals**2 * measure_weights(proto))))
    ext = extend_probability_space(parts)
    d = diagonal_projection(ext, N)
    rhs_vals = d.values - diagonal_projection(ext, N_prime).values
    rhs = math.sqrt(float(np.sum(rhs_vals**2 * measure_weights(d))))
    return JReductionCheck(len(parts), lhs, rhs)


# ---------------------------------------------------------------------------
# Dominated convergence probe


@dataclass
class DctProbeReport:
    status: str
    M: int | None
    F_M: int | None
    max_integral: float | None
    pointwise_M: list
    eps: float
    growth: str


def _family_value(family, n: int, n2: int) -> np.ndarray:
    if callable(family):
        return np.asarray(family(n, n2), dtype=float)
    return np.asarray(family[n - 1, n2 - 1], dtype=float)


def finitary_dct_probe(family, F: GrowthFunction | str, eps: float, window_cap: int,
                       weights=None, n_max: int | None = None) -> DctProbeReport:
    """Pointwise and integrated metastability of f_{n,n'} on a finite X.

    ``family`` is a callable (n, n') -> values on X, or an array indexed
    [n-1, n'-1, x]. For each x the first M with max f_{n,n'}(x) <= eps over
    M <= n, n' <= F(M) is recorded; the integral-level window is the first M
    with max of E_x f_{n,n'} <= eps on its window.
    """
    F = GrowthFunction.parse(F) if isinstance(F, str) else F
    if not callable(family):
        family = np.asarray(family, dtype=float)
        n_max = family.shape[0] if n_max is None else min(n_max, family.shape[0])
    sample = _family_value(family, 1, 1)
    nx = sample.size
    w = np.full(nx, 1.0 / nx) if weights is None else np.asarray(weights, dtype=float)
    if w.shape != (nx,) or abs(w.sum() - 1.0) > 1e-12 or np.any(w < 0):
        raise PreconditionError("weights must be a probability vector on X")
    cache: dict = {}

    def window_max(M: int):
        end = F(M) if n_max is None else min(F(M), n_max)
        if end < M:
            return None
        pw = np.zeros(nx)
        integ = 0.0
        for n in range(M, end + 1):
            for n2 in range(M, end + 1):
                key = (n, n2)
                if key not in cache:
                    cache[key] = _family_value(family, n, n2).ravel()
                val = cache[key]
                if np.any(val < -1e-12) or np.any(val > 1 + 1e-12):
                    raise PreconditionError("family values must lie in [0, 1]")
                pw = np.maximum(pw, val)
                integ = max(integ, float(val @ w))
        return pw, integ, end

    pointwise: list = [None] * nx
    found = None
    for M in range(1, window_cap + 1):
        res = window_max(M)
        if res is None:
            break
        pw, integ, end = res
        for x in range(nx):
            if pointwise[x] is None and pw[x] <= eps:
                pointwise[x] = M
        if found is None and integ <= eps:
            found = (M, end, integ)
        if found is not None and all(p is not None for p in pointwise):
            break
    if found is None:
        return DctProbeReport("NoWindowFound", None, None, None, pointwise, eps, str(F))
    return DctProbeReport("Certified", found[0], found[1], found[2], pointwise, eps, str(F))
