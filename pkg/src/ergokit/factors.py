"""Finite factors (measurable partitions) and conditional expectation.

A factor is an integer label array over the domain of the functions it
conditions: ``(P,) * l`` for deterministic functions, optionally followed
by an X axis. A label array without the X axis is broadcast over X, i.e.
the factor ignores x.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from numpy.polynomial import chebyshev
from scipy.fft import dct

from .averaging import EdgeFunction, _edge
from .errors import AtomApproximationError, PreconditionError, ShapeMismatchError
from .grid import AnyGrid, GridFunction, RandomizedGridFunction, measure_weights


class Factor:
    """A finite partition of a grid domain with atom labels and provenance."""

    __slots__ = ("labels", "atom_count", "provenance", "source")

    def __init__(self, labels, atom_count: int | None = None,
                 provenance: dict | None = None, source: AnyGrid | None = None):
        lab = np.asarray(labels)
        if not np.issubdtype(lab.dtype, np.integer):
            raise PreconditionError("factor labels must be integers")
        lab = np.array(lab, dtype=np.int64, order="C")
        if lab.size == 0:
            raise PreconditionError("factor over an empty domain")
        count = int(lab.max()) + 1 if atom_count is None else int(atom_count)
        if lab.min() < 0 or lab.max() >= count:
            raise PreconditionError("labels must lie in [0, atom_count)")
        lab.flags.writeable = False
        self.labels = lab
        self.atom_count = count
        self.provenance = dict(provenance or {"kind": "partition"})
        self.source = source

    @property
    def shape(self) -> tuple:
        return self.labels.shape

    def atom_sizes(self) -> np.ndarray:
        """Number of domain points in each atom (zero marks a recorded empty atom)."""
        return np.bincount(self.labels.ravel(), minlength=self.atom_count)

    def nonempty_atoms(self) -> int:
        return int(np.count_nonzero(self.atom_sizes()))

    def to_json(self) -> str:
        return json.dumps({"atom_count": self.atom_count, "shape": list(self.shape),
                           "provenance": self.provenance}, sort_keys=True)

    def __repr__(self) -> str:
        return f"Factor(atoms={self.atom_count}, kind={self.provenance.get('kind')})"


def trivial_factor(shape: Sequence[int]) -> Factor:
    return Factor(np.zeros(tuple(shape), dtype=np.int64), 1, {"kind": "trivial"})


def discrete_factor(shape: Sequence[int]) -> Factor:
    n = int(np.prod(shape))
    return Factor(np.arange(n, dtype=np.int64).reshape(tuple(shape)), n, {"kind": "discrete"})


def same_partition(a: Factor, b: Factor) -> bool:
    """True if a and b define the same nonempty atoms up to relabeling."""
    if a.shape != b.shape:
        return False
    pairs = np.unique(np.stack([a.labels.ravel(), b.labels.ravel()]), axis=1)
    return (len(np.unique(pairs[0])) == pairs.shape[1]
            and len(np.unique(pairs[1])) == pairs.shape[1])


def refines(fine: Factor, coarse: Factor) -> bool:
    """Every atom of ``fine`` lies inside a single atom of ``coarse``."""
    c = coarse.labels
    if c.ndim + 1 == fine.labels.ndim:
        c = np.broadcast_to(c[..., None], fine.shape)
    if c.shape != fine.shape:
        raise ShapeMismatchError(f"factor domains differ: {fine.shape} vs {coarse.shape}")
    pairs = np.unique(np.stack([fine.labels.ravel(), np.asarray(c).ravel()]), axis=1)
    return len(np.unique(pairs[0])) == pairs.shape[1]


# ---------------------------------------------------------------------------
# Interval factors of a function


def value_interval(phi: AnyGrid) -> tuple[float, float]:
    if phi.bound is not None:
        return (-float(phi.bound), float(phi.bound))
    return (float(np.min(phi.values)), float(np.max(phi.values)))


def build_interval_factor(phi: AnyGrid, eta0: float, alpha: float | None = None,
                          seed: int | None = None,
                          interval: tuple[float, float] | None = None) -> Factor:
    """Partition by the preimages of [(n + alpha) eta0, (n + alpha + 1) eta0).

    ``alpha`` is drawn from a generator seeded with ``seed`` when omitted;
    the draw is recorded in the provenance.
    """
    if not eta0 > 0:
        raise PreconditionError("eta0 must be positive")
    if alpha is None:
        alpha = float(np.random.default_rng(seed).uniform())
    if not 0.0 <= alpha <= 1.0:
        raise PreconditionError("alpha must lie in [0, 1]")
    lo, hi = interval if interval is not None else value_interval(phi)
    vals = np.asarray(phi.values)
    if vals.size and (vals.min() < lo - 1e-12 or vals.max() > hi + 1e-12):
        raise PreconditionError(f"phi takes values outside I = [{lo}, {hi}]")
    n_lo = math.floor(lo / eta0 - alpha)
    n_hi = math.floor(hi / eta0 - alpha)
    n = np.floor(vals / eta0 - alpha).astype(np.int64)
    labels = np.clip(n - n_lo, 0, n_hi - n_lo)
    prov = {"kind": "interval", "eta0": float(eta0), "alpha": float(alpha),
            "interval": [float(lo), float(hi)], "n_lo": int(n_lo), "seed": seed}
    return Factor(labels, n_hi - n_lo + 1, prov, source=phi)


def atom_interval(Y: Factor, atom: int) -> tuple[float, float]:
    prov = Y.provenance
    if prov.get("kind") != "interval":
        raise PreconditionError("factor was not built from intervals")
    eta0, alpha = prov["eta0"], prov["alpha"]
    n = prov["n_lo"] + int(atom)
    return ((n + alpha) * eta0, (n + alpha + 1) * eta0)


def join(a: Factor, b: Factor) -> Factor:
    """The coarsest common refinement: nonempty intersections of atoms."""
    la, lb = a.labels, b.labels
    if la.shape != lb.shape:
        # a grid-only label array is constant along the trailing X axis of the other
        if la.ndim + 1 == lb.ndim and la.shape == lb.shape[:-1]:
            la = np.broadcast_to(la[..., None], lb.shape)
        elif lb.ndim + 1 == la.ndim and lb.shape == la.shape[:-1]:
            lb = np.broadcast_to(lb[..., None], la.shape)
        else:
            raise ShapeMismatchError(f"factor domains differ: {la.shape} vs {lb.shape}")
    code = la.astype(np.int64) * b.atom_count + lb
    _, inverse = np.unique(code.ravel(), return_inverse=True)
    prov = {"kind": "join", "parts": [a.provenance, b.provenance]}
    return Factor(inverse.reshape(la.shape), None, prov)


def join_all(factors: Iterable[Factor], shape: Sequence[int] | None = None) -> Factor:
    factors = list(factors)
    if not factors:
        if shape is None:
            raise PreconditionError("joining no factors needs an explicit domain shape")
        return trivial_factor(shape)
    out = factors[0]
    for f in factors[1:]:
        out = join(out, f)
    return out


def _labels_for(f: AnyGrid, Y: Factor) -> np.ndarray:
    lab = Y.labels
    if lab.shape == f.values.shape:
        return lab
    if f.space is not None and lab.shape == f.values.shape[:-1]:
        return np.broadcast_to(lab[..., None], f.values.shape)
    raise ShapeMismatchError(f"factor domain {lab.shape} does not match {f.values.shape}")


def cond_expectation(f: AnyGrid, Y: Factor) -> AnyGrid:
    """E(f | Y): the weighted mean of f over each atom of Y."""
    if f.values.size == 0:
        raise PreconditionError("conditional expectation on an empty domain")
    lab = _labels_for(f, Y).ravel()
    w = np.broadcast_to(measure_weights(f), f.values.shape).ravel()
    num = np.bincount(lab, weights=w * f.values.ravel(), minlength=Y.atom_count)
    den = np.bincount(lab, weights=w, minlength=Y.atom_count)
    means = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
    return f.with_values(means[lab].reshape(f.values.shape))


def energy(f: AnyGrid, Y: Factor) -> float:
    """||E(f | Y)||_2^2."""
    ce = cond_expectation(f, Y)
    return float(np.sum(ce.values**2 * measure_weights(f)))


# ---------------------------------------------------------------------------
# Edge factors


def edge_factor(P: int, n_coords: int, edge: Iterable[int], x_size: int | None = None) -> Factor:
    """The partition of Z_P^n (x X) by the coordinates in e (and x)."""
    e = _edge(edge, n_coords)
    idx = np.indices((P,) * n_coords)
    code = np.zeros((P,) * n_coords, dtype=np.int64)
    for i in e:
        code = code * P + idx[i - 1]
    count = P ** len(e)
    if x_size is not None:
        code = code[..., None] * x_size + np.arange(x_size)
        count *= x_size
    return Factor(code, count, {"kind": "edge", "edge": list(e)})


def edge_factor_project(f: AnyGrid, edge: Iterable[int]) -> EdgeFunction:
    """E(f | Y_e), returned in compact e-measurable form."""
    e = _edge(edge, f.l)
    other = tuple(i - 1 for i in range(1, f.l + 1) if i not in e)
    compact = f.values.mean(axis=other) if other else f.values
    return EdgeFunction(compact, e, f.l, f.P, f.space)


# ---------------------------------------------------------------------------
# Polynomial approximation of atom indicators


@dataclass(frozen=True)
class Polynomial:
    """A polynomial in the Chebyshev basis of its domain interval."""

    coefficients: tuple
    domain: tuple
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, t):
        return chebyshev.Chebyshev(self.coefficients, domain=list(self.domain))(np.asarray(t, dtype=float))

    def power_coefficients(self) -> np.ndarray:
        """Monomial coefficients in t (ill-conditioned for high degree)."""
        return chebyshev.Chebyshev(self.coefficients, domain=list(self.domain)).convert(
            kind=np.polynomial.Polynomial).coef

    def max_abs_coefficient(self) -> float:
        return float(np.max(np.abs(self.coefficients)))


_QUAD_NODES = 1 << 15
_FILTERS = (0.0, 0.5, 1.0, 2.0, 4.0, 8.0)


def _cheb_coefficients(func, lo: float, hi: float, degree: int) -> np.ndarray:
    """Chebyshev coefficients of ``func`` on [lo, hi] by Gauss-Chebyshev quadrature."""
    q = max(_QUAD_NODES, 16 * degree)
    theta = np.pi * (np.arange(q) + 0.5) / q
    t = lo + (np.cos(theta) + 1.0) * (hi - lo) / 2.0
    c = dct(func(t), type=2) / q
    c[0] /= 2.0
    return c[: degree + 1]


def _ramp(a: float, b: float, w: float, lo: float, hi: float):
    """Trapezoid equal to 1 on [a, b) away from its ends, ramping over width w."""
    def f(t):
        left = np.ones_like(t) if a <= lo else np.clip((t - (a - w / 2)) / w, 0.0, 1.0)
        right = np.ones_like(t) if b >= hi else np.clip(((b + w / 2) - t) / w, 0.0, 1.0)
        return np.minimum(left, right)
    return f


def atom_polynomial(Y: Factor, atom: int, eta1: float, phi: AnyGrid | None = None,
                    max_degree: int = 200, width: float | None = None,
                    max_retries: int = 8, delta: float = 0.01) -> Polynomial:
    """A polynomial Psi_A with ||1_A - Psi_A(phi)||_1 <= eta1 on the data.

    A trapezoidal ramp of width ``width`` (default eta1**2 * eta0) replaces
    the atom's interval indicator; its Chebyshev series is damped by a
    Gaussian filter and truncated at increasing degrees until the L1 error
    on the data is at most eta1, the sup error is at most 1 and the
    polynomial maps I into [-delta, 1 + delta]. If the data carries more
    than eta1/2 of mass within the ramp, the ramp is halved and retried.
    """
    if not eta1 > 0:
        raise PreconditionError("eta1 must be positive")
    phi = phi if phi is not None else Y.source
    if phi is None:
        raise PreconditionError("the generating function phi is required")
    if not 0 <= atom < Y.atom_count:
        raise PreconditionError(f"atom {atom} out of range")
    lo, hi = Y.provenance["interval"]
    a, b = atom_interval(Y, atom)
    ind = (_labels_for(phi, Y) == atom).astype(float).ravel()
    data = np.asarray(phi.values, dtype=float).ravel()
    wts = np.broadcast_to(measure_weights(phi), phi.values.shape).ravel()

    if a <= lo and b > hi:
        return Polynomial((1.0,), (lo, hi), {"l1_error": float(np.sum(wts * np.abs(ind - 1.0)))})
    if hi <= lo:
        raise PreconditionError("degenerate value interval")

    w = width if width is not None else eta1**2 * Y.provenance["eta0"]
    dense = np.linspace(lo, hi, 8 * max_degree + 1)
    degrees = sorted({d for d in (4, 8, 16, 32, 64, 100, 128, 160, 200, max_degree) if d <= max_degree})
    for retry in range(max_retries):
        band = np.zeros_like(data, dtype=bool)
        if a > lo:
            band |= np.abs(data - a) <= w / 2
        if b < hi:
            band |= np.abs(data - b) <= w / 2
        band_mass = float(np.sum(wts[band]))
        if band_mass > eta1 / 2:
            w /= 2
            continue
        ramp = _ramp(a, b, w, lo, hi)
        full = _cheb_coefficients(ramp, lo, hi, max_degree)
        for deg in degrees:
            k = np.arange(deg + 1) / max(deg, 1)
            for beta in _FILTERS:
                c = full[: deg + 1] * np.exp(-beta * k**2)
                poly = chebyshev.Chebyshev(c, domain=[lo, hi])
                on_grid = poly(dense)
                if on_grid.min() < -delta or on_grid.max() > 1 + delta:
                    continue
                err = np.abs(ind - poly(data))
                l1 = float(np.sum(wts * err))
                if l1 <= eta1 and err.max(initial=0.0) <= 1 + 1e-9:
                    sup = float(np.max(np.abs(on_grid - ramp(dense))))
                    return Polynomial(tuple(float(x) for x in c), (lo, hi),
                                      {"l1_error": l1, "ramp_width": w, "filter": beta,
                                       "sup_error_vs_ramp": sup, "band_mass": band_mass,
                                       "retries": retry})
        raise AtomApproximationError(
            f"no polynomial of degree <= {max_degree} reaches L1 error {eta1} for atom {atom}"
        )
    raise AtomApproximationError(
        f"boundary mass stayed above eta1/2 after {max_retries} ramp halvings; re-randomize alpha"
    )
