"""Brute-force reference implementations.

Plain nested loops over grid points, written straight from the defining
formulas. They share no code with the fast kernels and are only meant for
small instances (the CLI exposes them via ``--oracle``).
"""

from __future__ import annotations

import itertools

import numpy as np


def multiple_average(fs: list[np.ndarray], P: int, N: int) -> np.ndarray:
    l = len(fs)
    out = np.zeros((P,) * l)
    for a in itertools.product(range(P), repeat=l):
        total = 0.0
        for n in range(N):
            term = 1.0
            for i in range(l):
                point = list(a)
                point[i] = (point[i] + n) % P
                term *= fs[i][tuple(point)]
            total += term
        out[a] = total / N
    return out


def sliding_average(g: np.ndarray, N: int) -> np.ndarray:
    """g has shape (P,) or (P, |X|)."""
    P = g.shape[0]
    out = np.zeros_like(g, dtype=float)
    for v in range(P):
        total = 0.0
        for n in range(N):
            total = total + g[(v + n) % P]
        out[v] = total / N
    return out


def diagonal_projection(f: np.ndarray, P: int, l: int, N: int) -> np.ndarray:
    """f has shape (P,) * (l + 1), optionally with a trailing X axis."""
    extra = f.shape[l + 1:]
    out = np.zeros((P,) * l + extra)
    for v in itertools.product(range(P), repeat=l):
        s = sum(v)
        total = np.zeros(extra) if extra else 0.0
        for n in range(N):
            total = total + f[v + ((-s - n) % P,)]
        out[v] = total / N
    return out


def lifted_product(fs: list[np.ndarray], P: int) -> np.ndarray:
    """prod_i g_{[l+1] minus {i}} evaluated pointwise on Z_P^{l+1}."""
    l = len(fs)
    out = np.zeros((P,) * (l + 1))
    for v in itertools.product(range(P), repeat=l + 1):
        term = 1.0
        for i in range(l):
            args = list(v[:l])
            args[i] = -sum(v[j] for j in range(l + 1) if j != i) % P
            term *= fs[i][tuple(args)]
        out[v] = term
    return out


def antiuniform_1(b: np.ndarray, M: int) -> np.ndarray:
    P = b.shape[0]
    return np.array([sum(b[(v - n) % P] for n in range(M)) / M for v in range(P)])


def antiuniform_e(blocks: dict, e: tuple, n_coords: int, P: int, M: int) -> np.ndarray:
    """Evaluate E_m prod_{i in e} b_i(v_{e minus i}, Sigma(v_e) + m) on Z_P^{n_coords}.

    ``blocks[i]`` is indexed by the coordinates of e without i (in increasing
    order) followed by the diagonal argument. Coordinates are 1-based.
    """
    out = np.zeros((P,) * n_coords)
    for v in itertools.product(range(P), repeat=n_coords):
        ve = [v[j - 1] for j in e]
        s = sum(ve)
        total = 0.0
        for m in range(M):
            term = 1.0
            for i in e:
                rest = tuple(v[j - 1] for j in e if j != i)
                term *= blocks[i][rest + ((s + m) % P,)]
            total += term
        out[v] = total / M
    return out


def conditional_expectation(values: np.ndarray, labels: np.ndarray,
                            weights: np.ndarray) -> np.ndarray:
    """Atom-wise weighted means, accumulated in dictionaries."""
    num: dict = {}
    den: dict = {}
    for val, lab, w in zip(values.ravel(), labels.ravel(), np.broadcast_to(weights, values.shape).ravel()):
        num[lab] = num.get(lab, 0.0) + w * val
        den[lab] = den.get(lab, 0.0) + w
    return np.array([num[lab] / den[lab] if den[lab] > 0 else 0.0
                     for lab in labels.ravel()]).reshape(values.shape)
