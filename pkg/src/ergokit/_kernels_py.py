"""Pure numpy implementations of the hot kernels.

These mirror ``_ckernels.pyx`` signature for signature; ``kernels`` picks
one of the two at import time.
"""

import numpy as np

_BLOCK_ENTRIES = 1 << 22


def window_sums(a, N):
    """out[r, t] = sum_{n in [N]} a[r, (t + n) mod P] for a 2-d array ``a``."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    rows, P = a.shape
    q, r = divmod(int(N), P)
    out = np.zeros((rows, P))
    if q:
        out += q * a.sum(axis=1, keepdims=True)
    if r:
        c = np.zeros((rows, 2 * P + 1))
        np.cumsum(np.concatenate([a, a], axis=1), axis=1, out=c[:, 1:])
        out += c[:, r:r + P] - c[:, :P]
    return out


def diag_project(fib, sig, N):
    """out[v] = mean_{n in [N]} fib[v, (-sig[v] - n) mod P]."""
    fib = np.ascontiguousarray(fib, dtype=np.float64)
    P = fib.shape[1]
    rev = fib[:, (-np.arange(P)) % P]
    sums = window_sums(rev, N)
    return sums[np.arange(fib.shape[0]), np.asarray(sig, dtype=np.int64) % P] / N


def multiple_average(stack, N):
    """A_N for a stack of shape (l, P, ..., P); returns shape (P,) * l."""
    stack = np.ascontiguousarray(stack, dtype=np.float64)
    l = stack.shape[0]
    P = stack.shape[1]
    q, r = divmod(int(N), P)

    def partial(count):
        acc = np.zeros(stack.shape[1:])
        for n in range(count):
            term = np.ones(stack.shape[1:])
            for i in range(l):
                term *= np.roll(stack[i], -n, axis=i)
            acc += term
        return acc

    out = partial(r)
    if q:
        out += q * partial(P)
    return out / N


def shift_correlations(g, h, shifts):
    """c[k] = mean_v g[v] * h[(v + shifts[k]) mod P] for 1-d arrays."""
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    shifts = np.asarray(shifts, dtype=np.int64)
    P = g.shape[0]
    out = np.empty(shifts.shape[0])
    block = max(1, _BLOCK_ENTRIES // max(P, 1))
    v = np.arange(P)
    for start in range(0, shifts.shape[0], block):
        s = shifts[start:start + block]
        idx = (v[None, :] + s[:, None]) % P
        out[start:start + block] = h[idx] @ g / P
    return out
