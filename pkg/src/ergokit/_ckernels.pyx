# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; see ``_kernels_py`` for the reference semantics."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline Py_ssize_t _mod(Py_ssize_t a, Py_ssize_t P) nogil:
    cdef Py_ssize_t r = a % P
    return r + P if r < 0 else r


def window_sums(a, Py_ssize_t N):
    cdef const double[:, ::1] src = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t rows = src.shape[0], P = src.shape[1]
    cdef Py_ssize_t q = N // P, r = N % P
    out_arr = np.zeros((rows, P))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t i, t, n
    cdef double total, run
    with nogil:
        for i in range(rows):
            total = 0.0
            for t in range(P):
                total += src[i, t]
            if r:
                run = 0.0
                for n in range(r):
                    run += src[i, n]
                for t in range(P):
                    out[i, t] = q * total + run
                    run += src[i, (t + r) % P] - src[i, t]
            else:
                for t in range(P):
                    out[i, t] = q * total
    return out_arr


def diag_project(fib, sig, Py_ssize_t N):
    cdef const double[:, ::1] f = np.ascontiguousarray(fib, dtype=np.float64)
    cdef const long long[::1] s = np.ascontiguousarray(sig, dtype=np.int64)
    cdef Py_ssize_t V = f.shape[0], P = f.shape[1]
    cdef Py_ssize_t q = N // P, r = N % P
    out_arr = np.empty(V)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t v, n, t0
    cdef double total, part
    with nogil:
        for v in range(V):
            total = 0.0
            if q:
                for n in range(P):
                    total += f[v, n]
            part = 0.0
            t0 = _mod(-s[v], P)
            for n in range(r):
                part += f[v, _mod(t0 - n, P)]
            out[v] = (q * total + part) / N
    return out_arr


def multiple_average(stack, Py_ssize_t N):
    arr = np.ascontiguousarray(stack, dtype=np.float64)
    cdef Py_ssize_t l = arr.shape[0]
    cdef Py_ssize_t P = arr.shape[1]
    cdef Py_ssize_t size = arr.size // l
    cdef const double[:, ::1] f = arr.reshape(l, size)
    cdef Py_ssize_t q = N // P, r = N % P
    out_arr = np.empty(size)
    cdef double[::1] out = out_arr
    cdef long long[::1] stride = np.array([P ** (l - 1 - i) for i in range(l)], dtype=np.int64)
    # per-point shifted indices and coordinates, advanced by one step per n
    cdef long long[::1] idx = np.empty(l, dtype=np.int64)
    cdef long long[::1] c = np.empty(l, dtype=np.int64)
    cdef Py_ssize_t a, n, i, count = P if q else r
    cdef double full, part, term
    with nogil:
        for a in range(size):
            for i in range(l):
                c[i] = (a // stride[i]) % P
                idx[i] = a
            full = 0.0
            part = 0.0
            for n in range(count):
                term = 1.0
                for i in range(l):
                    term = term * f[i, idx[i]]
                if n < r:
                    part += term
                full += term
                for i in range(l):
                    c[i] += 1
                    if c[i] == P:
                        c[i] = 0
                        idx[i] -= (P - 1) * stride[i]
                    else:
                        idx[i] += stride[i]
            if q:
                out[a] = (q * full + part) / N
            else:
                out[a] = part / N
    return out_arr.reshape(arr.shape[1:])


def shift_correlations(g, h, shifts):
    cdef const double[::1] gv = np.ascontiguousarray(g, dtype=np.float64)
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef const long long[::1] sv = np.ascontiguousarray(shifts, dtype=np.int64)
    cdef Py_ssize_t P = gv.shape[0], S = sv.shape[0]
    out_arr = np.empty(S)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t k, v, s
    cdef double acc
    with nogil:
        for k in range(S):
            s = _mod(sv[k], P)
            acc = 0.0
            for v in range(P - s):
                acc += gv[v] * hv[v + s]
            for v in range(P - s, P):
                acc += gv[v] * hv[v + s - P]
            out[k] = acc / P
    return out_arr
