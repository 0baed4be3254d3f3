# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled lattice kernels. Semantics mirror ``_dp_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

cdef int DX[3]
cdef int DY[3]
DX[:] = [1, 1, 0]
DY[:] = [1, 0, 1]


cdef inline double _lse3(double a, double b, double c) nogil:
    cdef double mx = a
    if b > mx:
        mx = b
    if c > mx:
        mx = c
    if mx == -INFINITY:
        return -INFINITY
    return mx + log(exp(a - mx) + exp(b - mx) + exp(c - mx))


def forward(const double[:, :, :, ::1] E):
    cdef Py_ssize_t m1 = E.shape[2], n1 = E.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Fa = np.full((m1, n1, 3), -np.inf)
    cdef double[:, :, ::1] F = Fa
    cdef Py_ssize_t x, y, px, py
    cdef int v
    with nogil:
        for x in range(m1):
            for y in range(n1):
                if x == 0 and y == 0:
                    continue
                for v in range(3):
                    px = x - DX[v]
                    py = y - DY[v]
                    if px < 0 or py < 0:
                        continue
                    if px == 0 and py == 0:
                        F[x, y, v] = 0.0
                        continue
                    F[x, y, v] = _lse3(F[px, py, 0] + E[0, v, x, y],
                                       F[px, py, 1] + E[1, v, x, y],
                                       F[px, py, 2] + E[2, v, x, y])
    return Fa


def backward(const double[:, :, :, ::1] E):
    cdef Py_ssize_t m1 = E.shape[2], n1 = E.shape[3]
    cdef Py_ssize_t m = m1 - 1, n = n1 - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Ba = np.full((m1, n1, 3), -np.inf)
    cdef double[:, :, ::1] B = Ba
    cdef Py_ssize_t x, y, sx, sy
    cdef int u, v
    cdef double t[3]
    B[m, n, 0] = 0.0
    B[m, n, 1] = 0.0
    B[m, n, 2] = 0.0
    with nogil:
        for x in range(m, -1, -1):
            for y in range(n, -1, -1):
                if x == m and y == n:
                    continue
                for u in range(3):
                    for v in range(3):
                        sx = x + DX[v]
                        sy = y + DY[v]
                        if sx > m or sy > n:
                            t[v] = -INFINITY
                        else:
                            t[v] = E[u, v, sx, sy] + B[sx, sy, v]
                    B[x, y, u] = _lse3(t[0], t[1], t[2])
    return Ba


def expect_forward(const double[:, :, :, ::1] E, const double[:, :, ::1] F,
                   const double[:, :, ::1] g):
    cdef Py_ssize_t m1 = E.shape[2], n1 = E.shape[3]
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Ga = np.zeros((m1, n1, 3))
    cdef double[:, :, ::1] G = Ga
    cdef Py_ssize_t x, y, px, py
    cdef int u, v
    cdef double fv, acc
    with nogil:
        for x in range(m1):
            for y in range(n1):
                if x == 0 and y == 0:
                    continue
                for v in range(3):
                    fv = F[x, y, v]
                    if fv == -INFINITY:
                        continue
                    px = x - DX[v]
                    py = y - DY[v]
                    acc = g[x, y, v]
                    if not (px == 0 and py == 0):
                        for u in range(3):
                            if F[px, py, u] == -INFINITY:
                                continue
                            acc += exp(F[px, py, u] + E[u, v, x, y] - fv) * G[px, py, u]
                    G[x, y, v] = acc
    return Ga


def expect_backward(const double[:, :, :, ::1] E, const double[:, :, ::1] B,
                    const double[:, :, ::1] g):
    cdef Py_ssize_t m1 = E.shape[2], n1 = E.shape[3]
    cdef Py_ssize_t m = m1 - 1, n = n1 - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Ga = np.zeros((m1, n1, 3))
    cdef double[:, :, ::1] G = Ga
    cdef Py_ssize_t x, y, sx, sy
    cdef int u, v
    cdef double bu, acc
    with nogil:
        for x in range(m, -1, -1):
            for y in range(n, -1, -1):
                if x == m and y == n:
                    continue
                for u in range(3):
                    bu = B[x, y, u]
                    if bu == -INFINITY:
                        continue
                    acc = 0.0
                    for v in range(3):
                        sx = x + DX[v]
                        sy = y + DY[v]
                        if sx > m or sy > n:
                            continue
                        acc += exp(E[u, v, sx, sy] + B[sx, sy, v] - bu) * (g[sx, sy, v] + G[sx, sy, v])
                    G[x, y, u] = acc
    return Ga


def viterbi(const double[:, :, :, ::1] E):
    cdef Py_ssize_t m1 = E.shape[2], n1 = E.shape[3]
    cdef Py_ssize_t m = m1 - 1, n = n1 - 1
    cdef cnp.ndarray[cnp.float64_t, ndim=3] Va = np.full((m1, n1, 3), -np.inf)
    cdef cnp.ndarray[cnp.int8_t, ndim=3] Pa = np.full((m1, n1, 3), -1, dtype=np.int8)
    cdef double[:, :, ::1] V = Va
    cdef signed char[:, :, ::1] P = Pa
    cdef Py_ssize_t x, y, px, py, k
    cdef int u, v, arg
    cdef double best, s
    with nogil:
        for x in range(m1):
            for y in range(n1):
                if x == 0 and y == 0:
                    continue
                for v in range(3):
                    px = x - DX[v]
                    py = y - DY[v]
                    if px < 0 or py < 0:
                        continue
                    if px == 0 and py == 0:
                        V[x, y, v] = 0.0
                        continue
                    best = -INFINITY
                    arg = -1
                    for u in range(3):
                        if V[px, py, u] == -INFINITY:
                            continue
                        s = V[px, py, u] + E[u, v, x, y]
                        if arg < 0 or s > best:
                            best = s
                            arg = u
                    V[x, y, v] = best
                    P[x, y, v] = arg
    v = -1
    best = -INFINITY
    for u in range(3):
        if V[m, n, u] == -INFINITY:
            continue
        if v < 0 or V[m, n, u] > best:
            best = V[m, n, u]
            v = u
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(m + n, dtype=np.int64)
    k = 0
    x = m
    y = n
    while not (x == 0 and y == 0):
        out[k] = v
        k += 1
        u = P[x, y, v]
        x -= DX[v]
        y -= DY[v]
        v = u
    return out[:k][::-1].copy(), best
