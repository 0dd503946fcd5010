# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernel backend.

Twin of ``pyker``: same signatures, same floating-point accumulation order
(contraction index ascending, no reassociation), hence bit-identical output.
Compiled without -ffast-math / fused multiply-add so results match the
interpreter exactly.
"""

from libc.math cimport exp, tanh, isfinite

ctypedef unsigned long long u64

cdef u64 _GOLDEN = 0x9E3779B97F4A7C15ULL
cdef u64 _MIX1 = 0xBF58476D1CE4E5B9ULL
cdef u64 _MIX2 = 0x94D049BB133111EBULL
cdef double _INV_2POW53 = 1.0 / 9007199254740992.0


def matmul_nn(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    cdef Py_ssize_t i, j, l
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for l in range(k):
                    acc += a[i * k + l] * b[l * m + j]
                out[i * m + j] = acc


def matmul_tn(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    cdef Py_ssize_t i, j, l
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for l in range(k):
                    acc += a[l * n + i] * b[l * m + j]
                out[i * m + j] = acc


def matmul_nt(double[::1] a, double[::1] b, double[::1] out,
              Py_ssize_t n, Py_ssize_t k, Py_ssize_t m):
    cdef Py_ssize_t i, j, l
    cdef double acc
    with nogil:
        for i in range(n):
            for j in range(m):
                acc = 0.0
                for l in range(k):
                    acc += a[i * k + l] * b[j * k + l]
                out[i * m + j] = acc


def add(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = a[i] + b[i]


def sub(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = a[i] - b[i]


def mul(double[::1] a, double[::1] b, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = a[i] * b[i]


def scale(double[::1] a, double s, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = a[i] * s


def axpy(double alpha, double[::1] x, double[::1] y, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            y[i] = y[i] + alpha * x[i]


def dot(double[::1] a, double[::1] b, Py_ssize_t n):
    cdef Py_ssize_t i
    cdef double acc = 0.0
    with nogil:
        for i in range(n):
            acc += a[i] * b[i]
    return acc


def softmax_rows(double[::1] x, double[::1] out, Py_ssize_t rows, Py_ssize_t cols):
    cdef Py_ssize_t r, j, base
    cdef double hi, acc, e, inv, v
    with nogil:
        for r in range(rows):
            base = r * cols
            hi = x[base]
            for j in range(1, cols):
                v = x[base + j]
                if v > hi:
                    hi = v
            acc = 0.0
            for j in range(cols):
                e = exp(x[base + j] - hi)
                out[base + j] = e
                acc += e
            inv = 1.0 / acc
            for j in range(cols):
                out[base + j] = out[base + j] * inv


def tanh_vec(double[::1] x, double[::1] out, Py_ssize_t n):
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = tanh(x[i])


def nonfinite_count(double[::1] x, Py_ssize_t n):
    cdef Py_ssize_t i, bad = 0
    with nogil:
        for i in range(n):
            if not isfinite(x[i]):
                bad += 1
    return bad


cdef inline u64 _splitmix64(u64 seed, u64 counter) nogil:
    cdef u64 z = seed + (counter + 1) * _GOLDEN
    z = (z ^ (z >> 30)) * _MIX1
    z = (z ^ (z >> 27)) * _MIX2
    return z ^ (z >> 31)


def splitmix64(seed, counter):
    return _splitmix64(<u64> seed, <u64> counter)


def fill_uniform(double[::1] out, Py_ssize_t n, seed, counter):
    cdef u64 s = <u64> seed
    cdef u64 c = <u64> counter
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = <double> (_splitmix64(s, c) >> 11) * _INV_2POW53
            c += 1
    return c


def fill_normal(double[::1] out, Py_ssize_t n, seed, counter):
    cdef u64 s = <u64> seed
    cdef u64 c = <u64> counter
    cdef Py_ssize_t i, r
    cdef double acc
    with nogil:
        for i in range(n):
            acc = 0.0
            for r in range(12):
                acc += <double> (_splitmix64(s, c) >> 11) * _INV_2POW53
                c += 1
            out[i] = acc - 6.0
    return c
