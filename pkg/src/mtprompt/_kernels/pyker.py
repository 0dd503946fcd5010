"""Pure-Python kernel backend.

Every function here has a compiled twin in ``cyker.pyx``. The two backends
must produce bit-identical results, so each kernel documents (and the twin
preserves) its floating-point accumulation order: reductions always run over
the contraction index in ascending order, and no kernel reassociates sums.

Buffers are flat row-major ``array('d')`` values (anything exposing the
buffer protocol works for the compiled twin). Shapes are passed explicitly;
callers own allocation of ``out``.
"""

import math

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB
_INV_2POW53 = 1.0 / 9007199254740992.0


def matmul_nn(a, b, out, n, k, m):
    """out (n x m) = a (n x k) @ b (k x m)."""
    bcols = [b[j::m] for j in range(m)]
    for i in range(n):
        arow = a[i * k:(i + 1) * k]
        base = i * m
        for j in range(m):
            out[base + j] = sum(map(_mul, arow, bcols[j]))


def matmul_tn(a, b, out, n, k, m):
    """out (n x m) = transpose(a) @ b, with a stored (k x n), b (k x m)."""
    acols = [a[i::n] for i in range(n)]
    bcols = [b[j::m] for j in range(m)]
    for i in range(n):
        acol = acols[i]
        base = i * m
        for j in range(m):
            out[base + j] = sum(map(_mul, acol, bcols[j]))


def matmul_nt(a, b, out, n, k, m):
    """out (n x m) = a (n x k) @ transpose(b), with b stored (m x k)."""
    brows = [b[j * k:(j + 1) * k] for j in range(m)]
    for i in range(n):
        arow = a[i * k:(i + 1) * k]
        base = i * m
        for j in range(m):
            out[base + j] = sum(map(_mul, arow, brows[j]))


def _mul(x, y):
    return x * y


def add(a, b, out, n):
    for i in range(n):
        out[i] = a[i] + b[i]


def sub(a, b, out, n):
    for i in range(n):
        out[i] = a[i] - b[i]


def mul(a, b, out, n):
    for i in range(n):
        out[i] = a[i] * b[i]


def scale(a, s, out, n):
    for i in range(n):
        out[i] = a[i] * s


def axpy(alpha, x, y, n):
    """y += alpha * x, in place. The one mutating kernel; used by the
    optimizer and by gradient accumulators that own their buffer."""
    for i in range(n):
        y[i] = y[i] + alpha * x[i]


def dot(a, b, n):
    acc = 0.0
    for i in range(n):
        acc += a[i] * b[i]
    return acc


def softmax_rows(x, out, rows, cols):
    """Row-wise softmax with max subtraction; exp-sum runs left to right."""
    for r in range(rows):
        base = r * cols
        hi = x[base]
        for j in range(1, cols):
            v = x[base + j]
            if v > hi:
                hi = v
        acc = 0.0
        for j in range(cols):
            e = math.exp(x[base + j] - hi)
            out[base + j] = e
            acc += e
        inv = 1.0 / acc
        for j in range(cols):
            out[base + j] = out[base + j] * inv


def tanh_vec(x, out, n):
    for i in range(n):
        out[i] = math.tanh(x[i])


def nonfinite_count(x, n):
    bad = 0
    for i in range(n):
        if not math.isfinite(x[i]):
            bad += 1
    return bad


def splitmix64(seed, counter):
    """Counter-based 64-bit stream: draw ``counter`` of the stream ``seed``."""
    z = (seed + ((counter + 1) * _GOLDEN)) & _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def fill_uniform(out, n, seed, counter):
    """Fill with uniforms in [0, 1); returns the advanced counter."""
    for i in range(n):
        out[i] = (splitmix64(seed, counter) >> 11) * _INV_2POW53
        counter += 1
    return counter


def fill_normal(out, n, seed, counter):
    """Fill with standard normals (sum of 12 uniforms minus 6).

    Uses only additions of exactly representable uniforms, so the stream is
    bit-reproducible on any IEEE-754 platform. Returns the advanced counter.
    """
    for i in range(n):
        acc = 0.0
        for _ in range(12):
            acc += (splitmix64(seed, counter) >> 11) * _INV_2POW53
            counter += 1
        out[i] = acc - 6.0
    return counter
