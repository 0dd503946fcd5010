"""Dense 2-D float64 tensors, a counter-based RNG, and the core op set.

Every differentiable op is paired with an explicit vector-Jacobian product
(``<op>_vjp``); there is no tape or graph. Tensors are immutable values
after construction (reshape shares the buffer, which is safe for that
reason). All math runs at 64-bit; 32-bit floats appear only in the
interchange files handled by :mod:`mtprompt.data`.

Layout is row-major throughout, so ``reshape`` is a pure reinterpretation
of the flat buffer.
"""

from __future__ import annotations

import math
from array import array

from . import _kernels as K
from .errors import DegenerateInputError, ShapeError

_MASK64 = (1 << 64) - 1


def fnv1a64(text: str) -> int:
    """FNV-1a on the UTF-8 bytes; the stable string hash used everywhere."""
    h = 0xCBF29CE484222325
    for byte in text.encode("utf-8"):
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


class Tensor2:
    """A rows x cols matrix of finite float64 values, immutable by contract."""

    __slots__ = ("rows", "cols", "data")

    def __init__(self, rows: int, cols: int, data: array, *, check: bool = True):
        if rows < 0 or cols < 0:
            raise ShapeError(f"negative dims ({rows}, {cols})")
        if len(data) != rows * cols:
            raise ShapeError(f"buffer of {len(data)} cannot be ({rows}, {cols})")
        if check and K.nonfinite_count(data, len(data)):
            raise ValueError("tensor contains non-finite entries")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "data", data)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor2 is immutable")

    # -- constructors ----------------------------------------------------

    @staticmethod
    def zeros(rows: int, cols: int) -> "Tensor2":
        return Tensor2(rows, cols, array("d", bytes(8 * rows * cols)), check=False)

    @staticmethod
    def from_rows(rows_of_values) -> "Tensor2":
        rows = len(rows_of_values)
        cols = len(rows_of_values[0]) if rows else 0
        buf = array("d")
        for r in rows_of_values:
            if len(r) != cols:
                raise ShapeError("ragged rows")
            buf.extend(r)
        return Tensor2(rows, cols, buf)

    @staticmethod
    def vector(values) -> "Tensor2":
        buf = array("d", values)
        return Tensor2(1, len(buf), buf)

    @staticmethod
    def from_flat(rows: int, cols: int, values) -> "Tensor2":
        return Tensor2(rows, cols, array("d", values))

    # -- views and accessors ---------------------------------------------

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def at(self, i: int, j: int) -> float:
        return self.data[i * self.cols + j]

    def row(self, i: int) -> array:
        return self.data[i * self.cols:(i + 1) * self.cols]

    def to_lists(self):
        c = self.cols
        return [list(self.data[i * c:(i + 1) * c]) for i in range(self.rows)]

    def copy(self) -> "Tensor2":
        return Tensor2(self.rows, self.cols, array("d", self.data), check=False)

    def __eq__(self, other):
        return (
            isinstance(other, Tensor2)
            and self.shape == other.shape
            and self.data == other.data
        )

    def __repr__(self):
        return f"Tensor2({self.rows}x{self.cols})"


# -- shape plumbing -------------------------------------------------------


def reshape(t: Tensor2, rows: int, cols: int) -> Tensor2:
    """Row-major reinterpretation; shares the buffer (tensors are immutable)."""
    if rows * cols != t.size:
        raise ShapeError(f"cannot reshape {t.shape} to ({rows}, {cols})")
    return Tensor2(rows, cols, t.data, check=False)


def reshape_vjp(cot: Tensor2, rows: int, cols: int) -> Tensor2:
    return reshape(cot, rows, cols)


def transpose(t: Tensor2) -> Tensor2:
    out = array("d", bytes(8 * t.size))
    r, c = t.rows, t.cols
    for i in range(r):
        base = i * c
        for j in range(c):
            out[j * r + i] = t.data[base + j]
    return Tensor2(c, r, out, check=False)


def cat_rows(parts) -> Tensor2:
    parts = [p for p in parts if p.rows > 0]
    if not parts:
        raise ShapeError("nothing to concatenate")
    cols = parts[0].cols
    buf = array("d")
    rows = 0
    for p in parts:
        if p.cols != cols:
            raise ShapeError(f"row concat width mismatch {p.cols} != {cols}")
        buf.extend(p.data)
        rows += p.rows
    return Tensor2(rows, cols, buf, check=False)


def rows_slice(t: Tensor2, start: int, stop: int) -> Tensor2:
    if not (0 <= start <= stop <= t.rows):
        raise ShapeError(f"bad row slice [{start}:{stop}] of {t.rows}")
    return Tensor2(stop - start, t.cols, t.data[start * t.cols:stop * t.cols], check=False)


def cols_slice(t: Tensor2, start: int, stop: int) -> Tensor2:
    if not (0 <= start <= stop <= t.cols):
        raise ShapeError(f"bad col slice [{start}:{stop}] of {t.cols}")
    w = stop - start
    out = array("d", bytes(8 * t.rows * w))
    for i in range(t.rows):
        out[i * w:(i + 1) * w] = t.data[i * t.cols + start:i * t.cols + stop]
    return Tensor2(t.rows, w, out, check=False)


def cat_cols(parts) -> Tensor2:
    rows = parts[0].rows
    cols = sum(p.cols for p in parts)
    out = array("d", bytes(8 * rows * cols))
    for i in range(rows):
        ofs = i * cols
        for p in parts:
            if p.rows != rows:
                raise ShapeError("col concat height mismatch")
            out[ofs:ofs + p.cols] = p.data[i * p.cols:(i + 1) * p.cols]
            ofs += p.cols
    return Tensor2(rows, cols, out, check=False)


# -- arithmetic ops and their VJPs ----------------------------------------


def matmul(a: Tensor2, b: Tensor2) -> Tensor2:
    if a.cols != b.rows:
        raise ShapeError(f"matmul {a.shape} @ {b.shape}")
    out = array("d", bytes(8 * a.rows * b.cols))
    K.matmul_nn(a.data, b.data, out, a.rows, a.cols, b.cols)
    return Tensor2(a.rows, b.cols, out, check=False)


def matmul_vjp(a: Tensor2, b: Tensor2, cot: Tensor2):
    """Cotangents of ``matmul(a, b)``: (cot @ b^T, a^T @ cot)."""
    if cot.shape != (a.rows, b.cols):
        raise ShapeError(f"cotangent {cot.shape} for {a.shape} @ {b.shape}")
    da = array("d", bytes(8 * a.size))
    db = array("d", bytes(8 * b.size))
    K.matmul_nt(cot.data, b.data, da, a.rows, b.cols, a.cols)
    K.matmul_tn(a.data, cot.data, db, a.cols, a.rows, b.cols)
    return (
        Tensor2(a.rows, a.cols, da, check=False),
        Tensor2(b.rows, b.cols, db, check=False),
    )


def matmul_tn(a: Tensor2, b: Tensor2) -> Tensor2:
    """transpose(a) @ b without materializing the transpose."""
    if a.rows != b.rows:
        raise ShapeError(f"matmul_tn {a.shape} x {b.shape}")
    out = array("d", bytes(8 * a.cols * b.cols))
    K.matmul_tn(a.data, b.data, out, a.cols, a.rows, b.cols)
    return Tensor2(a.cols, b.cols, out, check=False)


def matmul_nt(a: Tensor2, b: Tensor2) -> Tensor2:
    """a @ transpose(b) without materializing the transpose."""
    if a.cols != b.cols:
        raise ShapeError(f"matmul_nt {a.shape} x {b.shape}")
    out = array("d", bytes(8 * a.rows * b.rows))
    K.matmul_nt(a.data, b.data, out, a.rows, a.cols, b.rows)
    return Tensor2(a.rows, b.rows, out, check=False)


def _same_shape(a: Tensor2, b: Tensor2, opname: str):
    if a.shape != b.shape:
        raise ShapeError(f"{opname} {a.shape} vs {b.shape}")


def add(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_shape(a, b, "add")
    out = array("d", bytes(8 * a.size))
    K.add(a.data, b.data, out, a.size)
    return Tensor2(a.rows, a.cols, out, check=False)


def add_vjp(cot: Tensor2):
    return cot, cot


def sub(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_shape(a, b, "sub")
    out = array("d", bytes(8 * a.size))
    K.sub(a.data, b.data, out, a.size)
    return Tensor2(a.rows, a.cols, out, check=False)


def hadamard(a: Tensor2, b: Tensor2) -> Tensor2:
    _same_shape(a, b, "hadamard")
    out = array("d", bytes(8 * a.size))
    K.mul(a.data, b.data, out, a.size)
    return Tensor2(a.rows, a.cols, out, check=False)


def hadamard_vjp(a: Tensor2, b: Tensor2, cot: Tensor2):
    return hadamard(cot, b), hadamard(cot, a)


def scale(a: Tensor2, s: float) -> Tensor2:
    out = array("d", bytes(8 * a.size))
    K.scale(a.data, s, out, a.size)
    return Tensor2(a.rows, a.cols, out, check=False)


def scale_vjp(s: float, cot: Tensor2) -> Tensor2:
    return scale(cot, s)


def dot(a: Tensor2, b: Tensor2) -> float:
    _same_shape(a, b, "dot")
    return K.dot(a.data, b.data, a.size)


def norm(a: Tensor2) -> float:
    return math.sqrt(K.dot(a.data, a.data, a.size))


def mean_rows(t: Tensor2) -> Tensor2:
    """Column means as a 1 x cols tensor (rows summed in ascending order)."""
    if t.rows == 0:
        raise ShapeError("mean of zero rows")
    out = array("d", bytes(8 * t.cols))
    for i in range(t.rows):
        K.axpy(1.0, t.row(i), out, t.cols)
    K.scale(out, 1.0 / t.rows, out, t.cols)
    return Tensor2(1, t.cols, out, check=False)


def l2_normalize(v: Tensor2) -> Tensor2:
    n = norm(v)
    if n == 0.0:
        raise DegenerateInputError("cannot normalize the zero vector")
    return scale(v, 1.0 / n)


def l2_normalize_vjp(v: Tensor2, cot: Tensor2) -> Tensor2:
    """Projection Jacobian: (cot - <cot, y> y) / ||v|| with y = v/||v||."""
    n = norm(v)
    if n == 0.0:
        raise DegenerateInputError("cannot normalize the zero vector")
    y = scale(v, 1.0 / n)
    coef = dot(cot, y)
    out = array("d", cot.data)
    K.axpy(-coef, y.data, out, cot.size)
    K.scale(out, 1.0 / n, out, cot.size)
    return Tensor2(v.rows, v.cols, out, check=False)


def softmax(v: Tensor2) -> Tensor2:
    """Softmax over the flat entries, max-subtracted for stability."""
    if v.size == 0:
        raise ShapeError("softmax of empty tensor")
    out = array("d", bytes(8 * v.size))
    K.softmax_rows(v.data, out, 1, v.size)
    return Tensor2(v.rows, v.cols, out, check=False)


def softmax_rows(t: Tensor2) -> Tensor2:
    out = array("d", bytes(8 * t.size))
    K.softmax_rows(t.data, out, t.rows, t.cols)
    return Tensor2(t.rows, t.cols, out, check=False)


def softmax_vjp(y: Tensor2, cot: Tensor2) -> Tensor2:
    """VJP through softmax given its output ``y``: y * (cot - <cot, y>)."""
    coef = dot(cot, y)
    out = array("d", cot.data)
    for i in range(len(out)):
        out[i] = (out[i] - coef) * y.data[i]
    return Tensor2(y.rows, y.cols, out, check=False)


def softmax_rows_vjp(y: Tensor2, cot: Tensor2) -> Tensor2:
    out = array("d", bytes(8 * y.size))
    c = y.cols
    for r in range(y.rows):
        base = r * c
        coef = 0.0
        for j in range(c):
            coef += cot.data[base + j] * y.data[base + j]
        for j in range(c):
            out[base + j] = (cot.data[base + j] - coef) * y.data[base + j]
    return Tensor2(y.rows, y.cols, out, check=False)


def tanh(t: Tensor2) -> Tensor2:
    out = array("d", bytes(8 * t.size))
    K.tanh_vec(t.data, out, t.size)
    return Tensor2(t.rows, t.cols, out, check=False)


def tanh_vjp(y: Tensor2, cot: Tensor2) -> Tensor2:
    """VJP through tanh given its output ``y``: cot * (1 - y^2)."""
    out = array("d", bytes(8 * y.size))
    for i in range(y.size):
        out[i] = cot.data[i] * (1.0 - y.data[i] * y.data[i])
    return Tensor2(y.rows, y.cols, out, check=False)


def spectral_norm(w: Tensor2, iters: int = 2000, tol: float = 1e-14) -> float:
    """Largest singular value by power iteration on w^T w."""
    v = Tensor2(w.cols, 1, array("d", [1.0 / math.sqrt(w.cols)] * w.cols), check=False)
    prev = 0.0
    for _ in range(iters):
        u = matmul(w, v)
        v_new = matmul_tn(w, u)
        n = norm(v_new)
        if n == 0.0:
            return 0.0
        v = scale(v_new, 1.0 / n)
        sigma = norm(matmul(w, v))
        if abs(sigma - prev) <= tol * max(1.0, sigma):
            return sigma
        prev = sigma
    return prev


class Rng:
    """Deterministic counter-based stream (splitmix64 over seed and counter).

    The same seed yields the same draw sequence on any IEEE-754 platform:
    uniforms are dyadic rationals and normals are built from additions only
    (sum of 12 uniforms minus 6), so no libm rounding is involved.
    """

    __slots__ = ("seed", "counter")

    def __init__(self, seed: int):
        self.seed = seed & _MASK64
        self.counter = 0

    def next_u64(self) -> int:
        v = K.splitmix64(self.seed, self.counter)
        self.counter += 1
        return v

    def uniform(self) -> float:
        return (self.next_u64() >> 11) * (1.0 / 9007199254740992.0)

    def normal(self, std: float = 1.0) -> float:
        buf = array("d", bytes(8))
        self.counter = K.fill_normal(buf, 1, self.seed, self.counter)
        return buf[0] * std

    def normal_tensor(self, rows: int, cols: int, std: float = 1.0) -> Tensor2:
        buf = array("d", bytes(8 * rows * cols))
        self.counter = K.fill_normal(buf, rows * cols, self.seed, self.counter)
        if std != 1.0:
            K.scale(buf, std, buf, rows * cols)
        return Tensor2(rows, cols, buf, check=False)

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        limit = ((1 << 64) // n) * n
        while True:
            u = self.next_u64()
            if u < limit:
                return u % n

    def shuffle(self, seq: list) -> None:
        for i in range(len(seq) - 1, 0, -1):
            j = self.randbelow(i + 1)
            seq[i], seq[j] = seq[j], seq[i]

    def sample_indices(self, n: int, k: int) -> list:
        """k distinct indices from range(n), order-stable for a fixed seed."""
        if k > n:
            raise ValueError(f"cannot sample {k} of {n}")
        idx = list(range(n))
        for i in range(k):
            j = i + self.randbelow(n - i)
            idx[i], idx[j] = idx[j], idx[i]
        return idx[:k]

    def spawn(self, tag) -> "Rng":
        """Independent child stream derived from a label."""
        tag64 = fnv1a64(str(tag))
        return Rng(K.splitmix64(self.seed ^ tag64, tag64))
