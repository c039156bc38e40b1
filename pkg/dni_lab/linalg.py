#!/usr/bin/env python3
"""
Linear Algebra Helpers
Checked dense fp64 matrix operations and the seeded random number generator

Matrices are 2-D C-contiguous float64 numpy arrays, one sample per row.
Random streams are PCG64 seeded through numpy's SeedSequence; child streams are
derived from (seed, keys) so parallel work never shares a generator.
"""

from typing import Optional

import numpy as np

from dni_lab.errors import NonFiniteError, ShapeError, UndefinedCorrelationError

Matrix = np.ndarray


def as_matrix(x, name: str = "matrix") -> Matrix:
    """Convert to a 2-D float64 array, rejecting anything that is not 2-D"""
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", arr.shape)
    return arr


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Matrix product with an explicit shape check"""
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul dimension mismatch", a.shape, b.shape)
    return a @ b


def transpose(a: Matrix) -> Matrix:
    return np.ascontiguousarray(a.T)


def add(a: Matrix, b: Matrix) -> Matrix:
    if a.shape != b.shape:
        raise ShapeError("add shape mismatch", a.shape, b.shape)
    return a + b


def scale(a: Matrix, factor: float) -> Matrix:
    return a * float(factor)


def frobenius_norm(a: Matrix) -> float:
    return float(np.sqrt(np.sum(np.square(a))))


def is_finite(*arrays) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrays)


def check_finite(name: str, *arrays) -> None:
    """Raise NonFiniteError naming the quantity if any entry is NaN/Inf"""
    for a in arrays:
        arr = np.asarray(a)
        if not np.all(np.isfinite(arr)):
            bad = int(np.size(arr) - np.count_nonzero(np.isfinite(arr)))
            raise NonFiniteError(name, f"{bad} of {arr.size} entries")


def pearson(u, v) -> float:
    """Pearson correlation of two equal-length vectors"""
    u = np.asarray(u, dtype=np.float64).ravel()
    v = np.asarray(v, dtype=np.float64).ravel()
    if u.shape != v.shape or u.size < 2:
        raise ShapeError("pearson needs equal-length vectors of length >= 2", u.shape, v.shape)
    du = u - u.mean()
    dv = v - v.mean()
    nu = np.sqrt(np.dot(du, du))
    nv = np.sqrt(np.dot(dv, dv))
    if nu == 0.0 or nv == 0.0:
        raise UndefinedCorrelationError("correlation is undefined for a constant vector")
    r = float(np.dot(du, dv) / (nu * nv))
    return min(1.0, max(-1.0, r))


class Rng:
    """Seeded random stream (PCG64 via SeedSequence)"""

    def __init__(self, seed: int, spawn_key: tuple = ()):
        self.seed = int(seed)
        self.spawn_key = tuple(int(k) for k in spawn_key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self._gen = np.random.Generator(np.random.PCG64(sequence))

    def child(self, *keys: int) -> "Rng":
        """Independent stream derived deterministically from this one's seed"""
        return Rng(self.seed, self.spawn_key + tuple(int(k) for k in keys))

    def gaussian(self, rows: int, cols: int, std: float = 1.0) -> Matrix:
        return self._gen.standard_normal((rows, cols)) * std

    def uniform_int(self, low: int, high: int, size: int) -> np.ndarray:
        return self._gen.integers(low, high, size=size)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def gaussian(rng: Rng, rows: int, cols: int, std: float = 1.0) -> Matrix:
    """Matrix of i.i.d. N(0, std^2) entries"""
    return rng.gaussian(rows, cols, std)


def relative_error(a, b, floor: float = 1e-12) -> float:
    """max|a-b| / max(max|a|, max|b|, floor) -- used by the gradient checks"""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(float(np.max(np.abs(a), initial=0.0)), float(np.max(np.abs(b), initial=0.0)), floor)
    return float(np.max(np.abs(a - b), initial=0.0) / denom)


def column_space_projector(m: Matrix, rcond: Optional[float] = None) -> Matrix:
    """Orthogonal projector onto the span of the columns of m"""
    pinv = np.linalg.pinv(m, rcond=1e-12 if rcond is None else rcond)
    return m @ pinv
