"""Checked float64 array math and a reproducible counter-based RNG.

Arrays exchanged between modules are plain ``numpy.ndarray`` values,
float64, row-major. The wrappers here add explicit shape checks and a
non-finite guard so that a NaN or Inf produced anywhere surfaces as an
exception instead of silently propagating through a training run.
"""

from __future__ import annotations

import numpy as np

EXP_FLOOR = -60.0  # exponent clamp shared by the exponential activations


class ShapeError(ValueError):
    """Operand shapes violate an operation's precondition."""


class NonFiniteError(ArithmeticError):
    """An operation produced NaN or Inf."""


def tensor(data) -> np.ndarray:
    """Coerce nested lists / scalars / arrays to a float64 ndarray."""
    return np.asarray(data, dtype=np.float64)


def check_finite(t: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(t)):
        raise NonFiniteError(f"{what} contains NaN or Inf")
    return t


def _same_shape(a: np.ndarray, b: np.ndarray, op: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes {a.shape} and {b.shape} differ")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of two 2-d arrays with an inner-extent check."""
    a = tensor(a)
    b = tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-d operands, got {a.ndim}-d and {b.ndim}-d")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner extents {a.shape[1]} and {b.shape[0]} differ")
    return check_finite(a @ b, "matmul result")


def add(a, b) -> np.ndarray:
    a, b = tensor(a), tensor(b)
    _same_shape(a, b, "add")
    return check_finite(a + b, "add result")


def sub(a, b) -> np.ndarray:
    a, b = tensor(a), tensor(b)
    _same_shape(a, b, "sub")
    return check_finite(a - b, "sub result")


def mul(a, b) -> np.ndarray:
    a, b = tensor(a), tensor(b)
    _same_shape(a, b, "mul")
    return check_finite(a * b, "mul result")


def scale(t, s: float) -> np.ndarray:
    return check_finite(tensor(t) * float(s), "scale result")


def emap(t, fn) -> np.ndarray:
    """Apply a scalar function elementwise."""
    t = tensor(t)
    out = np.array([fn(v) for v in t.ravel()], dtype=np.float64).reshape(t.shape)
    return check_finite(out, "emap result")


def _check_reducible(t: np.ndarray, axis, op: str) -> None:
    if t.size == 0:
        raise ShapeError(f"{op}: tensor is empty")
    if axis is not None and not 0 <= axis < t.ndim:
        raise ShapeError(f"{op}: axis {axis} out of range for rank {t.ndim}")


def reduce_sum(t, axis: int | None = None) -> np.ndarray:
    t = tensor(t)
    _check_reducible(t, axis, "reduce_sum")
    return check_finite(np.sum(t, axis=axis), "reduce_sum result")


def reduce_mean(t, axis: int | None = None) -> np.ndarray:
    t = tensor(t)
    _check_reducible(t, axis, "reduce_mean")
    return check_finite(np.mean(t, axis=axis), "reduce_mean result")


def reduce_max(t, axis: int | None = None) -> np.ndarray:
    t = tensor(t)
    _check_reducible(t, axis, "reduce_max")
    return check_finite(np.max(t, axis=axis), "reduce_max result")


class Rng:
    """Seeded random source backed by the Philox 4x32-10 counter-based
    generator, so a given (seed, stream) pair yields the same sequence on
    every platform and in every process.

    ``stream`` selects an independent substream of the same seed; the
    package uses fixed stream ids to decouple weight init, dropout masks
    and data shuffling.
    """

    def __init__(self, seed: int, stream: int = 0):
        seed = int(seed)
        stream = int(stream)
        if seed < 0 or stream < 0:
            raise ValueError("seed and stream must be non-negative")
        self.seed = seed
        self.stream = stream
        key = (seed & 0xFFFFFFFFFFFFFFFF) | (stream << 64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "Rng":
        """Independent generator for the same seed."""
        return Rng(self.seed, stream)

    def normal(self, shape=(), loc: float = 0.0, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(loc, std, size=shape)

    def uniform(self, shape=(), low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)
