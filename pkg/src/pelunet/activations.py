"""Activation functions: learnable PELU plus fixed and learnable baselines.

PELU computes ``(a / b) * h`` for non-negative inputs and
``a * (exp(h / b) - 1)`` below zero, with both shape parameters strictly
positive. The two pieces meet at zero with value 0 and slope ``a / b``,
so the function is differentiable everywhere: ``a`` sets the depth of the
negative saturation plateau (the function tends to ``-a``) and ``b`` the
scale of the exponential approach to it.

Each activation layer learns one (a, b) pair. What is actually stored and
updated is configurable (:class:`ParamConfig`): either parameter may be
kept directly or as its reciprocal. All four storage choices compute the
same function for matched effective values; they differ in what weight
decay and the positivity floor act on.
"""

from __future__ import annotations

from enum import Enum

import numpy as np

from .tensor import EXP_FLOOR, ShapeError, tensor

PARAM_FLOOR = 0.1  # stored activation parameters never drop below this
PRELU_INIT_SLOPE = 0.25
LRELU_DEFAULT_SLOPE = 0.01


class ParamConfig(Enum):
    """Which of {a, 1/a} x {b, 1/b} is stored and learned."""

    A_B = "a_b"
    A_INVB = "a_invb"
    INVA_B = "inva_b"
    INVA_INVB = "inva_invb"


# (first slot stores 1/a, second slot stores 1/b)
_RECIPROCAL = {
    ParamConfig.A_B: (False, False),
    ParamConfig.A_INVB: (False, True),
    ParamConfig.INVA_B: (True, False),
    ParamConfig.INVA_INVB: (True, True),
}

DEFAULT_PARAM_CONFIG = ParamConfig.A_INVB


class ActivationKind(Enum):
    PELU = "pelu"
    ELU = "elu"
    RELU = "relu"
    LRELU = "lrelu"
    PRELU = "prelu"


class PeluParams:
    """Stored PELU state for one layer: scalars p and q (each holding a
    parameter or its reciprocal, per ``config``) plus momentum buffers.

    p and q are 0-d float64 arrays so the optimizer can update them in
    place through a shared reference; they stay >= ``PARAM_FLOOR`` which
    keeps both effective parameters positive under every config.
    """

    def __init__(self, config: ParamConfig = DEFAULT_PARAM_CONFIG,
                 p: float = 1.0, q: float = 1.0):
        if p < PARAM_FLOOR or q < PARAM_FLOOR:
            raise ValueError(f"stored parameters must be >= {PARAM_FLOOR}")
        self.config = config
        self.p = np.asarray(float(p), dtype=np.float64)
        self.q = np.asarray(float(q), dtype=np.float64)
        self.vp = np.asarray(0.0, dtype=np.float64)
        self.vq = np.asarray(0.0, dtype=np.float64)

    @classmethod
    def from_effective(cls, a: float, b: float,
                       config: ParamConfig = DEFAULT_PARAM_CONFIG) -> "PeluParams":
        """Build storage so the effective parameters come out as (a, b)."""
        recip_a, recip_b = _RECIPROCAL[config]
        return cls(config, 1.0 / a if recip_a else a, 1.0 / b if recip_b else b)

    def effective(self) -> tuple[float, float]:
        return effective_params(self)

    def __repr__(self) -> str:
        a, b = self.effective()
        return f"PeluParams({self.config.value}, a={a:.4g}, b={b:.4g})"


def effective_params(params: PeluParams) -> tuple[float, float]:
    """Recover the effective (a, b) from the stored (p, q)."""
    p, q = float(params.p), float(params.q)
    recip_a, recip_b = _RECIPROCAL[params.config]
    return (1.0 / p if recip_a else p), (1.0 / q if recip_b else q)


def stored_param_grads(params: PeluParams, de_da: float, de_db: float) -> tuple[float, float]:
    """Chain effective-parameter gradients back onto the stored (p, q).

    A reciprocal slot stores r with value = 1/r, so d(value)/dr = -1/r^2.
    """
    p, q = float(params.p), float(params.q)
    recip_a, recip_b = _RECIPROCAL[params.config]
    de_dp = de_da * (-1.0 / (p * p)) if recip_a else de_da
    de_dq = de_db * (-1.0 / (q * q)) if recip_b else de_db
    return de_dp, de_dq


def _check_ab(a: float, b: float) -> None:
    if a <= 0.0 or b <= 0.0:
        raise ValueError(f"activation parameters must be positive, got a={a}, b={b}")


def _exp_hb(h: np.ndarray, b: float) -> np.ndarray:
    # exp underflows harmlessly but denormal flushes can be noisy; the
    # clamp changes the value by < 1e-26 * a, far below every tolerance.
    return np.exp(np.maximum(h / b, EXP_FLOOR))


def _expm1_hb(h: np.ndarray, b: float) -> np.ndarray:
    # expm1 keeps exp(h/b) - 1 accurate near zero, which the one-sided
    # derivative checks at h = 0 rely on.
    return np.expm1(np.maximum(h / b, EXP_FLOOR))


def pelu_forward(h, a: float, b: float) -> np.ndarray:
    """Elementwise (a/b)*h for h >= 0, a*(exp(h/b) - 1) for h < 0."""
    _check_ab(a, b)
    h = tensor(h)
    return np.where(h >= 0.0, (a / b) * h, a * _expm1_hb(h, b))


def pelu_deriv(h, a: float, b: float) -> np.ndarray:
    """Elementwise derivative: a/b for h >= 0, (a/b)*exp(h/b) for h < 0.

    Both branches equal a/b at h = 0; zero is assigned to the linear one.
    """
    _check_ab(a, b)
    h = tensor(h)
    return np.where(h >= 0.0, a / b, (a / b) * _exp_hb(h, b))


def pelu_backward_input(h, a: float, b: float, upstream) -> np.ndarray:
    """upstream * f'(h), elementwise."""
    h, upstream = tensor(h), tensor(upstream)
    if h.shape != upstream.shape:
        raise ShapeError(f"pelu_backward_input: shapes {h.shape} and {upstream.shape} differ")
    return upstream * pelu_deriv(h, a, b)


def pelu_backward_params(h, a: float, b: float, upstream) -> tuple[float, float]:
    """Gradients of the loss with respect to the effective (a, b).

    df/da is h/b on the linear branch and exp(h/b) - 1 on the negative
    branch; df/db is -a*h/b^2 and -(a*h/b^2)*exp(h/b) respectively. Each
    is weighted by the upstream gradient and summed over all elements.
    """
    _check_ab(a, b)
    h, upstream = tensor(h), tensor(upstream)
    if h.shape != upstream.shape:
        raise ShapeError(f"pelu_backward_params: shapes {h.shape} and {upstream.shape} differ")
    df_da = np.where(h >= 0.0, h / b, _expm1_hb(h, b))
    df_db = np.where(h >= 0.0, -a * h / (b * b), -(a * h / (b * b)) * _exp_hb(h, b))
    return float(np.sum(upstream * df_da)), float(np.sum(upstream * df_db))


def elu_forward(h, alpha: float = 1.0) -> np.ndarray:
    """Identity for h >= 0, alpha*(exp(h) - 1) below zero."""
    h = tensor(h)
    return np.where(h >= 0.0, h, alpha * np.expm1(np.maximum(h, EXP_FLOOR)))


def elu_deriv(h, alpha: float = 1.0) -> np.ndarray:
    h = tensor(h)
    return np.where(h >= 0.0, 1.0, alpha * np.exp(np.maximum(h, EXP_FLOOR)))


def relu_forward(h) -> np.ndarray:
    return np.maximum(tensor(h), 0.0)


def relu_deriv(h) -> np.ndarray:
    return np.where(tensor(h) >= 0.0, 1.0, 0.0)


def lrelu_forward(h, slope: float) -> np.ndarray:
    """max(h, 0) + slope * min(h, 0)."""
    if slope <= 0.0:
        raise ValueError("leaky slope must be positive")
    h = tensor(h)
    return np.where(h >= 0.0, h, slope * h)


def lrelu_deriv(h, slope: float) -> np.ndarray:
    return np.where(tensor(h) >= 0.0, 1.0, slope)


def prelu_forward(h, slope: float) -> np.ndarray:
    # same function as the leaky variant; the slope is learned, may be any value
    h = tensor(h)
    return np.where(h >= 0.0, h, slope * h)


def prelu_backward(h, upstream, slope: float) -> tuple[np.ndarray, float]:
    """Input gradient plus the learned-slope gradient sum(up * min(h, 0))."""
    h, upstream = tensor(h), tensor(upstream)
    if h.shape != upstream.shape:
        raise ShapeError(f"prelu_backward: shapes {h.shape} and {upstream.shape} differ")
    dh = upstream * np.where(h >= 0.0, 1.0, slope)
    dslope = float(np.sum(upstream * np.minimum(h, 0.0)))
    return dh, dslope


def act_forward(kind: ActivationKind, h, *, a: float = 1.0, b: float = 1.0,
                slope: float = LRELU_DEFAULT_SLOPE) -> np.ndarray:
    if kind is ActivationKind.PELU:
        return pelu_forward(h, a, b)
    if kind is ActivationKind.ELU:
        return elu_forward(h)
    if kind is ActivationKind.RELU:
        return relu_forward(h)
    if kind is ActivationKind.LRELU:
        return lrelu_forward(h, slope)
    if kind is ActivationKind.PRELU:
        return prelu_forward(h, slope)
    raise ValueError(f"unknown activation kind {kind!r}")


def act_deriv(kind: ActivationKind, h, *, a: float = 1.0, b: float = 1.0,
              slope: float = LRELU_DEFAULT_SLOPE) -> np.ndarray:
    if kind is ActivationKind.PELU:
        return pelu_deriv(h, a, b)
    if kind is ActivationKind.ELU:
        return elu_deriv(h)
    if kind is ActivationKind.RELU:
        return relu_deriv(h)
    if kind is ActivationKind.LRELU:
        return lrelu_deriv(h, slope)
    if kind is ActivationKind.PRELU:
        return np.where(tensor(h) >= 0.0, 1.0, slope)
    raise ValueError(f"unknown activation kind {kind!r}")
