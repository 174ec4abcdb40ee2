"""Gradient-flow analysis on a scalar chain network.

For a depth-L chain x -> w1 -> f -> w2 -> f -> ... the loss gradient with
respect to an early weight carries one factor f'(h_j) * w_j per downstream
layer, so gradients vanish when that per-layer amplification sits below 1.
This module evaluates the amplification for PELU, the closed-form length
of the negative-preactivation interval on which it stays >= 1, the weight
that maximizes that length, and independent oracles (grid scan, root
finding, backprop) that verify the closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .activations import ActivationKind, LRELU_DEFAULT_SLOPE, act_deriv, act_forward

W_MAX_FACTOR = 10.0  # default scan range: [b/a, 10*e*b/a], brackets the optimum


def amplification(w: float, h: float, a: float, b: float) -> float:
    """Per-layer gradient gain f'(w*h) * w: w*a/b on the non-negative side,
    w*(a/b)*exp(w*h/b) for negative h."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("a and b must be positive")
    if h >= 0.0:
        return w * a / b
    return w * (a / b) * np.exp(w * h / b)


def interval_length(w: float, a: float, b: float) -> float:
    """Length of the negative-h interval where the amplification stays >= 1:
    |log((b/a)/w)| * (b/w), defined for w >= b/a."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("a and b must be positive")
    if w < b / a:
        raise ValueError(f"interval_length requires w >= b/a = {b / a}, got {w}")
    return abs(np.log((b / a) / w)) * (b / w)


def optimal_weight(a: float, b: float) -> tuple[float, float]:
    """Weight maximizing the interval length, and that maximum:
    (e * b/a, a/e)."""
    if a <= 0.0 or b <= 0.0:
        raise ValueError("a and b must be positive")
    return float(np.e * b / a), float(a / np.e)


def empirical_interval_length(w: float, a: float, b: float, *,
                              residual_tol: float = 1e-12) -> float:
    """Interval length measured directly: bisect amplification(w, h) = 1
    over h < 0. The negative branch is monotone in h, so bisection is safe.
    """
    if w < b / a:
        raise ValueError(f"requires w >= b/a = {b / a}, got {w}")
    if amplification(w, -0.0, a, b) <= 1.0 + residual_tol:
        return 0.0  # boundary case w == b/a: gain reaches 1 only at h = 0
    lo = -1.0
    while amplification(w, lo, a, b) > 1.0:
        lo *= 2.0
        if lo < -1e12:
            raise ArithmeticError("failed to bracket the unit-gain point")
    hi = 0.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g = amplification(w, mid, a, b) - 1.0
        if abs(g) <= residual_tol:
            return -mid
        if g > 0.0:
            hi = mid
        else:
            lo = mid
    return -0.5 * (lo + hi)


def brute_force_optimum(a: float, b: float, w_grid: np.ndarray | None = None, *,
                        n_points: int = 100_001, w_max: float | None = None,
                        cross_check_tol: float = 1e-6) -> tuple[float, float]:
    """Grid-scan oracle for the optimal weight.

    Scans interval_length over a dense grid starting at b/a, returns the
    argmax, and cross-checks the closed form against the root-finding
    measurement at the best point and a few sampled ones.
    """
    if a <= 0.0 or b <= 0.0:
        raise ValueError("a and b must be positive")
    if w_grid is None:
        if w_max is None:
            w_max = W_MAX_FACTOR * np.e * b / a
        w_grid = np.linspace(b / a, w_max, n_points)
    else:
        w_grid = np.asarray(w_grid, dtype=np.float64)
    if w_grid.ndim != 1 or w_grid.size < 3:
        raise ValueError("w_grid must be a 1-d grid with at least 3 points")
    lengths = np.abs(np.log((b / a) / w_grid)) * (b / w_grid)
    best = int(np.argmax(lengths))
    if best == 0 or best == w_grid.size - 1:
        raise ValueError("grid does not bracket the optimum")
    w_best = float(w_grid[best])
    l_best = float(lengths[best])
    for w in [w_best, *w_grid[1:-1:max(1, w_grid.size // 4)]]:
        measured = empirical_interval_length(float(w), a, b)
        if abs(measured - interval_length(float(w), a, b)) > cross_check_tol:
            raise ArithmeticError(
                f"closed form and root finding disagree at w={w}")
    return w_best, l_best


@dataclass
class ChainNet:
    """One-neuron-per-layer network: z_0 = x, h_l = w_l * z_(l-1),
    z_l = f(h_l), with squared-error loss 0.5 * (z_L - y)^2."""

    weights: np.ndarray
    kind: ActivationKind = ActivationKind.PELU
    a: float = 1.0
    b: float = 1.0
    slope: float = LRELU_DEFAULT_SLOPE

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 1 or self.weights.size < 1:
            raise ValueError("ChainNet needs at least one weight")

    @property
    def depth(self) -> int:
        return self.weights.size

    def _f(self, h: float) -> float:
        return float(act_forward(self.kind, h, a=self.a, b=self.b, slope=self.slope))

    def _fprime(self, h: float) -> float:
        return float(act_deriv(self.kind, h, a=self.a, b=self.b, slope=self.slope))


def chain_forward(net: ChainNet, x: float) -> tuple[np.ndarray, np.ndarray]:
    """Pre-activations h_1..h_L and activations z_0..z_L."""
    hs = np.empty(net.depth)
    zs = np.empty(net.depth + 1)
    zs[0] = x
    for l in range(net.depth):
        hs[l] = net.weights[l] * zs[l]
        zs[l + 1] = net._f(hs[l])
    return hs, zs


def chain_gradient(net: ChainNet, x: float, y: float, k: int) -> float:
    """dE/dw_k by reverse-mode propagation through the chain (k is 1-based)."""
    if not 1 <= k <= net.depth:
        raise ValueError(f"k must be in [1, {net.depth}], got {k}")
    hs, zs = chain_forward(net, x)
    dz = zs[-1] - y
    grad_k = 0.0
    for l in range(net.depth, 0, -1):
        dh = dz * net._fprime(hs[l - 1])
        if l == k:
            grad_k = dh * zs[l - 1]
        dz = dh * net.weights[l - 1]
    return float(grad_k)


def chain_gradient_formula(net: ChainNet, x: float, y: float, k: int) -> float:
    """dE/dw_k as the explicit product
    z_(k-1) * f'(h_k) * prod_(j>k) [f'(h_j) * w_j] * dE/dz_L."""
    if not 1 <= k <= net.depth:
        raise ValueError(f"k must be in [1, {net.depth}], got {k}")
    hs, zs = chain_forward(net, x)
    prod = 1.0
    for j in range(k + 1, net.depth + 1):
        prod *= net._fprime(hs[j - 1]) * net.weights[j - 1]
    return float(zs[k - 1] * net._fprime(hs[k - 1]) * prod * (zs[-1] - y))
