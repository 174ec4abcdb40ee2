"""Momentum SGD with coupled weight decay and a positivity floor for
constrained activation parameters."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .activations import PARAM_FLOOR
from .layers import Parameter


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.0
    weight_decay: float = 0.0
    decay_on_activation_params: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")


def step_unconstrained(param: np.ndarray, grad: np.ndarray, velocity: np.ndarray,
                       cfg: SgdConfig) -> tuple[np.ndarray, np.ndarray]:
    """v <- mu*v - lr*(grad + wd*param); param <- param + v."""
    if param.shape != grad.shape or param.shape != velocity.shape:
        shapes = (param.shape, grad.shape, velocity.shape)
        raise ValueError(f"step_unconstrained: mismatched shapes {shapes}")
    v = cfg.momentum * velocity - cfg.learning_rate * (grad + cfg.weight_decay * param)
    return param + v, v


def step_constrained(value: float, grad: float, velocity: float, cfg: SgdConfig,
                     floor: float = PARAM_FLOOR) -> tuple[float, float]:
    """Same momentum step, then the value is clamped to the floor.

    The velocity is left unclamped on purpose: only the parameter is
    projected, the momentum buffer keeps its history.
    """
    v = cfg.momentum * velocity - cfg.learning_rate * (grad + cfg.weight_decay * value)
    return max(value + v, floor), v


class MomentumSgd:
    """Applies the two step rules across a parameter registry.

    Weight decay is skipped for parameters flagged ``decay=False`` (biases,
    batchnorm affine params) and, when ``decay_on_activation_params`` is
    off, for activation shape parameters as well.
    """

    def __init__(self, params: list[Parameter], cfg: SgdConfig):
        self.params = list(params)
        self.cfg = cfg

    def _cfg_for(self, p: Parameter) -> SgdConfig:
        decays = p.decay and (p.activation_param is False
                              or self.cfg.decay_on_activation_params)
        if decays or self.cfg.weight_decay == 0.0:
            return self.cfg
        return replace(self.cfg, weight_decay=0.0)

    def step(self) -> None:
        for p in self.params:
            cfg = self._cfg_for(p)
            if p.constrained:
                value, vel = step_constrained(float(p.value), float(p.grad),
                                              float(p.velocity), cfg)
                p.value[()] = value
                p.velocity[()] = vel
            else:
                value, vel = step_unconstrained(p.value, p.grad, p.velocity, cfg)
                p.value[...] = value
                p.velocity[...] = vel
