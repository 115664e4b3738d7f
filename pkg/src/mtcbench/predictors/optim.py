"""Adam with bias correction over a flat parameter vector."""
from dataclasses import dataclass

import numpy as np

from ..exceptions import ConfigurationError, NumericalError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 50
    batch_size: int = 64
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigurationError("moment decays must lie in [0, 1)")


@dataclass(frozen=True)
class AdamMoments:
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def zeros(cls, n, dtype=np.float64):
        return cls(np.zeros(n, dtype), np.zeros(n, dtype))


def adam_step(params, grads, moments, step_index, config):
    """One Adam update; returns ``(new_params, new_moments)``.

    ``params`` and ``grads`` are flat arrays; ``step_index`` counts from 1.
    """
    if step_index < 1:
        raise ConfigurationError("step_index counts from 1")
    if params.shape != grads.shape or moments.m.shape != params.shape:
        raise ConfigurationError("parameter, gradient and moment shapes differ")
    if not np.all(np.isfinite(grads)):
        raise NumericalError("non-finite gradient passed to adam_step", layer="optimizer")
    b1, b2 = config.beta1, config.beta2
    m = moments.m * b1
    m += (1.0 - b1) * grads
    v = moments.v * b2
    v += (1.0 - b2) * grads * grads
    # bias corrections folded into scalars: lr * m_hat / (sqrt(v_hat) + eps)
    denom = np.sqrt(v)
    denom *= 1.0 / np.sqrt(1.0 - b2**step_index)
    denom += config.eps
    step = m / denom
    step *= config.learning_rate / (1.0 - b1**step_index)
    new = params - step
    return new.astype(params.dtype, copy=False), AdamMoments(m, v)
