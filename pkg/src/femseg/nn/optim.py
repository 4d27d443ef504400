"""Adam over a name -> array parameter mapping, updated in place."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from femseg.errors import ConfigError, ShapeMismatch


@dataclass
class OptimizerConfig:
    beta1: float = 0.9
    beta2: float = 0.999
    learning_rate: float = 1e-4
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError(f"Adam betas must lie in [0, 1), got {self.beta1}, {self.beta2}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be positive, got {self.learning_rate}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")


@dataclass
class Adam:
    cfg: OptimizerConfig = field(default_factory=OptimizerConfig)
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        """Apply one bias-corrected Adam update to every parameter that has a gradient."""
        for name, g in grads.items():
            if params[name].shape != g.shape:
                raise ShapeMismatch(f"gradient for {name!r} has shape {g.shape}, parameter {params[name].shape}")
        self.t += 1
        c = self.cfg
        bc1 = 1 - c.beta1**self.t
        bc2 = 1 - c.beta2**self.t
        for name, g in grads.items():
            p = params[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= c.beta1
            m += (1 - c.beta1) * g
            v *= c.beta2
            v += (1 - c.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p -= (c.learning_rate * mhat / (np.sqrt(vhat) + c.epsilon)).astype(p.dtype, copy=False)


def adam_step(params, grads, cfg: OptimizerConfig, state: Adam | None = None) -> Adam:
    """Functional wrapper: update ``params`` in place and return the optimizer state."""
    state = state if state is not None else Adam(cfg)
    state.step(params, grads)
    return state
