"""Gradient-ascent steps over ``PolicyParameters`` snapshots."""

from abc import ABC, abstractmethod
from typing import Optional

import numpy as np

from ..core.exceptions import ConfigurationError
from .policy_net import PolicyParameters


class PolicyOptimizer(ABC):
    """Turns a (clipped) gradient into a new parameter snapshot.

    Steps ascend: the gradient is of the expected reward.
    """

    def __init__(self, eta: float):
        if eta <= 0:
            raise ConfigurationError(f"learning rate must be positive, got {eta}")
        self.eta = eta

    @abstractmethod
    def step(self, params: PolicyParameters, grad: PolicyParameters) -> PolicyParameters:
        """Return the updated snapshot; ``params`` is left untouched."""


class SgdOptimizer(PolicyOptimizer):
    """θ ← θ + η·g."""

    def step(self, params: PolicyParameters, grad: PolicyParameters) -> PolicyParameters:
        return params.scaled_add(grad, self.eta)


class AdamOptimizer(PolicyOptimizer):
    """Adam with bias-corrected moments, ascending."""

    def __init__(self, eta: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        super().__init__(eta)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m: Optional[PolicyParameters] = None
        self._v: Optional[PolicyParameters] = None

    def step(self, params: PolicyParameters, grad: PolicyParameters) -> PolicyParameters:
        # A zero gradient leaves θ and the moments exactly as they were.
        if not any(np.any(block) for block in grad.blocks().values()):
            return params

        if self._m is None or self._v is None:
            self._m = grad.zeros_like()
            self._v = grad.zeros_like()

        self.t += 1
        b1, b2 = self.beta1, self.beta2
        self._m = self._m.combine(grad, lambda m, g: b1 * m + (1.0 - b1) * g)
        self._v = self._v.combine(grad, lambda v, g: b2 * v + (1.0 - b2) * g * g)

        m_scale = 1.0 / (1.0 - b1 ** self.t)
        v_scale = 1.0 / (1.0 - b2 ** self.t)
        direction = self._m.combine(
            self._v, lambda m, v: (m * m_scale) / (np.sqrt(v * v_scale) + self.eps)
        )
        return params.scaled_add(direction, self.eta)


def make_optimizer(name: str, eta: float) -> PolicyOptimizer:
    if name == "sgd":
        return SgdOptimizer(eta)
    if name == "adam":
        return AdamOptimizer(eta)
    raise ConfigurationError(f"Unknown optimizer: {name}", "expected 'adam' or 'sgd'")
