"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


class MissingGradientError(ValueError):
    """adam_step was called while some parameter has no accumulated gradient."""


@dataclass
class AdamState:
    """Step counter and per-parameter moment buffers, keyed by parameter name."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(
        cls,
        params: dict[str, Tensor],
        learning_rate: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
    ) -> "AdamState":
        return cls(
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon=epsilon,
            first_moment={name: np.zeros_like(p.data) for name, p in params.items()},
            second_moment={name: np.zeros_like(p.data) for name, p in params.items()},
        )


def adam_step(params: dict[str, Tensor], state: AdamState) -> AdamState:
    """Apply one bias-corrected Adam update in place and clear gradients.

    Every parameter must carry a gradient from a preceding backward();
    gradients are cleared (set to None) after the update so a stale
    gradient can never be consumed twice.
    """
    missing = [name for name, p in params.items() if p.grad is None]
    if missing:
        raise MissingGradientError(f"no gradient for parameter(s): {', '.join(missing)}")
    for name, p in params.items():
        if p.grad.shape != p.data.shape:
            raise MissingGradientError(
                f"gradient shape {p.grad.shape} does not match parameter {name} {p.data.shape}"
            )
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1**t
    bias2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        m = state.first_moment[name]
        v = state.second_moment[name]
        np.copyto(m, b1 * m + (1.0 - b1) * g)
        np.copyto(v, b2 * v + (1.0 - b2) * (g * g))
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.epsilon)
        p.grad = None
    return state
