import numpy as np

from .base_scheme import BaseTimeScheme, Nonlinearity


class StrangSplit(BaseTimeScheme):
    """Half linear step, midpoint (RK2) collision step, half linear step."""

    name = "strang-split"
    order = 2

    def step(self, fields: np.ndarray, eps: float, dt: float, propagators, nonlinearity: Nonlinearity) -> np.ndarray:
        half = propagators.exponentials(0.5 * dt)
        state = self.apply_modewise(half, fields)
        first = nonlinearity(state)
        if np.any(first):
            midpoint = state + (0.5 * dt / eps) * first
            state = state + (dt / eps) * nonlinearity(midpoint)
        return self.apply_modewise(half, state)
