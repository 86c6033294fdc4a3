import numpy as np

from .base_scheme import BaseTimeScheme, Nonlinearity


class ExponentialEuler(BaseTimeScheme):
    """f <- exp(dt Lambda) f + (dt/eps) phi1(dt Lambda) N[f]."""

    name = "exponential-euler"
    order = 1

    def step(self, fields: np.ndarray, eps: float, dt: float, propagators, nonlinearity: Nonlinearity) -> np.ndarray:
        expo, phi1, _ = propagators.phi_functions(dt)
        out = self.apply_modewise(expo, fields)
        forcing = nonlinearity(fields)
        if np.any(forcing):
            out += (dt / eps) * self.apply_modewise(phi1, forcing)
        return out
