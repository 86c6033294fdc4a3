from abc import ABC, abstractmethod
from typing import Callable

import numpy as np

Nonlinearity = Callable[[np.ndarray], np.ndarray]


class BaseTimeScheme(ABC):
    """
    Abstract base class for one-step integrators of
    d/dt f(xi) = Lambda^eps(xi) f(xi) + (1/eps) N[f](xi).

    Fields are arrays of shape (K, N): one velocity field per lattice mode.
    """

    name = "base"
    order = 1

    def __init__(self, **kwargs):
        """
        Initializes the scheme.

        Args:
            **kwargs: Scheme-specific options.
        """
        self.options = kwargs

    @abstractmethod
    def step(self, fields: np.ndarray, eps: float, dt: float, propagators, nonlinearity: Nonlinearity) -> np.ndarray:
        """
        Advances the fields by one step.

        Args:
            fields (np.ndarray): Mode fields at the current time, shape (K, N).
            eps (float): Knudsen number.
            dt (float): Step size in macroscopic time.
            propagators: PropagatorCache providing exp(t Lambda) and phi-functions per mode.
            nonlinearity (Callable): Maps fields to the collision term N[f], shape (K, N).

        Returns:
            np.ndarray: Mode fields after one step.
        """
        pass

    @staticmethod
    def apply_modewise(matrices, fields: np.ndarray) -> np.ndarray:
        return np.einsum("kij,kj->ki", matrices, fields)
