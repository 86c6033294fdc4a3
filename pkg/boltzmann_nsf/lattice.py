"""
Fourier lattice of spatial modes on the torus and the collocation transforms
used for pseudo-spectral products.
"""

from dataclasses import dataclass
from functools import cached_property
from itertools import product
from typing import Dict, Tuple

import numpy as np


@dataclass(frozen=True, eq=False)
class FourierLattice:
    """
    Integer modes xi with |xi_i| <= max_mode.

    With ``reduced_axis`` only multiples of the unit vector along ``axis`` are
    kept, i.e. fields vary along a single spatial direction.
    """

    max_mode: int = 4
    reduced_axis: bool = True
    axis: int = 0

    def __post_init__(self):
        if self.max_mode < 1:
            raise ValueError("max_mode must be >= 1")
        if self.axis not in (0, 1, 2):
            raise ValueError("axis must be 0, 1 or 2")

    @cached_property
    def modes(self) -> np.ndarray:
        ks = range(-self.max_mode, self.max_mode + 1)
        if self.reduced_axis:
            modes = np.zeros((2 * self.max_mode + 1, 3), dtype=np.int64)
            modes[:, self.axis] = list(ks)
            return modes
        return np.array(list(product(ks, repeat=3)), dtype=np.int64)

    @property
    def size(self) -> int:
        return len(self.modes)

    @cached_property
    def xi(self) -> np.ndarray:
        return self.modes.astype(float)

    @cached_property
    def index(self) -> Dict[Tuple[int, int, int], int]:
        return {tuple(int(c) for c in mode): k for k, mode in enumerate(self.modes)}

    @cached_property
    def negation(self) -> np.ndarray:
        return np.array([self.index[tuple(int(-c) for c in mode)] for mode in self.modes])

    @property
    def zero_index(self) -> int:
        return self.index[(0, 0, 0)]

    @property
    def dims(self) -> int:
        return 1 if self.reduced_axis else 3

    @property
    def collocation_points(self) -> int:
        """Points per active axis; 3M + 1 makes products alias-free on the lattice."""
        return 3 * self.max_mode + 1

    @cached_property
    def _active_modes(self) -> np.ndarray:
        return self.modes[:, [self.axis]] if self.reduced_axis else self.modes

    def _slots(self) -> Tuple[np.ndarray, ...]:
        n = self.collocation_points
        return tuple(np.mod(self._active_modes[:, d], n) for d in range(self.dims))

    def to_physical(self, fields: np.ndarray) -> np.ndarray:
        """Values sum_xi f(xi) e^{i xi.x} at the collocation points, shape (n^d, ...)."""
        fields = np.asarray(fields)
        n = self.collocation_points
        rest = fields.shape[1:]
        padded = np.zeros((n,) * self.dims + rest, dtype=complex)
        padded[self._slots()] = fields
        axes = tuple(range(self.dims))
        values = np.fft.ifftn(padded, axes=axes) * n ** self.dims
        return values.reshape((n ** self.dims,) + rest)

    def from_physical(self, values: np.ndarray) -> np.ndarray:
        """Fourier coefficients on the lattice of collocation values, shape (K, ...)."""
        values = np.asarray(values)
        n = self.collocation_points
        rest = values.shape[1:]
        grid = values.reshape((n,) * self.dims + rest)
        axes = tuple(range(self.dims))
        spectrum = np.fft.fftn(grid, axes=axes) / n ** self.dims
        return spectrum[self._slots()]

    def reality_defect(self, fields: np.ndarray) -> float:
        fields = np.asarray(fields)
        return float(np.max(np.abs(fields[self.negation] - np.conj(fields)))) if fields.size else 0.0

    def enforce_reality(self, fields: np.ndarray) -> np.ndarray:
        fields = np.asarray(fields)
        return 0.5 * (fields + np.conj(fields[self.negation]))
