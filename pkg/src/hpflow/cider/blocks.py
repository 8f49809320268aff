"""State-space blocks with periodic coefficients."""

from dataclasses import dataclass

import numpy as np

from ..exceptions import DimensionError
from ..ltp import PeriodicMatrix


def _as_periodic(M):
    if isinstance(M, PeriodicMatrix):
        return M
    if isinstance(M, dict):
        return PeriodicMatrix(M)
    return PeriodicMatrix.constant(np.atleast_2d(np.asarray(M, dtype=float)))


@dataclass(frozen=True, eq=False)
class LtpBlock:
    """``x' = A x + B u + E w``,  ``y = C x + D u + F w`` with T-periodic matrices."""

    A: PeriodicMatrix
    B: PeriodicMatrix
    C: PeriodicMatrix
    D: PeriodicMatrix
    E: PeriodicMatrix
    F: PeriodicMatrix

    def __post_init__(self):
        for name in "ABCDEF":
            object.__setattr__(self, name, _as_periodic(getattr(self, name)))
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        m, p, q = self.B.shape[1], self.C.shape[0], self.E.shape[1]
        expected = {"B": (n, m), "C": (p, n), "D": (p, m), "E": (n, q), "F": (p, q)}
        for name, shape in expected.items():
            got = getattr(self, name).shape
            if got != shape:
                raise DimensionError(f"{name} has shape {got}, expected {shape}")
        for name in "ABCDEF":
            if not getattr(self, name).is_real(1e-10):
                raise DimensionError(f"{name} is not a real periodic matrix (coefficients not conjugate-symmetric)")

    @classmethod
    def lti(cls, A, B, C, D, E, F):
        return cls(A, B, C, D, E, F)

    @property
    def n_states(self):
        return self.A.shape[0]

    @property
    def n_inputs(self):
        return self.B.shape[1]

    @property
    def n_outputs(self):
        return self.C.shape[0]

    @property
    def n_disturbances(self):
        return self.E.shape[1]

    @property
    def max_order(self):
        return max(getattr(self, n).max_order for n in "ABCDEF")

    def evaluate(self, t, f1):
        """Time-domain matrices ``(A, B, C, D, E, F)`` at time ``t``."""
        return tuple(getattr(self, n).evaluate(t, f1) for n in "ABCDEF")
