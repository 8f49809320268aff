"""Reference-frame transforms as periodic matrices.

Park and Clarke are amplitude-invariant: a positive-sequence set of peak 1
maps to ``d = 1, q = 0`` (Park) or a unit-amplitude alpha/beta pair (Clarke).
The Park angle is ``theta(t) = 2 pi f1 t + theta0``.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import DimensionError, ModelError
from ..ltp import PeriodicMatrix

PHASE_SHIFTS = np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3])
KINDS = ("identity", "clarke", "park", "custom")


def clarke_matrix():
    return (2 / 3) * np.array([[1.0, -0.5, -0.5], [0.0, np.sqrt(3) / 2, -np.sqrt(3) / 2]])


def inverse_clarke_matrix():
    return np.array([[1.0, 0.0], [-0.5, np.sqrt(3) / 2], [-0.5, -np.sqrt(3) / 2]])


def park(theta0=0.0):
    """``T_dq|abc(t)``: rows ``(2/3) cos(theta + phi_k)``, ``-(2/3) sin(theta + phi_k)``."""
    e = np.exp(1j * (theta0 + PHASE_SHIFTS))  # phase of each column at h=+1
    plus = (2 / 3) * np.vstack([e / 2, 1j * e / 2])
    return PeriodicMatrix({1: plus, -1: np.conj(plus)}, (2, 3))


def inverse_park(theta0=0.0):
    """``T_abc|dq(t)``: columns ``cos(theta + phi_k)``, ``-sin(theta + phi_k)``."""
    e = np.exp(1j * (theta0 + PHASE_SHIFTS))
    plus = np.column_stack([e / 2, 1j * e / 2])
    return PeriodicMatrix({1: plus, -1: np.conj(plus)}, (3, 2))


@dataclass(frozen=True, eq=False)
class TransformSpec:
    """A forward/backward transform pair.

    ``forward`` maps the outer frame into the inner one (e.g. hardware abc to
    control dq), ``backward`` the other way.
    """

    kind: str = "park"
    theta0: float = 0.0
    forward_matrix: Optional[PeriodicMatrix] = None
    backward_matrix: Optional[PeriodicMatrix] = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ModelError(f"transform kind must be one of {KINDS}, got {self.kind!r}")
        if self.kind == "custom":
            if self.forward_matrix is None or self.backward_matrix is None:
                raise ModelError("custom transforms need both forward and backward matrices")
            f, b = self.forward_matrix, self.backward_matrix
            if f.shape[::-1] != b.shape:
                raise DimensionError(f"forward {f.shape} and backward {b.shape} do not pair")

    def forward(self):
        if self.kind == "identity":
            return PeriodicMatrix.identity(3)
        if self.kind == "clarke":
            return PeriodicMatrix.constant(clarke_matrix())
        if self.kind == "park":
            return park(self.theta0)
        return self.forward_matrix

    def backward(self):
        if self.kind == "identity":
            return PeriodicMatrix.identity(3)
        if self.kind == "clarke":
            return PeriodicMatrix.constant(inverse_clarke_matrix())
        if self.kind == "park":
            return inverse_park(self.theta0)
        return self.backward_matrix

    @property
    def outer_dim(self):
        return self.forward().shape[1]

    @property
    def inner_dim(self):
        return self.forward().shape[0]

    def to_sync_frame(self, theta0=None):
        """Periodic map from this transform's inner frame to synchronous dq."""
        th = self.theta0 if theta0 is None else theta0
        return _clean(park(th) @ self.backward())

    def from_sync_frame(self, theta0=None):
        """Periodic map from synchronous dq to this transform's inner frame."""
        th = self.theta0 if theta0 is None else theta0
        return _clean(self.forward() @ inverse_park(th))


def _clean(pm, tol=1e-13):
    """Drop coefficients that are rounding residue of exact cancellations."""
    return PeriodicMatrix(
        {h: a for h, a in pm.coeffs.items() if np.abs(a).max() > tol}, pm.shape
    )


IDENTITY = TransformSpec("identity")
