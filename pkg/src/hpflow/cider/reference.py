"""Reference calculations.

A reference law sees only the synchronous-frame DC component ``(v_d, v_q)``
of its measured signal and returns a DC reference in the same frame; the
resource's transform maps it into the controller frame. Only this block may
be nonlinear.
"""

import numpy as np

from ..exceptions import ReferenceSingularityError, UnsupportedSetpointError

VOLTAGE_FLOOR = 1e-6


class ReferenceLaw:
    linear = True

    def __call__(self, v_dq):
        raise NotImplementedError

    def jacobian(self, v_dq):
        raise NotImplementedError

    def check(self, H):
        """Hook for setpoint checks against the index set."""


class VfReference(ReferenceLaw):
    """Grid-forming voltage reference: ``(V_set, 0)`` in dq."""

    linear = True

    def __init__(self, V, f):
        self.V = float(V)
        self.f = float(f)

    def check(self, H):
        if abs(self.f - H.f1) > 1e-9 * H.f1:
            raise UnsupportedSetpointError(
                f"frequency setpoint {self.f} Hz differs from the fundamental {H.f1} Hz"
            )

    def __call__(self, v_dq):
        return np.array([self.V, 0.0])

    def jacobian(self, v_dq):
        return np.zeros((2, 2))

    def __repr__(self):
        return f"VfReference(V={self.V}, f={self.f})"


class PqReference(ReferenceLaw):
    """Grid-following current reference ``i = (P - jQ) / conj(v)`` in dq.

    Componentwise ``i_d = (P v_d + Q v_q)/|v|^2``, ``i_q = (P v_q - Q v_d)/|v|^2``.
    """

    linear = False

    def __init__(self, P, Q):
        self.P = float(P)
        self.Q = float(Q)

    def _norm2(self, v_dq):
        vd, vq = v_dq
        n2 = vd * vd + vq * vq
        if n2 <= VOLTAGE_FLOOR**2:
            raise ReferenceSingularityError(
                f"fundamental voltage |v| = {np.sqrt(n2):.3g} p.u. is too small for PQ control"
            )
        return n2

    def __call__(self, v_dq):
        vd, vq = v_dq
        n2 = self._norm2(v_dq)
        return np.array([self.P * vd + self.Q * vq, self.P * vq - self.Q * vd]) / n2

    def jacobian(self, v_dq):
        vd, vq = v_dq
        n2 = self._norm2(v_dq)
        P, Q = self.P, self.Q
        a = P * vd + Q * vq
        b = P * vq - Q * vd
        return np.array([
            [(P * n2 - 2 * vd * a) / n2**2, (Q * n2 - 2 * vq * a) / n2**2],
            [(-Q * n2 - 2 * vd * b) / n2**2, (P * n2 - 2 * vq * b) / n2**2],
        ])

    def __repr__(self):
        return f"PqReference(P={self.P}, Q={self.Q})"


class ConstantReference(ReferenceLaw):
    """Fixed dq reference, independent of the measurement."""

    linear = True

    def __init__(self, value):
        self.value = np.asarray(value, dtype=float).reshape(2)

    def __call__(self, v_dq):
        return self.value.copy()

    def jacobian(self, v_dq):
        return np.zeros((2, 2))


class CustomReference(ReferenceLaw):
    """User map ``v_dq -> ref_dq``; without ``jacobian`` central differences are used."""

    def __init__(self, func, jacobian=None, linear=False, step=1e-7):
        self.func = func
        self._jac = jacobian
        self.linear = linear
        self.step = step

    def __call__(self, v_dq):
        return np.asarray(self.func(np.asarray(v_dq, dtype=float)), dtype=float).reshape(2)

    def jacobian(self, v_dq):
        if self._jac is not None:
            return np.asarray(self._jac(np.asarray(v_dq, dtype=float)), dtype=float).reshape(2, 2)
        v = np.asarray(v_dq, dtype=float)
        J = np.empty((2, 2))
        for k in range(2):
            dv = np.zeros(2)
            dv[k] = self.step
            J[:, k] = (self(v + dv) - self(v - dv)) / (2 * self.step)
        return J
