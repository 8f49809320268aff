"""Harmonic Thevenin and Norton equivalents.

Both are affine harmonic-domain laws at one node. The impedance/admittance is
a full ``3K x 3K`` matrix over the index set; off-diagonal harmonic blocks
encode frequency coupling. Currents are *injected* into the grid::

    Norton:   I = I_NE - Y_NE V
    Thevenin: I = Z_TE^-1 (V_TE - V)

so a Thevenin source converts to the Norton source ``I_NE = Z^-1 V_TE``,
``Y_NE = Z^-1`` with identical currents.
"""

import logging
from dataclasses import dataclass
from typing import Hashable

import numpy as np

from .exceptions import DimensionError, ModelError, ParameterError
from .ltp import HarmonicSignal
from .realcoords import RealCoordinates
from .validation import CONDITION_LIMIT, DEFINITENESS_TOL, condition_number, min_real_part_eig

log = logging.getLogger(__name__)

PHASES = 3


def harmonic_block_matrix(H, blocks, dim=PHASES, fill_conjugates=True):
    """Dense ``(dim K, dim K)`` matrix from ``{(h_row, h_col): (dim, dim) block}``.

    Missing ``(-h_row, -h_col)`` entries are filled with the conjugate block.
    """
    K = H.size
    M = np.zeros((dim * K, dim * K), dtype=complex)
    given = set()
    for (hr, hc), B in blocks.items():
        hr, hc = int(hr), int(hc)
        B = np.asarray(B, dtype=complex)
        if B.shape != (dim, dim):
            raise DimensionError(f"block ({hr},{hc}) has shape {B.shape}, expected {(dim, dim)}")
        r, c = H.index(hr), H.index(hc)
        M[r * dim : (r + 1) * dim, c * dim : (c + 1) * dim] = B
        given.add((hr, hc))
    if fill_conjugates:
        for hr, hc in list(given):
            if (-hr, -hc) not in given:
                r, c = H.index(-hr), H.index(-hc)
                B = M[H.index(hr) * dim : (H.index(hr) + 1) * dim, H.index(hc) * dim : (H.index(hc) + 1) * dim]
                M[r * dim : (r + 1) * dim, c * dim : (c + 1) * dim] = np.conj(B)
    return M


def diagonal_block_matrix(H, block_of_h, dim=PHASES):
    """Harmonic-block-diagonal matrix with block ``block_of_h(h)``."""
    return harmonic_block_matrix(H, {(h, h): block_of_h(h) for h in H}, dim, fill_conjugates=False)


def conjugate_symmetry_error(M, H, dim=PHASES):
    """``max |M[-m,-n] - conj(M[m,n])|`` over harmonic blocks."""
    K = H.size
    B = M.reshape(K, dim, K, dim)
    return float(np.abs(B[::-1, :, ::-1, :] - np.conj(B)).max(initial=0.0))


def _check_operator(M, H, what):
    M = np.asarray(M, dtype=complex)
    n = PHASES * H.size
    if M.shape != (n, n):
        raise DimensionError(f"{what} must be {n}x{n} for h_max={H.h_max}, got {M.shape}")
    err = conjugate_symmetry_error(M, H)
    if err > 1e-12 * max(1.0, np.abs(M).max()):
        raise ModelError(f"{what} is not conjugate-symmetric over H (error {err:.3g})")
    M = M.copy()
    M.setflags(write=False)
    return M


def _check_signal(sig, H, what):
    if not isinstance(sig, HarmonicSignal):
        sig = HarmonicSignal(H, np.asarray(sig, dtype=complex).reshape(H.size, PHASES))
    if sig.H != H or sig.dim != PHASES:
        raise DimensionError(f"{what} must be a 3-phase signal on h_max={H.h_max}")
    if not sig.is_real():
        raise ModelError(f"{what} is not the spectrum of a real signal")
    return sig


class _AffineSource:
    """Common resource interface: ``output(W)`` and constant ``output_jacobian``."""

    linear = True
    output_quantity = "I"

    def __init__(self, node, H):
        self.node = node
        self.H = H
        self.coords = RealCoordinates(H.h_max, PHASES)
        self._jac = None

    def compile(self, H):
        if H != self.H:
            raise DimensionError(f"source at {self.node!r} built for h_max={self.H.h_max}, not {H.h_max}")
        return self

    def _slope(self):
        raise NotImplementedError

    def output_jacobian(self, W=None):
        if self._jac is None:
            self._jac = self.coords.realify(self._slope())
            self._jac.setflags(write=False)
        return self._jac


class NortonEquivalent(_AffineSource):
    """``I = I_NE - Y_NE V`` injected at ``node``."""

    def __init__(self, I_NE, Y_NE, node=None, H=None):
        H = H or I_NE.H
        super().__init__(node, H)
        self.I_NE = _check_signal(I_NE, H, "Norton current")
        self.Y_NE = _check_operator(Y_NE, H, "Norton admittance")

    def output(self, V):
        return norton_current(self, V)

    def _slope(self):
        return -self.Y_NE

    def passivity_report(self, tol=DEFINITENESS_TOL):
        """Harmonics whose diagonal admittance block has an indefinite real part."""
        bad = []
        for h in self.H:
            k = self.H.index(h) * PHASES
            lam = min_real_part_eig(self.Y_NE[k : k + PHASES, k : k + PHASES])
            if lam < -tol:
                bad.append((h, lam))
        if bad:
            log.warning("Norton source at %r is not passive at harmonics %s", self.node, [h for h, _ in bad])
        return bad


class TheveninEquivalent(_AffineSource):
    """Voltage ``V_TE`` behind impedance ``Z_TE``.

    At a following (current-output) node it injects ``Z^-1 (V_TE - V)``.
    With ``forming=True`` it acts at a forming node as the voltage law
    ``V = V_TE - Z I`` (``Z = 0`` is an ideal stiff source).
    """

    def __init__(self, V_TE, Z_TE, node=None, H=None, forming=False):
        H = H or V_TE.H
        super().__init__(node, H)
        self.V_TE = _check_signal(V_TE, H, "Thevenin voltage")
        self.Z_TE = _check_operator(Z_TE, H, "Thevenin impedance")
        self.forming = bool(forming)
        self._Y = None
        if not self.forming:
            self.admittance()

    @property
    def output_quantity(self):
        return "V" if self.forming else "I"

    def admittance(self):
        if self._Y is None:
            c = condition_number(self.Z_TE)
            if c > CONDITION_LIMIT:
                raise ParameterError(f"Thevenin impedance at {self.node!r} is singular (cond {c:.3g})", element=self.node)
            self._Y = np.linalg.inv(self.Z_TE)
        return self._Y

    def output(self, W):
        if self.forming:
            v = self.V_TE.vector - self.Z_TE @ W.vector
            return HarmonicSignal(self.H, v.reshape(self.H.size, PHASES))
        return thevenin_current(self, W)

    def _slope(self):
        return -self.Z_TE if self.forming else -self.admittance()

    def to_norton(self):
        Y = self.admittance()
        I = HarmonicSignal(self.H, (Y @ self.V_TE.vector).reshape(self.H.size, PHASES)).project_real()
        return NortonEquivalent(I, Y, node=self.node, H=self.H)


def thevenin_current(te, V, absorbed=False):
    """Current of ``te`` at terminal voltage ``V``.

    Injected by default; ``absorbed=True`` returns ``Z^-1 (V - V_TE)``, the
    current flowing from the node into the source.
    """
    d = V.vector - te.V_TE.vector
    i = te.admittance() @ d
    if not absorbed:
        i = -i
    return HarmonicSignal(te.H, i.reshape(te.H.size, PHASES))


def norton_current(ne, V):
    i = ne.I_NE.vector - ne.Y_NE @ V.vector
    return HarmonicSignal(ne.H, i.reshape(ne.H.size, PHASES))


@dataclass(frozen=True)
class EquivalentSpec:
    """Unbound source description (from a study file) compiled once H is known."""

    kind: str
    node: Hashable
    spectrum: dict  # {h: 3 complex}
    matrix: dict  # {(h_row, h_col): 3x3 complex}

    def build(self, H):
        if self.kind not in ("thevenin", "norton"):
            raise ModelError(f"unknown source kind {self.kind!r}")
        spec = {h: v for h, v in self.spectrum.items() if abs(h) <= H.h_max}
        sig = HarmonicSignal.from_dict(H, PHASES, spec)
        blocks = {k: B for k, B in self.matrix.items() if abs(k[0]) <= H.h_max and abs(k[1]) <= H.h_max}
        M = harmonic_block_matrix(H, blocks)
        if self.kind == "thevenin":
            return TheveninEquivalent(sig, M, node=self.node, H=H)
        return NortonEquivalent(sig, M, node=self.node, H=H)


__all__ = [
    "EquivalentSpec",
    "NortonEquivalent",
    "TheveninEquivalent",
    "conjugate_symmetry_error",
    "diagonal_block_matrix",
    "harmonic_block_matrix",
    "norton_current",
    "thevenin_current",
]
