"""Real coordinates for conjugate-symmetric spectra.

A real ``dim``-channel signal is fully described by ``Re X_0`` and
``(Re X_h, Im X_h)`` for ``h = 1..h_max``. The layout is harmonic-major::

    [Re X_0 | Re X_1, Im X_1 | Re X_2, Im X_2 | ...]

each slot being ``dim`` long. Operators that map real signals to real signals
become real matrices in these coordinates (``realify``).
"""

import numpy as np

from .exceptions import DimensionError


class RealCoordinates:
    def __init__(self, h_max, dim):
        self.h_max = int(h_max)
        self.dim = int(dim)
        K = 2 * self.h_max + 1
        self.K = K
        self.size = self.dim * K
        h = np.concatenate([np.zeros(self.dim, int)] + [
            np.full(2 * self.dim, k) for k in range(1, self.h_max + 1)
        ])
        part = np.concatenate([np.zeros(self.dim, int)] + [
            np.repeat([0, 1], self.dim) for _ in range(1, self.h_max + 1)
        ])
        ch = np.tile(np.arange(self.dim), K)
        self.h, self.part, self.channel = h, part, ch
        self.pos = (h + self.h_max) * self.dim + ch
        self.neg = (-h + self.h_max) * self.dim + ch

    def offset(self, h, part=0):
        """Start of the ``dim``-long slot for harmonic ``h`` (``part`` 0=Re, 1=Im)."""
        return 0 if h == 0 else self.dim + (h - 1) * 2 * self.dim + part * self.dim

    def to_real(self, coeffs):
        """``(K, dim)`` (or flat) complex coefficients -> real vector."""
        x = np.asarray(coeffs).reshape(-1)
        if x.size != self.size:
            raise DimensionError(f"expected {self.size} coefficients, got {x.size}")
        v = x[self.pos]
        return np.where(self.part == 0, v.real, v.imag)

    def from_real(self, z):
        """Real vector -> ``(K, dim)`` conjugate-symmetric coefficients."""
        z = np.asarray(z, dtype=float)
        if z.shape != (self.size,):
            raise DimensionError(f"expected real vector of length {self.size}, got {z.shape}")
        out = np.zeros(self.size, dtype=complex)
        re = self.part == 0
        out[self.pos[re]] += z[re]
        im = ~re
        out[self.pos[im]] += 1j * z[im]
        # negative orders by conjugation
        pos_h = self.h > 0
        out[self.neg[pos_h & re]] += z[pos_h & re]
        out[self.neg[pos_h & im]] -= 1j * z[pos_h & im]
        return out.reshape(self.K, self.dim)

    def basis(self):
        """Complex matrix ``P`` with ``P @ z == from_real(z).ravel()``."""
        return self.right(np.eye(self.size, dtype=complex))

    def right(self, M):
        """``M @ P`` for a complex matrix ``M`` acting on full spectra."""
        M = np.asarray(M)
        if M.shape[1] != self.size:
            raise DimensionError(f"matrix has {M.shape[1]} columns, expected {self.size}")
        a, b = M[:, self.pos], M[:, self.neg]
        out = np.where(self.h == 0, a, np.where(self.part == 0, a + b, 1j * (a - b)))
        return out

    def rows(self, Mc):
        """Real rows of a complex matrix whose rows index full spectra."""
        Mc = np.asarray(Mc)
        if Mc.shape[0] != self.size:
            raise DimensionError(f"matrix has {Mc.shape[0]} rows, expected {self.size}")
        r = Mc[self.pos]
        return np.where((self.part == 0)[:, None], r.real, r.imag)

    def realify(self, M, out=None):
        """Real matrix of the complex-linear map ``M`` (``out`` coords default to self)."""
        out = self if out is None else out
        return out.rows(self.right(M))


def realify_block_diagonal(blocks, out_coords, in_coords):
    """Realify a harmonic-block-diagonal operator without forming it densely.

    ``blocks`` has shape ``(K, m, n)`` with ``blocks[-h] == conj(blocks[h])``.
    """
    blocks = np.asarray(blocks)
    K, m, n = blocks.shape
    if m != out_coords.dim or n != in_coords.dim or K != in_coords.K:
        raise DimensionError("block shape does not match coordinates")
    hm = in_coords.h_max
    J = np.zeros((out_coords.size, in_coords.size))
    J[:m, :n] = blocks[hm].real
    for h in range(1, hm + 1):
        B = blocks[hm + h]
        r, c = out_coords.offset(h), in_coords.offset(h)
        J[r : r + m, c : c + n] = B.real
        J[r : r + m, c + n : c + 2 * n] = -B.imag
        J[r + m : r + 2 * m, c : c + n] = B.imag
        J[r + m : r + 2 * m, c + n : c + 2 * n] = B.real
    return J
