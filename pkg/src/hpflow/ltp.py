"""Harmonic-domain signals and block-Toeplitz operators.

A T-periodic quantity ``x(t) = sum_h X_h exp(j h w1 t)`` is stored by its
Fourier coefficients over the symmetric index set ``H = {-h_max..h_max}``.
Coefficient arrays are laid out harmonic-major: row ``h + h_max`` holds
``X_h``. Multiplying by a periodic matrix ``A(t)`` becomes multiplication by
the block-Toeplitz matrix whose block ``(m, n)`` is ``A_{m-n}``.
"""

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
import scipy.linalg

from .exceptions import AliasingError, DimensionError, TruncationError

REAL_TOL = 1e-12


@dataclass(frozen=True)
class HarmonicIndexSet:
    """Orders ``-h_max..h_max`` of the fundamental ``f1`` (Hz)."""

    h_max: int
    f1: float = 50.0

    def __post_init__(self):
        if int(self.h_max) != self.h_max or self.h_max < 0:
            raise ValueError(f"h_max must be a non-negative integer, got {self.h_max!r}")
        if not self.f1 > 0:
            raise ValueError(f"f1 must be positive, got {self.f1!r}")
        object.__setattr__(self, "h_max", int(self.h_max))
        object.__setattr__(self, "f1", float(self.f1))

    @property
    def size(self):
        return 2 * self.h_max + 1

    def __len__(self):
        return self.size

    def __iter__(self):
        return iter(range(-self.h_max, self.h_max + 1))

    def __contains__(self, h):
        return -self.h_max <= h <= self.h_max

    @property
    def orders(self):
        return np.arange(-self.h_max, self.h_max + 1)

    @property
    def frequencies(self):
        return self.orders * self.f1

    @property
    def omega1(self):
        return 2 * np.pi * self.f1

    def index(self, h):
        if h not in self:
            raise TruncationError(f"harmonic {h} outside H (h_max={self.h_max})")
        return h + self.h_max


# ---------------------------------------------------------------------------
# signals
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class HarmonicSignal:
    """Fourier coefficients of a ``dim``-dimensional periodic signal.

    ``coeffs`` has shape ``(len(H), dim)``; missing orders are zero.
    """

    H: HarmonicIndexSet
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex)
        if c.ndim == 1:
            c = c.reshape(self.H.size, -1)
        if c.ndim != 2 or c.shape[0] != self.H.size:
            raise DimensionError(
                f"coefficients must have shape ({self.H.size}, dim), got {c.shape}"
            )
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    # construction --------------------------------------------------------
    @classmethod
    def zeros(cls, H, dim):
        return cls(H, np.zeros((H.size, dim), dtype=complex))

    @classmethod
    def from_dict(cls, H, dim, values, real=True):
        """Build from ``{h: vector}``; with ``real`` the conjugate orders are filled in."""
        c = np.zeros((H.size, dim), dtype=complex)
        for h, v in values.items():
            h = int(h)
            v = np.asarray(v, dtype=complex).reshape(dim)
            c[H.index(h)] = v
            if real and h != 0:
                c[H.index(-h)] = np.conj(v)
        if real:
            c[H.h_max] = c[H.h_max].real
        return cls(H, c)

    @classmethod
    def from_vector(cls, H, vector, dim):
        return cls(H, np.asarray(vector).reshape(H.size, dim))

    # access ----------------------------------------------------------------
    @property
    def dim(self):
        return self.coeffs.shape[1]

    @property
    def vector(self):
        """Harmonic-major stacked column."""
        return self.coeffs.reshape(-1)

    def __getitem__(self, h):
        if h not in self.H:
            return np.zeros(self.dim, dtype=complex)
        return self.coeffs[self.H.index(h)]

    def channels(self, idx):
        return HarmonicSignal(self.H, self.coeffs[:, idx])

    def max_abs(self):
        return float(np.abs(self.coeffs).max(initial=0.0))

    # realness ---------------------------------------------------------------
    def symmetry_error(self):
        return float(np.abs(self.coeffs[::-1] - np.conj(self.coeffs)).max(initial=0.0))

    def is_real(self, tol=REAL_TOL):
        return self.symmetry_error() < tol

    def project_real(self):
        """Closest conjugate-symmetric signal (exact projection)."""
        return HarmonicSignal(self.H, 0.5 * (self.coeffs + np.conj(self.coeffs[::-1])))

    def with_h_max(self, h_max):
        """Truncate or zero-pad to another index set with the same f1."""
        H2 = HarmonicIndexSet(h_max, self.H.f1)
        out = np.zeros((H2.size, self.dim), dtype=complex)
        m = min(h_max, self.H.h_max)
        out[H2.h_max - m : H2.h_max + m + 1] = self.coeffs[self.H.h_max - m : self.H.h_max + m + 1]
        return HarmonicSignal(H2, out)

    # arithmetic ------------------------------------------------------------
    def _check_same(self, other):
        if other.H != self.H or other.dim != self.dim:
            raise DimensionError("signals live on different index sets or dimensions")

    def __add__(self, other):
        self._check_same(other)
        return HarmonicSignal(self.H, self.coeffs + other.coeffs)

    def __sub__(self, other):
        self._check_same(other)
        return HarmonicSignal(self.H, self.coeffs - other.coeffs)

    def __neg__(self):
        return HarmonicSignal(self.H, -self.coeffs)

    def __mul__(self, scalar):
        return HarmonicSignal(self.H, self.coeffs * scalar)

    __rmul__ = __mul__

    def __repr__(self):
        return f"HarmonicSignal(h_max={self.H.h_max}, dim={self.dim}, max|X|={self.max_abs():.3g})"


def concat_signals(signals):
    """Stack signals channel-wise (node-major within each harmonic)."""
    signals = list(signals)
    H = signals[0].H
    if any(s.H != H for s in signals):
        raise DimensionError("cannot concatenate signals on different index sets")
    return HarmonicSignal(H, np.concatenate([s.coeffs for s in signals], axis=1))


# ---------------------------------------------------------------------------
# periodic matrices
# ---------------------------------------------------------------------------
class PeriodicMatrix:
    """Time-periodic matrix function given by a sparse map ``{h: A_h}``."""

    __slots__ = ("_coeffs", "shape")

    def __init__(self, coeffs: Mapping[int, np.ndarray], shape=None):
        items = {int(h): np.array(a, dtype=complex) for h, a in coeffs.items()}
        if shape is None:
            if not items:
                raise DimensionError("shape is required for an empty coefficient set")
            shape = next(iter(items.values())).shape
        shape = tuple(int(s) for s in shape)
        for h, a in items.items():
            if a.shape != shape:
                raise DimensionError(f"coefficient {h} has shape {a.shape}, expected {shape}")
        self._coeffs = {h: a for h, a in sorted(items.items()) if np.any(a)}
        self.shape = shape

    @classmethod
    def constant(cls, M):
        M = np.atleast_2d(np.asarray(M, dtype=complex))
        return cls({0: M}, M.shape)

    @classmethod
    def zeros(cls, shape):
        return cls({}, shape)

    @classmethod
    def identity(cls, n):
        return cls.constant(np.eye(n))

    @property
    def coeffs(self):
        return dict(self._coeffs)

    @property
    def support(self):
        return tuple(self._coeffs)

    @property
    def max_order(self):
        return max((abs(h) for h in self._coeffs), default=0)

    @property
    def is_constant(self):
        return all(h == 0 for h in self._coeffs)

    def __getitem__(self, h):
        a = self._coeffs.get(int(h))
        return np.zeros(self.shape, dtype=complex) if a is None else a

    def symmetry_error(self):
        err = 0.0
        for h, a in self._coeffs.items():
            err = max(err, float(np.abs(self[-h] - np.conj(a)).max(initial=0.0)))
        return err

    def is_real(self, tol=REAL_TOL):
        return self.symmetry_error() < tol

    def evaluate(self, t, f1):
        """``A(t)`` as a real array (imaginary residue discarded)."""
        w = 2 * np.pi * f1
        out = np.zeros(self.shape, dtype=complex)
        for h, a in self._coeffs.items():
            out += a * np.exp(1j * h * w * t)
        return out.real

    # algebra -----------------------------------------------------------------
    def __add__(self, other):
        if other.shape != self.shape:
            raise DimensionError(f"shape mismatch {self.shape} + {other.shape}")
        keys = set(self._coeffs) | set(other._coeffs)
        return PeriodicMatrix({h: self[h] + other[h] for h in keys}, self.shape)

    def __neg__(self):
        return PeriodicMatrix({h: -a for h, a in self._coeffs.items()}, self.shape)

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, scalar):
        return PeriodicMatrix({h: a * scalar for h, a in self._coeffs.items()}, self.shape)

    __rmul__ = __mul__

    def __matmul__(self, other):
        """Pointwise-in-time product, i.e. convolution of the coefficient sets."""
        if self.shape[1] != other.shape[0]:
            raise DimensionError(f"cannot multiply {self.shape} by {other.shape}")
        out = {}
        for h1, a in self._coeffs.items():
            for h2, b in other._coeffs.items():
                h = h1 + h2
                out[h] = out.get(h, 0) + a @ b
        return PeriodicMatrix(out, (self.shape[0], other.shape[1]))

    def truncated(self, h_max):
        """Drop orders beyond ``h_max``; returns ``(matrix, leakage_norm)``."""
        kept = {h: a for h, a in self._coeffs.items() if abs(h) <= h_max}
        dropped = [a for h, a in self._coeffs.items() if abs(h) > h_max]
        leak = float(np.sqrt(sum(np.linalg.norm(a) ** 2 for a in dropped)))
        return PeriodicMatrix(kept, self.shape), leak

    def __repr__(self):
        return f"PeriodicMatrix(shape={self.shape}, support={self.support})"


def block_diag(*mats):
    """Block-diagonal stacking of periodic matrices (order by order)."""
    keys = sorted(set().union(*[m.support for m in mats]))
    rows = sum(m.shape[0] for m in mats)
    cols = sum(m.shape[1] for m in mats)
    coeffs = {h: scipy.linalg.block_diag(*[m[h] for m in mats]) for h in keys}
    return PeriodicMatrix(coeffs, (rows, cols))


def bmat(blocks):
    """Assemble periodic matrices from a nested list; ``None`` is a zero block.

    Each block row needs at least one non-``None`` entry and each column too,
    so the shapes can be inferred.
    """
    n_r, n_c = len(blocks), len(blocks[0])
    heights = [next(b.shape[0] for b in row if b is not None) for row in blocks]
    widths = [next(blocks[i][j].shape[1] for i in range(n_r) if blocks[i][j] is not None)
              for j in range(n_c)]
    keys = sorted(set().union(*[b.support for row in blocks for b in row if b is not None]))
    coeffs = {}
    for h in keys:
        coeffs[h] = np.block([
            [blocks[i][j][h] if blocks[i][j] is not None
             else np.zeros((heights[i], widths[j]), dtype=complex)
             for j in range(n_c)]
            for i in range(n_r)
        ])
    return PeriodicMatrix(coeffs, (sum(heights), sum(widths)))


# ---------------------------------------------------------------------------
# lifted operators
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class ToeplitzOperator:
    """Block-Toeplitz lifting of a periodic matrix on the index set ``H``."""

    periodic: PeriodicMatrix
    H: HarmonicIndexSet
    _dense: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def out_dim(self):
        return self.periodic.shape[0]

    @property
    def in_dim(self):
        return self.periodic.shape[1]

    @property
    def coeffs(self):
        return self.periodic.coeffs

    def matrix(self):
        """Dense lifted matrix; block ``(m, n)`` is ``A_{m-n}``."""
        if "m" not in self._dense:
            K = self.H.size
            M = np.zeros((K * self.out_dim, K * self.in_dim), dtype=complex)
            for h, a in self.periodic.coeffs.items():
                # np.eye(K, k=-h) has ones at (m, m - h)
                M += np.kron(np.eye(K, k=-h), a)
            M.setflags(write=False)
            self._dense["m"] = M
        return self._dense["m"]

    def __matmul__(self, x):
        return apply(self, x)

    def to_csv(self, path):
        """Debug dump: one line per nonzero entry ``row,col,re,im``."""
        M = self.matrix()
        rows, cols = np.nonzero(M)
        with open(path, "w") as fh:
            fh.write("row,col,re,im\n")
            for r, c in zip(rows, cols):
                fh.write(f"{r},{c},{M[r, c].real:.17g},{M[r, c].imag:.17g}\n")


def lift(coeffs, H):
    """Lift a periodic matrix (or ``{h: A_h}`` map) onto ``H``.

    Raises :class:`TruncationError` if a coefficient lies outside ``H``;
    nothing is ever dropped silently.
    """
    pm = coeffs if isinstance(coeffs, PeriodicMatrix) else PeriodicMatrix(coeffs)
    bad = [h for h in pm.support if h not in H]
    if bad:
        raise TruncationError(f"coefficients at orders {bad} exceed h_max={H.h_max}")
    return ToeplitzOperator(pm, H)


def apply(op, x):
    """``y_m = sum_n A_{m-n} x_n`` with all orders clipped to ``H``."""
    if op.H != x.H:
        raise DimensionError("operator and signal use different index sets")
    if x.dim != op.in_dim:
        raise DimensionError(f"operator expects dim {op.in_dim}, signal has {x.dim}")
    K, hm = x.H.size, x.H.h_max
    y = np.zeros((K, op.out_dim), dtype=complex)
    X = x.coeffs
    for h, a in op.periodic.coeffs.items():
        # rows m in [max(-hm, h-hm), min(hm, h+hm)]
        lo, hi = max(-hm, h - hm), min(hm, h + hm)
        if lo > hi:
            continue
        y[lo + hm : hi + hm + 1] += X[lo - h + hm : hi - h + hm + 1] @ a.T
    return HarmonicSignal(x.H, y)


def leakage(op, x):
    """Norm of the product terms that fall outside ``H`` and were clipped."""
    hm = x.H.h_max
    total = 0.0
    for h, a in op.periodic.coeffs.items():
        for n in x.H:
            m = n + h
            if abs(m) > hm:
                total += float(np.linalg.norm(a @ x[n]) ** 2)
    return float(np.sqrt(total))


@dataclass(frozen=True)
class OmegaOperator:
    """Block-diagonal ``2 pi f1 h I_dim`` over ``H``."""

    dim: int
    H: HarmonicIndexSet

    def diagonal(self):
        return np.repeat(self.H.omega1 * self.H.orders.astype(float), self.dim)

    def matrix(self):
        return np.diag(self.diagonal())


# ---------------------------------------------------------------------------
# waveforms
# ---------------------------------------------------------------------------
def signal_from_waveform(samples, H):
    """Fourier coefficients of one uniformly sampled period.

    ``samples`` has shape ``(N, dim)`` and covers ``t_k = k T / N``.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    N = x.shape[0]
    if N < 4 * H.h_max + 4:
        raise AliasingError(
            f"{N} samples cannot resolve h_max={H.h_max}; need at least {4 * H.h_max + 4}"
        )
    F = np.fft.fft(x, axis=0) / N
    idx = np.arange(-H.h_max, H.h_max + 1) % N
    return HarmonicSignal(H, F[idx]).project_real()


def waveform_from_signal(signal, n_samples):
    """Inverse of :func:`signal_from_waveform` on ``n_samples`` points."""
    H = signal.H
    if n_samples < 2 * H.h_max + 1:
        raise AliasingError(f"{n_samples} samples cannot hold h_max={H.h_max}")
    spec = np.zeros((n_samples, signal.dim), dtype=complex)
    spec[np.arange(-H.h_max, H.h_max + 1) % n_samples] = signal.coeffs
    return (np.fft.ifft(spec, axis=0) * n_samples).real
