"""Converter-interfaced resource model and its closed-loop harmonic gain.

The hardware block ``pi`` and control block ``kappa`` are lifted onto the
index set, interconnected through ``U = T Y`` and compiled into the gain
``G = C~ (j Omega - A~)^-1 E~ + F~``. Everything except the reference law is
linear, so a compiled resource evaluates its output as two matrix products
plus the (possibly nonlinear) reference.

Lifted vectors of the combined system are ordered ``col(X_pi, X_kappa)``,
each part harmonic-major.
"""

from dataclasses import dataclass, field
from typing import Hashable, Optional

import numpy as np
import scipy.linalg

from ..exceptions import (
    AlgebraicLoopError,
    DimensionError,
    GainExistenceError,
    ModelError,
)
from ..ltp import HarmonicSignal, OmegaOperator, PeriodicMatrix, lift
from ..realcoords import RealCoordinates
from ..validation import CONDITION_LIMIT, condition_number
from .blocks import LtpBlock
from .reference import ReferenceLaw
from .transforms import IDENTITY, TransformSpec

MODES = ("forming", "following")


@dataclass(frozen=True, eq=False)
class CiderModel:
    """Hardware + control software + transforms + reference calculation.

    ``pi.C`` stacks ``n_blocks`` output blocks of the transform's outer size;
    the last one is the grid-side output. ``measured`` lists the blocks fed to
    the controller (in the order ``kappa`` expects them).
    """

    mode: str
    pi: LtpBlock
    kappa: LtpBlock
    reference: ReferenceLaw
    control_transform: TransformSpec = field(default_factory=TransformSpec)
    grid_transform: TransformSpec = IDENTITY
    measured: Optional[tuple] = None
    node: Hashable = None
    name: str = ""

    def __post_init__(self):
        if self.mode not in MODES:
            raise ModelError(f"mode must be one of {MODES}, got {self.mode!r}")
        Tk = self.control_transform.forward()
        Tp = self.control_transform.backward()
        block = Tk.shape[1]
        if self.pi.n_outputs % block:
            raise DimensionError(f"hardware output size {self.pi.n_outputs} is not a multiple of {block}")
        n_blocks = self.pi.n_outputs // block
        measured = tuple(range(n_blocks)) if self.measured is None else tuple(self.measured)
        if any(not 0 <= k < n_blocks for k in measured):
            raise DimensionError(f"measured blocks {measured} outside 0..{n_blocks - 1}")
        object.__setattr__(self, "measured", measured)
        checks = [
            ("hardware input vs backward transform", self.pi.n_inputs, Tp.shape[0]),
            ("controller output vs backward transform", self.kappa.n_outputs, Tp.shape[1]),
            ("controller input vs measured blocks", self.kappa.n_inputs, Tk.shape[0] * len(measured)),
            ("controller reference vs transform", self.kappa.n_disturbances, Tk.shape[0]),
            ("hardware disturbance vs transform", self.pi.n_disturbances, Tk.shape[1]),
            ("hardware disturbance vs grid transform", self.pi.n_disturbances, self.grid_transform.forward().shape[0]),
            ("grid output vs grid transform", block, self.grid_transform.backward().shape[1]),
        ]
        for what, got, want in checks:
            if got != want:
                raise DimensionError(f"{what}: {got} != {want}")

    @property
    def n_blocks(self):
        return self.pi.n_outputs // self.control_transform.outer_dim

    @property
    def output_quantity(self):
        """``'V'`` for grid-forming (voltage out, current in), else ``'I'``."""
        return "V" if self.mode == "forming" else "I"

    @property
    def disturbance_quantity(self):
        return "I" if self.mode == "forming" else "V"

    # feedback / output maps as periodic matrices -------------------------
    def feedback_plus(self):
        """``T+_{kappa|pi}``: block-diagonal over the measured output blocks."""
        Tk = self.control_transform.forward()
        r, c = Tk.shape
        rows = []
        for k in self.measured:
            row = [None] * self.n_blocks
            row[k] = Tk
            rows.append(row)
        return _bmat_zero_fill(rows, r, c)

    def grid_output_plus(self):
        """``T+_{gamma|pi}``: only the last output block reaches the grid."""
        Tg = self.grid_transform.backward()
        row = [None] * self.n_blocks
        row[-1] = Tg
        return _bmat_zero_fill([row], Tg.shape[0], Tg.shape[1])

    def compile(self, H):
        return CompiledCider(self, H)


def _bmat_zero_fill(rows, r, c):
    keys = sorted(set().union(*[b.support for row in rows for b in row if b is not None]))
    coeffs = {}
    for h in keys:
        coeffs[h] = np.block([[b[h] if b is not None else np.zeros((r, c), complex) for b in row] for row in rows])
    return PeriodicMatrix(coeffs, (r * len(rows), c * len(rows[0])))


# ---------------------------------------------------------------------------
# lifted open loop / feedback / closed loop
# ---------------------------------------------------------------------------
@dataclass(frozen=True, eq=False)
class OpenLoop:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    E: np.ndarray
    F: np.ndarray
    Omega: np.ndarray  # real diagonal, as a vector
    sizes: dict  # per-harmonic sizes: n_pi, n_kappa, m_pi, ... (see assemble_open_loop)


def assemble_open_loop(pi, kappa, H):
    """Lift both blocks and combine them block-diagonally."""
    mats = {}
    for name in "ABCDEF":
        mp = lift(getattr(pi, name), H).matrix()
        mk = lift(getattr(kappa, name), H).matrix()
        mats[name] = scipy.linalg.block_diag(mp, mk)
    omega = np.concatenate([
        OmegaOperator(pi.n_states, H).diagonal(),
        OmegaOperator(kappa.n_states, H).diagonal(),
    ])
    sizes = {
        "x_pi": pi.n_states, "x_kappa": kappa.n_states,
        "u_pi": pi.n_inputs, "u_kappa": kappa.n_inputs,
        "y_pi": pi.n_outputs, "y_kappa": kappa.n_outputs,
        "w_pi": pi.n_disturbances, "w_kappa": kappa.n_disturbances,
    }
    return OpenLoop(Omega=omega, sizes=sizes, **mats)


def build_feedback(model, H):
    """``T = [[0, T_{pi|kappa}], [T+_{kappa|pi}, 0]]`` lifted (maps Y to U)."""
    T_pk = lift(model.control_transform.backward(), H).matrix()
    T_kp = lift(model.feedback_plus(), H).matrix()
    z1 = np.zeros((T_pk.shape[0], T_kp.shape[1]), dtype=complex)
    z2 = np.zeros((T_kp.shape[0], T_pk.shape[1]), dtype=complex)
    return np.block([[z1, T_pk], [T_kp, z2]])


@dataclass(frozen=True, eq=False)
class ClosedLoop:
    A: np.ndarray
    C: np.ndarray
    E: np.ndarray
    F: np.ndarray


def close_loop(open_loop, T, name=""):
    """Substitute ``U = T Y`` into the open loop."""
    ol = open_loop
    nu, ny = ol.B.shape[1], ol.C.shape[0]
    I_TD = np.eye(nu) - T @ ol.D
    I_DT = np.eye(ny) - ol.D @ T
    for label, M in (("I - T D", I_TD), ("I - D T", I_DT)):
        c = condition_number(M)
        if c > CONDITION_LIMIT:
            raise AlgebraicLoopError(f"{name or 'resource'}: {label} is singular (cond {c:.3g})")
    K_T = np.linalg.solve(I_TD, T)  # (I - T D)^-1 T
    A = ol.A + ol.B @ K_T @ ol.C
    E = ol.E + ol.B @ K_T @ ol.F
    C = np.linalg.solve(I_DT, ol.C)
    F = np.linalg.solve(I_DT, ol.F)
    return ClosedLoop(A, C, E, F)


@dataclass(frozen=True, eq=False)
class Gain:
    """Closed-loop gain split by output (pi, kappa) and disturbance (pi, kappa)."""

    full: np.ndarray
    pp: np.ndarray
    pk: np.ndarray
    kp: np.ndarray
    kk: np.ndarray


def closed_loop_gain(cl, omega, H, split, name=""):
    """``G = C~ (j Omega - A~)^-1 E~ + F~`` partitioned at ``split = (rows_pi, cols_pi)``."""
    M = 1j * np.diag(omega) - cl.A
    c = condition_number(M)
    if c > CONDITION_LIMIT:
        h, ch = _worst_harmonic(M, omega, H)
        raise GainExistenceError(
            f"{name or 'resource'}: j Omega - A~ is singular (cond {c:.3g}); "
            f"worst at harmonic {h} (block cond {ch:.3g})",
            harmonic=h,
            condition=ch,
        )
    G = cl.C @ np.linalg.solve(M, cl.E) + cl.F
    r, k = split
    return Gain(G, G[:r, :k], G[:r, k:], G[r:, :k], G[r:, k:])


def _worst_harmonic(M, omega, H):
    # state indices grouped by harmonic order (omega = 2 pi f1 h)
    orders = np.rint(omega / H.omega1).astype(int)
    worst, worst_c = None, -1.0
    for h in H:
        idx = np.flatnonzero(orders == h)
        if idx.size == 0:
            continue
        c = condition_number(M[np.ix_(idx, idx)])
        if c > worst_c:
            worst, worst_c = h, c
    return worst, worst_c


# ---------------------------------------------------------------------------
# compiled resource
# ---------------------------------------------------------------------------
class CompiledCider:
    """A resource lifted onto ``H``; evaluates output spectra and Jacobians."""

    def __init__(self, model, H):
        model.reference.check(H)
        self.model = model
        self.H = H
        self.open_loop = assemble_open_loop(model.pi, model.kappa, H)
        self.T = build_feedback(model, H)
        self.closed = close_loop(self.open_loop, self.T, name=model.name or str(model.node))
        K = H.size
        split = (K * model.pi.n_outputs, K * model.pi.n_disturbances)
        self.gain = closed_loop_gain(self.closed, self.open_loop.Omega, H, split, name=model.name)

        T_pg = lift(model.grid_transform.forward(), H).matrix()
        T_gp = lift(model.grid_output_plus(), H).matrix()
        T_kp = lift(model.control_transform.forward(), H).matrix()
        self.T_pi_gamma = T_pg
        self.T_gamma_pi = T_gp
        self.T_kappa_pi = T_kp
        self.linear_map = T_gp @ self.gain.pp @ T_pg
        self.reference_map = T_gp @ self.gain.pk
        self.rho_map = T_kp @ T_pg
        # synchronous-frame extraction / embedding for the reference law
        to_sync = lift(model.control_transform.to_sync_frame(), H).matrix()
        from_sync = lift(model.control_transform.from_sync_frame(), H).matrix()
        h0 = slice(H.h_max * 2, H.h_max * 2 + 2)
        self.extract = to_sync[h0]  # (2, K * inner)
        self.embed = from_sync[:, h0]  # (K * inner, 2), applied to real dq
        self.coords = RealCoordinates(H.h_max, model.grid_transform.outer_dim)
        self._jac_linear = None
        self._ref_cols = None
        self._ext_rows = None

    @property
    def linear(self):
        return self.model.reference.linear

    @property
    def node(self):
        return self.model.node

    @property
    def output_quantity(self):
        return self.model.output_quantity

    def reference_input(self, W_gamma):
        """Synchronous-frame DC component ``(v_d, v_q)`` seen by the reference law."""
        return (self.extract @ (self.rho_map @ W_gamma.vector)).real

    def reference_signal(self, W_gamma):
        """``W_kappa`` produced by the reference law for this disturbance."""
        ref = self.model.reference(self.reference_input(W_gamma))
        return HarmonicSignal(self.H, (self.embed @ ref).reshape(self.H.size, -1))

    def output(self, W_gamma):
        """Grid-side output ``Y_gamma`` for the grid-side disturbance ``W_gamma``."""
        w = W_gamma.vector
        ref = self.model.reference(self.reference_input(W_gamma))
        y = self.linear_map @ w + self.reference_map @ (self.embed @ ref)
        return HarmonicSignal(self.H, y.reshape(self.H.size, -1))

    def output_jacobian(self, W_gamma):
        """Real Jacobian of ``output`` in :class:`RealCoordinates`."""
        if self._jac_linear is None:
            self._jac_linear = self.coords.realify(self.linear_map)
            self._ref_cols = self.coords.rows(self.reference_map @ self.embed)
            self._ext_rows = self.coords.right(self.extract @ self.rho_map).real
        Jr = self.model.reference.jacobian(self.reference_input(W_gamma))
        if not np.any(Jr):
            return self._jac_linear
        return self._jac_linear + self._ref_cols @ Jr @ self._ext_rows


def cider_output(compiled, W_gamma):
    return compiled.output(W_gamma)


def cider_output_jacobian(compiled, W_gamma):
    return compiled.output_jacobian(W_gamma)
