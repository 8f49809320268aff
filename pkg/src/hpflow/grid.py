"""Polyphase grid model and its nodal admittance / hybrid matrices.

All parameters held by :class:`GridModel` are per-unit on ``(v_base, s_base)``
with ``z_base = v_base**2 / s_base``; time stays in seconds, so inductances
and capacitances are ``L / z_base`` and ``C * z_base``.

Stacked operators are kept as arrays of shape ``(K, m, n)``, one block per
harmonic ``h = -h_max..h_max`` (row ``h + h_max``), never as one dense
matrix over all harmonics.
"""

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .exceptions import ModelError, ParameterError, PartitionError, ReductionError, ValidationError
from .ltp import HarmonicIndexSet
from .validation import (
    CONDITION_LIMIT,
    DEFINITENESS_TOL,
    check_compound,
    condition_number,
    is_symmetric,
    min_real_part_eig,
)

NODE_KINDS = ("forming", "following", "zero")
I3 = np.eye(3)


def _table(table):
    if table is None:
        return None
    out = {}
    for h, M in table.items():
        h = int(h)
        if h < 0:
            raise ModelError(f"tabulated parameters are given for h >= 0 only, got h={h}")
        out[h] = check_compound(M, name=f"table entry h={h}")
    return out


def _tabulated_value(table, h, what, elem_id):
    M = table.get(abs(h))
    if M is None:
        raise ParameterError(
            f"{what} {elem_id!r} has no tabulated value for harmonic {abs(h)}",
            element=elem_id,
        )
    return M if h >= 0 else np.conj(M)


@dataclass(frozen=True)
class Node:
    id: Hashable
    kind: str = "zero"

    def __post_init__(self):
        if self.kind not in NODE_KINDS:
            raise ModelError(f"node {self.id!r}: kind must be one of {NODE_KINDS}, got {self.kind!r}")


@dataclass(frozen=True, eq=False)
class BranchElement:
    """Series element with ``Z(f) = R + j 2 pi f L`` or a per-harmonic table."""

    id: Hashable
    from_node: Hashable
    to_node: Hashable
    R: Optional[np.ndarray] = None
    L: Optional[np.ndarray] = None
    table: Optional[Mapping[int, np.ndarray]] = None

    def __post_init__(self):
        if self.table is None:
            R = np.zeros((3, 3)) if self.R is None else check_compound(self.R, "R", dtype=float)
            L = np.zeros((3, 3)) if self.L is None else check_compound(self.L, "L", dtype=float)
            object.__setattr__(self, "R", R)
            object.__setattr__(self, "L", L)
        else:
            object.__setattr__(self, "table", _table(self.table))
        if self.from_node == self.to_node:
            raise ModelError(f"branch {self.id!r} connects node {self.from_node!r} to itself")

    @property
    def tabulated(self):
        return self.table is not None

    def impedance_at(self, h, f1):
        if self.tabulated:
            return _tabulated_value(self.table, h, "branch", self.id)
        return self.R + 2j * np.pi * h * f1 * self.L

    def impedance(self, f, f1=None):
        """Impedance at an arbitrary frequency (tables need ``f`` on a harmonic of ``f1``)."""
        if self.tabulated:
            return self.impedance_at(_harmonic_of(f, f1), f1)
        return self.R + 2j * np.pi * f * self.L


@dataclass(frozen=True, eq=False)
class ShuntElement:
    """Element to ground with ``Y(f) = G + j 2 pi f C`` or a per-harmonic table."""

    id: Hashable
    node: Hashable
    G: Optional[np.ndarray] = None
    C: Optional[np.ndarray] = None
    table: Optional[Mapping[int, np.ndarray]] = None

    def __post_init__(self):
        if self.table is None:
            G = np.zeros((3, 3)) if self.G is None else check_compound(self.G, "G", dtype=float)
            C = np.zeros((3, 3)) if self.C is None else check_compound(self.C, "C", dtype=float)
            object.__setattr__(self, "G", G)
            object.__setattr__(self, "C", C)
        else:
            object.__setattr__(self, "table", _table(self.table))

    @property
    def tabulated(self):
        return self.table is not None

    def admittance_at(self, h, f1):
        if self.tabulated:
            return _tabulated_value(self.table, h, "shunt", self.id)
        return self.G + 2j * np.pi * h * f1 * self.C

    def admittance(self, f, f1=None):
        if self.tabulated:
            return self.admittance_at(_harmonic_of(f, f1), f1)
        return self.G + 2j * np.pi * f * self.C


def _harmonic_of(f, f1):
    if f1 is None:
        raise ParameterError("tabulated parameters need the fundamental frequency")
    h = f / f1
    if abs(h - round(h)) > 1e-9:
        raise ParameterError(f"frequency {f} Hz is not a harmonic of {f1} Hz (no interpolation)")
    return int(round(h))


@dataclass(frozen=True, eq=False)
class GridModel:
    nodes: tuple
    branches: tuple
    shunts: tuple = ()
    f1: float = 50.0
    v_base: float = 1.0
    s_base: float = 1.0
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nodes = tuple(n if isinstance(n, Node) else Node(*n) for n in self.nodes)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "shunts", tuple(self.shunts))
        index = {}
        for k, n in enumerate(nodes):
            if n.id in index:
                raise ModelError(f"duplicate node id {n.id!r}")
            index[n.id] = k
        object.__setattr__(self, "_index", index)
        seen = set()
        for b in self.branches:
            if b.id in seen:
                raise ModelError(f"duplicate branch id {b.id!r}")
            seen.add(b.id)
            for end in (b.from_node, b.to_node):
                if end not in index:
                    raise ModelError(f"branch {b.id!r} references unknown node {end!r}")
        for s in self.shunts:
            if s.node not in index:
                raise ModelError(f"shunt {s.id!r} references unknown node {s.node!r}")
        if not (self.v_base > 0 and self.s_base > 0 and self.f1 > 0):
            raise ModelError("v_base, s_base and f1 must be positive")

    # structure --------------------------------------------------------------
    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def node_ids(self):
        return [n.id for n in self.nodes]

    @property
    def z_base(self):
        return self.v_base**2 / self.s_base

    @property
    def i_base(self):
        return self.s_base / self.v_base

    def index(self, node_id):
        try:
            return self._index[node_id]
        except KeyError:
            raise ModelError(f"unknown node {node_id!r}") from None

    def nodes_of_kind(self, kind):
        return [n.id for n in self.nodes if n.kind == kind]

    @property
    def S(self):
        return self.nodes_of_kind("forming")

    @property
    def R(self):
        return self.nodes_of_kind("following")

    @property
    def zero_injection(self):
        return self.nodes_of_kind("zero")


def phase_indices(positions):
    """Row indices of the 3 phases of each node position."""
    positions = np.asarray(list(positions), dtype=int)
    return (3 * positions[:, None] + np.arange(3)).reshape(-1)


# ---------------------------------------------------------------------------
# nodal equations
# ---------------------------------------------------------------------------
def build_incidence(grid):
    """Three-phase incidence matrix, ``3|L| x 3|N|``."""
    if not grid.branches:
        raise ModelError("the grid has no branches")
    A = np.zeros((3 * len(grid.branches), 3 * grid.n_nodes))
    for k, b in enumerate(grid.branches):
        m, n = grid.index(b.from_node), grid.index(b.to_node)
        A[3 * k : 3 * k + 3, 3 * m : 3 * m + 3] = I3
        A[3 * k : 3 * k + 3, 3 * n : 3 * n + 3] = -I3
    return A


def branch_admittance(branch, h, f1):
    Z = branch.impedance_at(h, f1)
    if condition_number(Z) > CONDITION_LIMIT:
        raise ParameterError(
            f"branch {branch.id!r} has a singular impedance at {h * f1:g} Hz",
            element=branch.id,
            frequency=h * f1,
        )
    return np.linalg.inv(Z)


def _admittance_at(grid, h):
    if grid.branches:
        A = build_incidence(grid)
        YL = np.zeros((3 * len(grid.branches),) * 2, dtype=complex)
        for k, b in enumerate(grid.branches):
            YL[3 * k : 3 * k + 3, 3 * k : 3 * k + 3] = branch_admittance(b, h, grid.f1)
        Y = A.T @ YL @ A
    else:
        # single-node grids: shunts only
        Y = np.zeros((3 * grid.n_nodes,) * 2, dtype=complex)
    for s in grid.shunts:
        n = grid.index(s.node)
        Y[3 * n : 3 * n + 3, 3 * n : 3 * n + 3] += s.admittance_at(h, grid.f1)
    return Y


def assemble_nodal_admittance(grid, f):
    """Compound nodal admittance ``Y(f) = A^T Y_L(f) A + Y_T(f)``."""
    if any(b.tabulated for b in grid.branches) or any(s.tabulated for s in grid.shunts):
        return _admittance_at(grid, _harmonic_of(f, grid.f1))
    return _admittance_at(grid, f / grid.f1)


def stack_nodal_admittance(grid, H):
    """``Y(f_h)`` for every ``h`` in ``H``; shape ``(K, 3|N|, 3|N|)``."""
    return np.stack([_admittance_at(grid, h) for h in H])


def kron_reduce(Y, keep):
    """Eliminate every node not in ``keep`` (node positions) from ``Y``.

    Returns ``Y_kk - Y_ke Y_ee^-1 Y_ek``; nodes stay in ascending order.
    """
    n_nodes = Y.shape[0] // 3
    keep = sorted(set(int(k) for k in keep))
    elim = [k for k in range(n_nodes) if k not in keep]
    ik = phase_indices(keep)
    if not elim:
        return Y[np.ix_(ik, ik)].copy()
    ie = phase_indices(elim)
    Yee = Y[np.ix_(ie, ie)]
    if condition_number(Yee) > CONDITION_LIMIT:
        raise ReductionError("eliminated block is singular; cannot Kron-reduce")
    return Y[np.ix_(ik, ik)] - Y[np.ix_(ik, ie)] @ np.linalg.solve(Yee, Y[np.ix_(ie, ik)])


@dataclass(frozen=True, eq=False)
class HybridBlocks:
    """``(V_S, I_R) = [[SS, SR], [RS, RR]] (I_S, V_R)``.

    Either single-frequency (2-D blocks) or stacked over harmonics (3-D).
    """

    SS: np.ndarray
    SR: np.ndarray
    RS: np.ndarray
    RR: np.ndarray

    @property
    def stacked(self):
        return self.SS.ndim == 3

    def apply(self, I_S, V_R):
        """Map injected currents at S and voltages at R to ``(V_S, I_R)``.

        Works on single vectors or ``(K, d)`` harmonic arrays (stacked blocks).
        """
        if self.stacked:
            V_S = np.einsum("hij,hj->hi", self.SS, I_S) + np.einsum("hij,hj->hi", self.SR, V_R)
            I_R = np.einsum("hij,hj->hi", self.RS, I_S) + np.einsum("hij,hj->hi", self.RR, V_R)
        else:
            V_S = self.SS @ I_S + self.SR @ V_R
            I_R = self.RS @ I_S + self.RR @ V_R
        return V_S, I_R

    def block(self, h_index):
        return HybridBlocks(self.SS[h_index], self.SR[h_index], self.RS[h_index], self.RR[h_index])


def partition_hybrid(Y, S, R):
    """Hybrid blocks of ``Y`` for the node positions ``S`` and ``R``."""
    iS, iR = phase_indices(S), phase_indices(R)
    if len(set(S) & set(R)):
        raise PartitionError("S and R overlap")
    Yss = Y[np.ix_(iS, iS)]
    Ysr = Y[np.ix_(iS, iR)]
    Yrs = Y[np.ix_(iR, iS)]
    Yrr = Y[np.ix_(iR, iR)]
    if len(iS) == 0:
        raise PartitionError("S is empty; the hybrid form needs at least one grid-forming node")
    if condition_number(Yss) > CONDITION_LIMIT:
        raise PartitionError("Y_SS is singular; this S/R split is infeasible")
    Hss = np.linalg.inv(Yss)
    Hsr = -Hss @ Ysr
    Hrs = Yrs @ Hss
    Hrr = Yrr - Yrs @ Hss @ Ysr
    return HybridBlocks(Hss, Hsr, Hrs, Hrr)


@dataclass(frozen=True, eq=False)
class GridOperators:
    """Everything the solver needs from the grid, for one index set."""

    grid: GridModel
    H: HarmonicIndexSet
    Y: np.ndarray  # (K, 3N, 3N) full nodal admittance
    hybrid: HybridBlocks  # stacked, on the Kron-reduced grid
    S: tuple  # node positions
    R: tuple
    zero: tuple


def stack_harmonic_hybrid(grid, H, Y=None):
    """Hybrid blocks at every ``f_h``, after Kron-eliminating zero-injection nodes."""
    if H.f1 != grid.f1:
        raise ModelError(f"index set fundamental {H.f1} Hz differs from grid {grid.f1} Hz")
    S = [grid.index(n) for n in grid.S]
    R = [grid.index(n) for n in grid.R]
    keep = sorted(S + R)
    # positions of S and R inside the reduced ordering
    pos = {k: i for i, k in enumerate(keep)}
    S_red, R_red = [pos[k] for k in S], [pos[k] for k in R]
    blocks = []
    for k, h in enumerate(H):
        Yh = _admittance_at(grid, h) if Y is None else Y[k]
        try:
            Yr = kron_reduce(Yh, keep)
            blocks.append(partition_hybrid(Yr, S_red, R_red))
        except (ReductionError, PartitionError) as exc:
            raise PartitionError(f"harmonic {h}: {exc}", harmonic=h) from exc
    return HybridBlocks(*(np.stack([getattr(b, n) for b in blocks]) for n in ("SS", "SR", "RS", "RR")))


def grid_operators(grid, H):
    Y = stack_nodal_admittance(grid, H)
    hybrid = stack_harmonic_hybrid(grid, H, Y=Y)
    return GridOperators(
        grid=grid,
        H=H,
        Y=Y,
        hybrid=hybrid,
        S=tuple(grid.index(n) for n in grid.S),
        R=tuple(grid.index(n) for n in grid.R),
        zero=tuple(grid.index(n) for n in grid.zero_injection),
    )


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class Finding:
    element: Hashable
    check: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple = ()

    @property
    def ok(self):
        return not self.findings

    def __bool__(self):
        return self.ok

    def failed(self, check):
        return [f for f in self.findings if f.check == check]

    def __str__(self):
        if self.ok:
            return "grid valid"
        return "grid invalid:\n" + "\n".join(
            f"  [{f.check}] {f.element!r}: {f.message}" for f in self.findings
        )


def _sample_harmonics(elem, h_max):
    if elem.tabulated:
        return sorted(elem.table)
    if h_max is None:
        return [0, 1]
    return list(range(h_max + 1))


def validate_grid(grid, h_max=None):
    """Check symmetry, invertibility, losses and connectivity.

    Never raises for bad data; every violation becomes a finding. RL/GC
    elements are checked at DC and ``f1`` (or up to ``h_max``), tables at
    each tabulated harmonic.
    """
    out = []
    for b in grid.branches:
        for h in _sample_harmonics(b, h_max):
            Z = b.impedance_at(h, grid.f1)
            tag = f"{h * grid.f1:g} Hz"
            if not is_symmetric(Z):
                out.append(Finding(b.id, "symmetric", f"impedance not symmetric at {tag}"))
            if condition_number(Z) > CONDITION_LIMIT:
                out.append(Finding(b.id, "invertible", f"impedance singular at {tag}"))
            lam = min_real_part_eig(Z)
            if lam < -DEFINITENESS_TOL:
                out.append(Finding(b.id, "lossy", f"real part indefinite at {tag} (min eig {lam:.3g}); not passive"))
            elif not lam > 0:
                out.append(Finding(b.id, "strictly_lossy", f"real part not positive definite at {tag} (min eig {lam:.3g})"))
    for s in grid.shunts:
        for h in _sample_harmonics(s, h_max):
            Y = s.admittance_at(h, grid.f1)
            if not np.any(Y):
                continue
            tag = f"{h * grid.f1:g} Hz"
            if not is_symmetric(Y):
                out.append(Finding(s.id, "symmetric", f"admittance not symmetric at {tag}"))
            if condition_number(Y) > CONDITION_LIMIT:
                out.append(Finding(s.id, "invertible", f"nonzero admittance singular at {tag}"))
            lam = min_real_part_eig(Y)
            if lam < -DEFINITENESS_TOL:
                out.append(Finding(s.id, "lossy", f"real part indefinite at {tag} (min eig {lam:.3g}); not passive"))
    if grid.branches:
        n = grid.n_nodes
        rows = [grid.index(b.from_node) for b in grid.branches]
        cols = [grid.index(b.to_node) for b in grid.branches]
        adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
        n_comp, _ = connected_components(adj, directed=True, connection="weak")
        if n_comp > 1:
            out.append(Finding("grid", "connected", f"branch graph has {n_comp} components"))
    elif grid.n_nodes > 1:
        out.append(Finding("grid", "connected", "no branches"))
    return ValidationReport(tuple(out))


def require_valid(grid, h_max=None):
    report = validate_grid(grid, h_max)
    if not report.ok:
        raise ValidationError(report)
    return report
