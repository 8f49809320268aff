"""Harmonic power flow: mismatch equations and Newton-Raphson.

Unknowns are the currents injected at forming nodes ``I_S`` and the voltages
at following nodes ``V_R``. With the grid's hybrid blocks::

    dV_S = H_SS I_S + H_SR V_R - V_S^res(I_S)
    dI_R = H_RS I_S + H_RR V_R - I_R^res(V_R)

(grid minus resource). The iteration runs over real coordinates of
``h = 0..h_max`` (see :mod:`hpflow.realcoords`): the ``I_S`` part uses
``RealCoordinates(h_max, 3|S|)`` followed by ``RealCoordinates(h_max, 3|R|)``
for ``V_R``; within each, harmonic-major then node then phase.
"""

import json
import logging
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.linalg import lapack
from sklearn.base import BaseEstimator
from sklearn.exceptions import ConvergenceWarning

from .exceptions import (
    ConvergenceError,
    HpfError,
    ModelError,
    ResourceEvaluationError,
    SingularJacobianError,
)
from .grid import GridModel, grid_operators, phase_indices, require_valid
from .ltp import HarmonicIndexSet, HarmonicSignal
from .realcoords import RealCoordinates, realify_block_diagonal
from .sources import EquivalentSpec
from .validation import CONDITION_LIMIT

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50
FLAT_ANGLES = np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3])


def thread_count():
    """Worker cap from ``HPF_THREADS`` (default 1, i.e. serial)."""
    raw = os.environ.get("HPF_THREADS", "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ModelError(f"HPF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ModelError(f"HPF_THREADS must be a positive integer, got {raw!r}")
    return n


def _compile_resource(res, H):
    if isinstance(res, EquivalentSpec):
        return res.build(H)
    if hasattr(res, "compile"):
        return res.compile(H)
    raise ModelError(f"cannot use {type(res).__name__} as a resource")


class HpfProblem:
    """Grid, resources and index set, validated and compiled.

    ``resources`` is a list of :class:`CiderModel`, Thevenin/Norton
    equivalents or their unbound specs, each with a ``node`` attribute.
    """

    def __init__(self, grid, resources, H, validate=True, threads=None):
        if not isinstance(grid, GridModel):
            raise ModelError("grid must be a GridModel")
        if isinstance(H, int):
            H = HarmonicIndexSet(H, grid.f1)
        if H.f1 != grid.f1:
            raise ModelError(f"index set fundamental {H.f1} Hz differs from grid {grid.f1} Hz")
        if not grid.S:
            raise ModelError("no grid-forming node: the hybrid formulation needs |S| >= 1")
        if validate:
            self.report = require_valid(grid, H.h_max)
        else:
            self.report = None
        self.grid = grid
        self.H = H
        self.threads = thread_count() if threads is None else int(threads)
        self.S, self.R = list(grid.S), list(grid.R)

        by_node = {}
        for r in resources:
            node = getattr(r, "node", None)
            if node is None:
                raise ModelError(f"resource {r!r} has no node")
            grid.index(node)
            if node in by_node:
                raise ModelError(f"node {node!r} has more than one resource")
            by_node[node] = r
        for n in grid.zero_injection:
            if n in by_node:
                raise ModelError(f"zero-injection node {n!r} cannot host a resource")
        for n in self.S + self.R:
            if n not in by_node:
                raise ModelError(f"node {n!r} ({grid.nodes[grid.index(n)].kind}) has no resource")

        compiled = self._map(lambda n: _compile_resource(by_node[n], H), self.S + self.R, wrap=False)
        self.resources = dict(zip(self.S + self.R, compiled))
        for n in self.S:
            if self.resources[n].output_quantity != "V":
                raise ModelError(f"forming node {n!r} needs a voltage-output resource")
        for n in self.R:
            if self.resources[n].output_quantity != "I":
                raise ModelError(f"following node {n!r} needs a current-output resource")

        self.ops = grid_operators(grid, H)
        hyb = self.ops.hybrid
        nS, nR = 3 * len(self.S), 3 * len(self.R)
        self.cS = RealCoordinates(H.h_max, nS)
        self.cR = RealCoordinates(H.h_max, nR) if nR else None
        self.n_real = self.cS.size + (self.cR.size if nR else 0)
        # constant grid part of the Jacobian
        Jg = np.zeros((self.n_real, self.n_real))
        a = self.cS.size
        Jg[:a, :a] = realify_block_diagonal(hyb.SS, self.cS, self.cS)
        if nR:
            Jg[:a, a:] = realify_block_diagonal(hyb.SR, self.cS, self.cR)
            Jg[a:, :a] = realify_block_diagonal(hyb.RS, self.cR, self.cS)
            Jg[a:, a:] = realify_block_diagonal(hyb.RR, self.cR, self.cR)
        Jg.setflags(write=False)
        self.grid_jacobian = Jg
        self._scatter = {}
        for k, n in enumerate(self.S):
            self._scatter[n] = self._node_real_index(self.cS, k, 0)
        for k, n in enumerate(self.R):
            self._scatter[n] = self._node_real_index(self.cR, k, self.cS.size)

    # ------------------------------------------------------------------
    @property
    def linear(self):
        return all(r.linear for r in self.resources.values())

    @staticmethod
    def _node_real_index(coords, k, shift):
        local = RealCoordinates(coords.h_max, 3)
        base = np.array([coords.offset(h, p) for h, p in zip(local.h, local.part)])
        return shift + base + 3 * k + local.channel

    def _map(self, fn, nodes, wrap=True):
        """Apply ``fn`` per node, in a thread pool when ``HPF_THREADS`` > 1.

        With ``wrap`` failures are re-raised as :class:`ResourceEvaluationError`
        carrying the node.
        """
        def run(n):
            if not wrap:
                return fn(n)
            try:
                return fn(n)
            except ResourceEvaluationError:
                raise
            except (HpfError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                raise ResourceEvaluationError(n, exc) from exc

        if self.threads > 1 and len(nodes) > 1:
            with ThreadPoolExecutor(max_workers=min(self.threads, len(nodes))) as ex:
                return list(ex.map(run, nodes))
        return [run(n) for n in nodes]

    # signals <-> real vector ------------------------------------------
    def split(self, I_S, V_R):
        """Per-node signals from stacked ``(K, 3|S|)`` / ``(K, 3|R|)`` arrays."""
        out = {}
        for k, n in enumerate(self.S):
            out[n] = HarmonicSignal(self.H, I_S[:, 3 * k : 3 * k + 3])
        for k, n in enumerate(self.R):
            out[n] = HarmonicSignal(self.H, V_R[:, 3 * k : 3 * k + 3])
        return out

    def to_real(self, I_S, V_R):
        parts = [self.cS.to_real(I_S)]
        if self.cR is not None:
            parts.append(self.cR.to_real(V_R))
        return np.concatenate(parts)

    def from_real(self, x):
        a = self.cS.size
        I_S = self.cS.from_real(x[:a])
        V_R = self.cR.from_real(x[a:]) if self.cR is not None else np.zeros((self.H.size, 0), complex)
        return I_S, V_R

    # resource evaluation ------------------------------------------------
    def resource_outputs(self, I_S, V_R):
        sig = self.split(I_S, V_R)
        nodes = self.S + self.R
        outs = self._map(lambda n: self.resources[n].output(sig[n]), nodes)
        V_S = np.concatenate([o.coeffs for o in outs[: len(self.S)]], axis=1)
        if self.R:
            I_R = np.concatenate([o.coeffs for o in outs[len(self.S) :]], axis=1)
        else:
            I_R = np.zeros((self.H.size, 0), complex)
        return V_S, I_R

    def resource_jacobians(self, I_S, V_R, nodes=None):
        sig = self.split(I_S, V_R)
        nodes = self.S + self.R if nodes is None else nodes
        jacs = self._map(lambda n: self.resources[n].output_jacobian(sig[n]), nodes)
        return dict(zip(nodes, jacs))


# ---------------------------------------------------------------------------
def flat_start(problem):
    """``I_S = 0``; ``V_R`` a unit positive-sequence fundamental (peak 1 p.u.)."""
    H = problem.H
    I_S = np.zeros((H.size, 3 * len(problem.S)), dtype=complex)
    V_R = np.zeros((H.size, 3 * len(problem.R)), dtype=complex)
    if problem.R and H.h_max >= 1:
        e = 0.5 * np.exp(1j * FLAT_ANGLES)
        V_R[H.index(1)] = np.tile(e, len(problem.R))
        V_R[H.index(-1)] = np.conj(V_R[H.index(1)])
    return I_S, V_R


def mismatch(problem, I_S, V_R):
    """``(dV_S, dI_R)`` as ``(K, 3|S|)`` and ``(K, 3|R|)`` arrays."""
    I_S, V_R = np.asarray(I_S, complex), np.asarray(V_R, complex)
    VSg, IRg = problem.ops.hybrid.apply(I_S, V_R)
    VSr, IRr = problem.resource_outputs(I_S, V_R)
    return VSg - VSr, IRg - IRr


def mismatch_norms(dV, dI):
    return (
        float(np.abs(dV).max(initial=0.0)),
        float(np.abs(dI).max(initial=0.0)),
    )


class _JacobianCache:
    def __init__(self, problem):
        self.problem = problem
        self.fixed = None  # grid part minus linear resources

    def __call__(self, I_S, V_R):
        p = self.problem
        if self.fixed is None:
            J = np.array(p.grid_jacobian)
            linear = [n for n in p.S + p.R if p.resources[n].linear]
            for n, Jn in p.resource_jacobians(I_S, V_R, linear).items():
                idx = p._scatter[n]
                J[np.ix_(idx, idx)] -= Jn
            self.fixed = J
            self.fixed.setflags(write=False)
        nonlinear = [n for n in p.S + p.R if not p.resources[n].linear]
        if not nonlinear:
            return self.fixed
        J = np.array(self.fixed)
        for n, Jn in p.resource_jacobians(I_S, V_R, nonlinear).items():
            idx = p._scatter[n]
            J[np.ix_(idx, idx)] -= Jn
        return J


def jacobian(problem, I_S, V_R):
    """Real Jacobian of the mismatch with respect to ``(I_S, V_R)``."""
    return _JacobianCache(problem)(I_S, V_R)


def _solve_linear(J, r):
    lu, piv, info = lapack.dgetrf(J)
    if info > 0:
        raise SingularJacobianError("Jacobian is exactly singular", condition=np.inf)
    anorm = np.abs(J).sum(axis=0).max()
    rcond, _ = lapack.dgecon(lu, anorm, norm="1")
    cond = np.inf if rcond == 0 else 1.0 / rcond
    if cond > CONDITION_LIMIT:
        raise SingularJacobianError(f"Jacobian is singular (condition ~{cond:.3g})", condition=cond)
    return scipy.linalg.lu_solve((lu, piv), r)


@dataclass
class HpfSolution:
    H: HarmonicIndexSet
    S: list
    R: list
    I_S: np.ndarray  # (K, 3|S|)
    V_R: np.ndarray  # (K, 3|R|)
    V_S: np.ndarray  # recovered from the grid equations
    I_R: np.ndarray
    residual_history: list
    history: list  # [(max_dV, max_dI)] per evaluation, entry 0 at the start point
    iterations: int
    converged: bool
    tol: float
    runtime: float = 0.0
    damping_used: list = field(default_factory=list)

    @property
    def residual(self):
        return self.residual_history[-1]

    def node_signals(self):
        """``{node: (V, I)}`` as :class:`HarmonicSignal` pairs."""
        out = {}
        for k, n in enumerate(self.S):
            sl = slice(3 * k, 3 * k + 3)
            out[n] = (HarmonicSignal(self.H, self.V_S[:, sl]), HarmonicSignal(self.H, self.I_S[:, sl]))
        for k, n in enumerate(self.R):
            sl = slice(3 * k, 3 * k + 3)
            out[n] = (HarmonicSignal(self.H, self.V_R[:, sl]), HarmonicSignal(self.H, self.I_R[:, sl]))
        return out

    def log_records(self):
        return [{"iter": k, "max_dV": dv, "max_dI": di} for k, (dv, di) in enumerate(self.history)]

    def write_log(self, path):
        with open(path, "w") as fh:
            for rec in self.log_records():
                fh.write(json.dumps(rec) + "\n")
            fh.write(json.dumps({
                "converged": self.converged,
                "iterations": self.iterations,
                "residual": self.residual,
                "residual_history": self.residual_history,
            }) + "\n")


def solve_hpf(problem, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=1.0,
              fallback_damping=0.5, x0=None, raise_on_failure=False, callback=None):
    """Newton-Raphson from the flat start (or ``x0 = (I_S, V_R)``)."""
    if not tol > 0:
        raise ValueError("tol must be positive")
    if max_iter < 0:
        raise ValueError("max_iter must be non-negative")
    t0 = time.perf_counter()
    I_S, V_R = flat_start(problem) if x0 is None else (np.asarray(x0[0], complex), np.asarray(x0[1], complex))
    x = problem.to_real(I_S, V_R)
    I_S, V_R = problem.from_real(x)  # projection onto real signals
    jac = _JacobianCache(problem)

    dV, dI = mismatch(problem, I_S, V_R)
    history = [mismatch_norms(dV, dI)]
    residuals = [max(history[0])]
    used = []
    it = 0
    while residuals[-1] >= tol and it < max_iter:
        J = jac(I_S, V_R)
        r = problem.to_real(dV, dI)
        step = _solve_linear(J, r)
        alpha = damping
        x_new = x - alpha * step
        cand = problem.from_real(x_new)
        dV_n, dI_n = mismatch(problem, *cand)
        res_n = max(mismatch_norms(dV_n, dI_n))
        if res_n > residuals[-1] and fallback_damping and fallback_damping != damping:
            alpha = fallback_damping
            x_new = x - alpha * step
            cand = problem.from_real(x_new)
            dV_n, dI_n = mismatch(problem, *cand)
        x, (I_S, V_R), dV, dI = x_new, cand, dV_n, dI_n
        it += 1
        used.append(alpha)
        history.append(mismatch_norms(dV, dI))
        residuals.append(max(history[-1]))
        log.debug("iteration %d: residual %.3e (damping %g)", it, residuals[-1], alpha)
        if callback is not None:
            callback(it, residuals[-1])
        if not np.isfinite(residuals[-1]):
            break
    converged = bool(residuals[-1] < tol)
    V_S, I_R = problem.ops.hybrid.apply(I_S, V_R)
    sol = HpfSolution(
        H=problem.H, S=list(problem.S), R=list(problem.R),
        I_S=I_S, V_R=V_R, V_S=V_S, I_R=I_R,
        residual_history=residuals, history=history, iterations=it,
        converged=converged, tol=tol, runtime=time.perf_counter() - t0,
        damping_used=used,
    )
    if not converged and raise_on_failure:
        raise ConvergenceError(
            f"no convergence after {it} iterations (residual {residuals[-1]:.3e} >= {tol:g})",
            history=residuals,
        )
    return sol


# ---------------------------------------------------------------------------
@dataclass
class NodalSpectra:
    """Full network state; arrays are ``(K, 3 x count)``, harmonic-major."""

    H: HarmonicIndexSet
    node_ids: list
    V: np.ndarray
    I: np.ndarray  # injections
    branch_ids: list
    I_branch: np.ndarray
    shunt_ids: list
    I_shunt: np.ndarray
    kcl_residual: float

    def node(self, node_id, quantity="V"):
        k = self.node_ids.index(node_id)
        arr = self.V if quantity == "V" else self.I
        return HarmonicSignal(self.H, arr[:, 3 * k : 3 * k + 3])


def recover_outputs(problem, solution):
    """Voltages everywhere, injections, branch and shunt currents."""
    grid, H, ops = problem.grid, problem.H, problem.ops
    K, N = H.size, grid.n_nodes
    V = np.zeros((K, 3 * N), dtype=complex)
    iS = phase_indices([grid.index(n) for n in problem.S])
    V[:, iS] = solution.V_S
    if problem.R:
        iR = phase_indices([grid.index(n) for n in problem.R])
        V[:, iR] = solution.V_R
    if ops.zero:
        ie = phase_indices(ops.zero)
        ik = phase_indices(sorted(ops.S + ops.R))
        for k in range(K):
            Y = ops.Y[k]
            V[k, ie] = -np.linalg.solve(Y[np.ix_(ie, ie)], Y[np.ix_(ie, ik)] @ V[k, ik])
    I = np.einsum("hij,hj->hi", ops.Y, V)
    nb, ns = len(grid.branches), len(grid.shunts)
    Ib = np.zeros((K, 3 * nb), dtype=complex)
    Ish = np.zeros((K, 3 * ns), dtype=complex)
    kcl = np.zeros((K, 3 * N), dtype=complex)
    for j, h in enumerate(H):
        for b_k, b in enumerate(grid.branches):
            m, n = grid.index(b.from_node), grid.index(b.to_node)
            Z = b.impedance_at(h, grid.f1)
            ib = np.linalg.solve(Z, V[j, 3 * m : 3 * m + 3] - V[j, 3 * n : 3 * n + 3])
            Ib[j, 3 * b_k : 3 * b_k + 3] = ib
            kcl[j, 3 * m : 3 * m + 3] += ib
            kcl[j, 3 * n : 3 * n + 3] -= ib
        for s_k, s in enumerate(grid.shunts):
            n = grid.index(s.node)
            ish = s.admittance_at(h, grid.f1) @ V[j, 3 * n : 3 * n + 3]
            Ish[j, 3 * s_k : 3 * s_k + 3] = ish
            kcl[j, 3 * n : 3 * n + 3] += ish
    # injections at S/R nodes come from the solution, zero elsewhere
    inj = np.zeros_like(I)
    inj[:, iS] = solution.I_S
    if problem.R:
        inj[:, iR] = solution.I_R
    kcl_res = float(np.abs(kcl - inj).max(initial=0.0))
    return NodalSpectra(
        H=H, node_ids=grid.node_ids, V=V, I=inj,
        branch_ids=[b.id for b in grid.branches], I_branch=Ib,
        shunt_ids=[s.id for s in grid.shunts], I_shunt=Ish,
        kcl_residual=kcl_res,
    )


def admittance_residual(problem, spectra):
    """``max |Y V - I|`` over all harmonics and nodes."""
    return float(np.abs(np.einsum("hij,hj->hi", problem.ops.Y, spectra.V) - spectra.I).max(initial=0.0))


# ---------------------------------------------------------------------------
class HarmonicPowerFlow(BaseEstimator):
    """Estimator-style front end to :func:`solve_hpf`.

    ``fit(problem)`` runs Newton-Raphson and stores the outcome in the usual
    trailing-underscore attributes.
    """

    def __init__(self, tol=DEFAULT_TOL, max_iter=DEFAULT_MAX_ITER, damping=1.0, fallback_damping=0.5):
        self.tol = tol
        self.max_iter = max_iter
        self.damping = damping
        self.fallback_damping = fallback_damping

    def fit(self, problem, y=None):
        if not isinstance(problem, HpfProblem):
            raise ModelError("fit expects an HpfProblem")
        sol = solve_hpf(problem, tol=self.tol, max_iter=self.max_iter,
                        damping=self.damping, fallback_damping=self.fallback_damping)
        self.problem_ = problem
        self.solution_ = sol
        self.n_iter_ = sol.iterations
        self.converged_ = sol.converged
        self.residual_history_ = list(sol.residual_history)
        self.spectra_ = recover_outputs(problem, sol)
        if not sol.converged:
            warnings.warn(
                f"harmonic power flow did not converge in {sol.iterations} iterations "
                f"(residual {sol.residual:.3e})",
                ConvergenceWarning,
            )
        return self

    def _check_fitted(self):
        if not hasattr(self, "solution_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("call fit first")

    def node_spectrum(self, node_id, quantity="V"):
        self._check_fitted()
        return self.spectra_.node(node_id, quantity)

    def score(self, problem=None, y=None):
        """Negative final residual (higher is better)."""
        self._check_fitted()
        return -self.solution_.residual
