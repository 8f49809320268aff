import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import ConvergenceWarning, NotFittedError

from cases import (
    F1,
    POS,
    forming,
    following,
    four_bus,
    line,
    linear_case,
    thevenin_fundamental,
    two_bus,
    two_bus_grid,
)
from hpflow.exceptions import ConvergenceError, ModelError, ResourceEvaluationError
from hpflow.grid import GridModel, Node, ShuntElement, phase_indices
from hpflow.ltp import HarmonicIndexSet, HarmonicSignal, lift
from hpflow.solver import (
    HarmonicPowerFlow,
    HpfProblem,
    admittance_residual,
    flat_start,
    jacobian,
    mismatch,
    recover_outputs,
    solve_hpf,
)
from hpflow.sources import NortonEquivalent, TheveninEquivalent, diagonal_block_matrix

TOL = 1e-8


@pytest.fixture(scope="module")
def bus2():
    return two_bus(h_max=6)


@pytest.fixture(scope="module")
def bus2_solution(bus2):
    return solve_hpf(bus2, tol=TOL)


def fd_jacobian(problem, x, step=1e-6):
    def resid(x):
        return problem.to_real(*mismatch(problem, *problem.from_real(x)))

    cols = []
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = step
        cols.append((resid(x + dx) - resid(x - dx)) / (2 * step))
    return np.stack(cols, axis=1)


# flat start ------------------------------------------------------------------------------
def test_flat_start(bus2):
    I_S, V_R = flat_start(bus2)
    H = bus2.H
    assert np.abs(I_S).max() == 0
    np.testing.assert_allclose(V_R[H.index(1)], 0.5 * POS, atol=1e-15)
    np.testing.assert_allclose(V_R[H.index(-1)], 0.5 * POS.conj(), atol=1e-15)
    assert V_R[H.index(1), 0] == 0.5
    assert np.abs(V_R[H.index(5)]).max() == 0 and np.abs(V_R[H.index(0)]).max() == 0


# mismatch ----------------------------------------------------------------------------------
def independent_mismatch(problem, I_S, V_R):
    """Term-by-term oracle: hybrid blocks from a dense inverse and gains from the raw loop."""
    grid, H = problem.grid, problem.H
    s = phase_indices([grid.index(n) for n in problem.S])
    r = phase_indices([grid.index(n) for n in problem.R])
    dV = np.zeros_like(I_S)
    dI = np.zeros_like(V_R)
    for k, h in enumerate(H):
        Y = problem.ops.Y[k]
        Yss_inv = np.linalg.inv(Y[np.ix_(s, s)])
        Hss, Hsr = Yss_inv, -Yss_inv @ Y[np.ix_(s, r)]
        Hrs, Hrr = Y[np.ix_(r, s)] @ Yss_inv, Y[np.ix_(r, r)] - Y[np.ix_(r, s)] @ Yss_inv @ Y[np.ix_(s, r)]
        dV[k] = Hss @ I_S[k] + Hsr @ V_R[k]
        dI[k] = Hrs @ I_S[k] + Hrr @ V_R[k]
    for j, n in enumerate(problem.S + problem.R):
        comp = problem.resources[n]
        side = slice(3 * j, 3 * j + 3) if n in problem.S else slice(3 * (j - len(problem.S)), 3 * (j - len(problem.S)) + 3)
        w = (I_S if n in problem.S else V_R)[:, side].reshape(-1)
        ol, T = comp.open_loop, comp.T
        nu = T.shape[0]
        X = np.linalg.inv(np.eye(nu) - T @ ol.D)
        At = ol.A + ol.B @ X @ T @ ol.C
        Et = ol.E + ol.B @ X @ T @ ol.F
        Y_ = np.linalg.inv(np.eye(ol.D.shape[0]) - ol.D @ T)
        G = Y_ @ ol.C @ np.linalg.inv(1j * np.diag(ol.Omega) - At) @ Et + Y_ @ ol.F
        K = H.size
        n_pi_out = comp.model.pi.n_outputs * K
        n_pi_w = comp.model.pi.n_disturbances * K
        Gpp, Gpk = G[:n_pi_out, :n_pi_w], G[:n_pi_out, n_pi_w:]
        Tout = lift(comp.model.grid_output_plus(), H).matrix()
        # reference fed by the synchronous dq DC value of the measured output block
        Tk = lift(comp.model.control_transform.forward(), H).matrix()
        vdq = (Tk @ w).reshape(K, 2)[H.index(0)].real
        ref = np.zeros((K, 2), complex)
        ref[H.index(0)] = comp.model.reference(vdq)
        y = Tout @ (Gpp @ w + Gpk @ ref.reshape(-1))
        if n in problem.S:
            dV[:, side] -= y.reshape(K, 3)
        else:
            dI[:, side] -= y.reshape(K, 3)
    return dV, dI


def test_mismatch_term_by_term_flat_start(bus2):
    I_S, V_R = flat_start(bus2)
    dV, dI = mismatch(bus2, I_S, V_R)
    rV, rI = independent_mismatch(bus2, I_S, V_R)
    assert np.abs(dV - rV).max() < 1e-12 * max(1, np.abs(rV).max())
    assert np.abs(dI - rI).max() < 1e-12 * max(1, np.abs(rI).max())


def test_mismatch_vanishes_at_solution(bus2, bus2_solution):
    dV, dI = mismatch(bus2, bus2_solution.I_S, bus2_solution.V_R)
    assert max(np.abs(dV).max(), np.abs(dI).max()) < TOL


def single_node_stiff(h_max=3):
    H = HarmonicIndexSet(h_max, F1)
    g = GridModel([Node(1, "forming")], [], [ShuntElement("s", 1, G=0.5 * np.eye(3))], f1=F1)
    te = TheveninEquivalent(thevenin_fundamental(H, 1).V_TE, np.zeros((3 * H.size,) * 2), node=1, forming=True)
    return HpfProblem(g, [te], H)


def test_stiff_source_single_node():
    p = single_node_stiff()
    sol = solve_hpf(p)
    assert sol.converged and sol.iterations == 1
    dV, _ = mismatch(p, sol.I_S, sol.V_R)
    assert np.abs(dV).max() < 1e-15
    te = p.resources[1]
    np.testing.assert_allclose(sol.V_S, te.V_TE.coeffs, atol=1e-15)


# jacobian -----------------------------------------------------------------------------------
def test_linear_problem_jacobian_is_constant():
    p = linear_case(h_max=4)
    I_S, V_R = flat_start(p)
    J1 = jacobian(p, I_S, V_R)
    rng = np.random.default_rng(0)
    x = p.to_real(I_S, V_R) + rng.normal(size=p.n_real)
    J2 = jacobian(p, *p.from_real(x))
    assert np.array_equal(J1, J2)


def test_jacobian_matches_fd(bus2, bus2_solution):
    rng = np.random.default_rng(1)
    x0 = bus2.to_real(bus2_solution.I_S, bus2_solution.V_R)
    for _ in range(2):
        x = x0 + 0.01 * rng.normal(size=x0.size)
        J = jacobian(bus2, *bus2.from_real(x))
        Jfd = fd_jacobian(bus2, x)
        assert np.abs(J - Jfd).max() / np.abs(J).max() < 1e-5


def test_jacobian_sr_block_is_grid_hybrid(bus2):
    I_S, V_R = flat_start(bus2)
    J = jacobian(bus2, I_S, V_R)
    a = bus2.cS.size
    np.testing.assert_array_equal(J[:a, a:], bus2.grid_jacobian[:a, a:])
    np.testing.assert_array_equal(J[a:, :a], bus2.grid_jacobian[a:, :a])
    # grid block equals the realified H_SR
    from hpflow.realcoords import realify_block_diagonal

    ref = realify_block_diagonal(bus2.ops.hybrid.SR, bus2.cS, bus2.cR)
    np.testing.assert_allclose(J[:a, a:], ref, atol=0)
    with pytest.raises(ValueError):
        bus2.grid_jacobian[0, 0] = 1.0


# solve ---------------------------------------------------------------------------------------
def test_linear_problem_one_iteration():
    for lti in (True, False):
        sol = solve_hpf(linear_case(h_max=5, lti=lti))
        assert sol.converged and sol.iterations == 1


def test_two_bus_converges(bus2, bus2_solution):
    sol = bus2_solution
    assert sol.converged and sol.iterations < 20 and sol.residual < TOL
    spectra = recover_outputs(bus2, sol)
    assert admittance_residual(bus2, spectra) < 10 * TOL
    assert spectra.kcl_residual < TOL
    # anisotropic follower produces non-characteristic harmonics
    V2 = spectra.node(2, "V")
    assert np.abs(V2[3]).max() > 1e-5


def test_residual_history_is_logged(bus2_solution):
    recs = bus2_solution.log_records()
    assert [r["iter"] for r in recs] == list(range(bus2_solution.iterations + 1))
    assert max(recs[-1]["max_dV"], recs[-1]["max_dI"]) == bus2_solution.residual


def test_conjugate_symmetry_of_solution(bus2_solution):
    for X in (bus2_solution.I_S, bus2_solution.V_R, bus2_solution.V_S, bus2_solution.I_R):
        assert np.array_equal(X[::-1], np.conj(X)) or np.abs(X[::-1] - np.conj(X)).max() < 1e-15


def test_iterates_are_projected():
    seen = []
    p = two_bus(h_max=3)
    orig = p.resource_outputs

    def spy(I_S, V_R):
        seen.append((I_S.copy(), V_R.copy()))
        return orig(I_S, V_R)

    p.resource_outputs = spy
    solve_hpf(p)
    for I_S, V_R in seen:
        for X in (I_S, V_R):
            assert np.array_equal(X[::-1], np.conj(X))


def test_non_convergence_flag_and_error():
    p = two_bus(h_max=3)
    sol = solve_hpf(p, max_iter=1, tol=1e-14)
    assert not sol.converged and sol.iterations == 1
    with pytest.raises(ConvergenceError) as err:
        solve_hpf(p, max_iter=1, tol=1e-14, raise_on_failure=True)
    assert len(err.value.history) == 2


def test_resource_error_names_node():
    p = two_bus(h_max=3)
    I_S, V_R = flat_start(p)
    with pytest.raises(ResourceEvaluationError) as err:
        mismatch(p, I_S, np.zeros_like(V_R))
    assert err.value.node == 2
    assert "2" in str(err.value)


def test_four_bus_with_norton_source():
    p = four_bus(h_max=7)
    sol = solve_hpf(p)
    assert sol.converged and sol.iterations < 20
    spectra = recover_outputs(p, sol)
    assert spectra.kcl_residual < TOL
    assert np.abs(spectra.node(4, "I")[5]).max() > 1e-3


# recovery ----------------------------------------------------------------------------------
def test_recover_single_branch_flow(bus2, bus2_solution):
    spectra = recover_outputs(bus2, bus2_solution)
    b = bus2.grid.branches[0]
    for j, h in enumerate(bus2.H):
        Z = b.impedance_at(h, F1)
        V1, V2 = spectra.V[j, :3], spectra.V[j, 3:]
        np.testing.assert_allclose(spectra.I_branch[j, :3], np.linalg.solve(Z, V1 - V2), atol=1e-15)
        # node 1 has no shunt: its injection is exactly the branch flow
        np.testing.assert_allclose(spectra.I[j, :3], spectra.I_branch[j, :3], atol=1e-10)


def test_recover_dangling_branch_has_zero_flow():
    H = HarmonicIndexSet(3, F1)
    base = two_bus_grid()
    grid = GridModel(list(base.nodes) + [Node(3, "zero")], list(base.branches) + [line("open", 2, 3)],
                     list(base.shunts), f1=F1)
    p = HpfProblem(grid, [forming(1), following(2, aniso=False)], H)
    sol = solve_hpf(p)
    spectra = recover_outputs(p, sol)
    k = spectra.branch_ids.index("open")
    assert np.abs(spectra.I_branch[:, 3 * k : 3 * k + 3]).max() < 1e-12
    np.testing.assert_allclose(spectra.node(3, "V").coeffs, spectra.node(2, "V").coeffs, atol=1e-12)


def test_recover_summation_identity():
    p = four_bus(h_max=5)
    sol = solve_hpf(p)
    sp = recover_outputs(p, sol)
    # per harmonic and phase: total injection equals total shunt absorption plus branch losses' net zero
    for j in range(p.H.size):
        inj = sp.I[j].reshape(-1, 3).sum(axis=0)
        sh = sp.I_shunt[j].reshape(-1, 3).sum(axis=0)
        np.testing.assert_allclose(inj, sh, atol=1e-10)


# problem construction ---------------------------------------------------------------------
def test_problem_rejections():
    H = HarmonicIndexSet(2, F1)
    base = two_bus_grid()
    with pytest.raises(ModelError, match="no resource"):
        HpfProblem(base, [forming(1)], H)
    with pytest.raises(ModelError, match="more than one"):
        HpfProblem(base, [forming(1), following(2), following(2)], H)
    with pytest.raises(ModelError, match="voltage-output"):
        HpfProblem(base, [following(1), following(2)], H)
    with pytest.raises(ModelError, match="current-output"):
        HpfProblem(base, [forming(1), forming(2)], H)
    no_s = GridModel([Node(1, "following"), Node(2, "following")], list(base.branches), list(base.shunts), f1=F1)
    with pytest.raises(ModelError, match="grid-forming"):
        HpfProblem(no_s, [following(1), following(2)], H)
    with pytest.raises(ModelError, match="fundamental"):
        HpfProblem(base, [forming(1), following(2)], HarmonicIndexSet(2, 60.0))


def test_hpf_threads(monkeypatch):
    monkeypatch.setenv("HPF_THREADS", "4")
    a = solve_hpf(four_bus(h_max=4))
    monkeypatch.setenv("HPF_THREADS", "1")
    b = solve_hpf(four_bus(h_max=4))
    assert np.array_equal(a.V_R, b.V_R) and np.array_equal(a.I_S, b.I_S)
    monkeypatch.setenv("HPF_THREADS", "zero")
    with pytest.raises(ModelError):
        four_bus(h_max=1)


# estimator ------------------------------------------------------------------------------
def test_estimator_api(bus2):
    est = HarmonicPowerFlow(tol=1e-9)
    with pytest.raises(NotFittedError):
        est.node_spectrum(1)
    assert est.fit(bus2) is est
    assert est.converged_ and est.n_iter_ < 20
    assert est.score() == -est.solution_.residual
    np.testing.assert_array_equal(est.node_spectrum(2, "V").coeffs, est.spectra_.node(2, "V").coeffs)
    c = clone(est)
    assert c.get_params() == est.get_params() and not hasattr(c, "solution_")
    with pytest.raises(ModelError):
        est.fit("grid.json")


def test_estimator_warns_on_non_convergence():
    est = HarmonicPowerFlow(tol=1e-15, max_iter=1)
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        est.fit(two_bus(h_max=2))
    assert any(issubclass(x.category, ConvergenceWarning) for x in w)
    assert not est.converged_


# purity ------------------------------------------------------------------------------------
def test_linear_network_purity():
    for lti in (True,):
        p = linear_case(h_max=6, lti=lti)
        sp = recover_outputs(p, solve_hpf(p))
        H = p.H
        outside = [H.index(h) for h in H if abs(h) != 1]
        assert np.abs(sp.V[outside]).max() < 1e-10
        assert np.abs(sp.I[outside]).max() < 1e-10


def test_norton_only_following_side():
    H = HarmonicIndexSet(5, F1)
    I = HarmonicSignal.from_dict(H, 3, {5: 0.01 * POS.conj()})
    Y = diagonal_block_matrix(H, lambda h: 0.05 * np.eye(3))
    p = HpfProblem(two_bus_grid(), [forming(1), NortonEquivalent(I, Y, node=2, H=H)], H)
    sol = solve_hpf(p)
    assert sol.converged and sol.iterations == 1
