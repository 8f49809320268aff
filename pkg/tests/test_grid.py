import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from cases import W1, random_network
from hpflow.exceptions import ModelError, ParameterError, PartitionError, ReductionError, ValidationError
from hpflow.grid import (
    BranchElement,
    GridModel,
    Node,
    ShuntElement,
    assemble_nodal_admittance,
    build_incidence,
    grid_operators,
    kron_reduce,
    partition_hybrid,
    phase_indices,
    require_valid,
    stack_harmonic_hybrid,
    validate_grid,
)
from hpflow.ltp import HarmonicIndexSet

I3 = np.eye(3)


def simple_grid(branches, n=2, kinds=None, shunts=()):
    kinds = kinds or ["forming"] + ["following"] * (n - 1)
    return GridModel([Node(k + 1, kinds[k]) for k in range(n)], branches, shunts, f1=50.0)


# incidence --------------------------------------------------------------------
def test_incidence_single_branch():
    g = simple_grid([BranchElement("a", 1, 2, R=I3)])
    np.testing.assert_array_equal(build_incidence(g), np.hstack([I3, -I3]))


def test_incidence_ring_columns_sum_to_zero():
    g = simple_grid([BranchElement("a", 1, 2, R=I3), BranchElement("b", 2, 3, R=I3),
                     BranchElement("c", 3, 1, R=I3)], n=3)
    A = build_incidence(g)
    for n in range(3):
        col = A[:, 3 * n : 3 * n + 3]
        np.testing.assert_array_equal(col.reshape(3, 3, 3).sum(axis=0), np.zeros((3, 3)))
    # every block row has one +I and one -I
    for k in range(3):
        row = A[3 * k : 3 * k + 3]
        blocks = [row[:, 3 * n : 3 * n + 3] for n in range(3)]
        assert sum(np.array_equal(b, I3) for b in blocks) == 1
        assert sum(np.array_equal(b, -I3) for b in blocks) == 1


def test_incidence_rank_of_random_tree():
    rng = np.random.default_rng(3)
    g = random_network(rng, n_nodes=5, extra_edges=0)
    A = build_incidence(g)
    # SVD-based rank as an independent factorization
    s = np.linalg.svd(A, compute_uv=False)
    assert int((s > 1e-10).sum()) == 3 * (5 - 1)


def test_incidence_unknown_node_and_no_branches():
    with pytest.raises(ModelError, match="unknown node"):
        simple_grid([BranchElement("a", 1, 9, R=I3)])
    with pytest.raises(ModelError, match="no branches"):
        build_incidence(simple_grid([]))


# nodal admittance ------------------------------------------------------------------
def test_identity_branch_admittance():
    g = simple_grid([BranchElement("a", 1, 2, R=I3)])
    Y = assemble_nodal_admittance(g, 50.0)
    np.testing.assert_allclose(Y, np.block([[I3, -I3], [-I3, I3]]), atol=1e-15)


def test_shunt_adds_to_diagonal():
    # Y_t = j I at 50 Hz  <=>  C = 1/(2 pi 50)
    g = simple_grid([BranchElement("a", 1, 2, R=I3)], shunts=[ShuntElement("s", 2, C=I3 / W1)])
    Y = assemble_nodal_admittance(g, 50.0)
    np.testing.assert_allclose(Y[3:, 3:], I3 + 1j * I3, atol=1e-14)


def test_admittance_matches_elementwise_kcl():
    rng = np.random.default_rng(7)
    g = random_network(rng, n_nodes=4)
    Y = assemble_nodal_admittance(g, 50.0)
    V = rng.normal(size=12) + 1j * rng.normal(size=12)
    I = np.zeros(12, complex)
    for b in g.branches:
        m, n = g.index(b.from_node), g.index(b.to_node)
        Z = b.R + 2j * np.pi * 50.0 * b.L
        ib = np.linalg.solve(Z, V[3 * m : 3 * m + 3] - V[3 * n : 3 * n + 3])
        I[3 * m : 3 * m + 3] += ib
        I[3 * n : 3 * n + 3] -= ib
    for s in g.shunts:
        n = g.index(s.node)
        I[3 * n : 3 * n + 3] += (s.G + 2j * np.pi * 50.0 * s.C) @ V[3 * n : 3 * n + 3]
    assert np.abs(Y @ V - I).max() < 1e-12
    assert np.abs(Y - Y.T).max() < 1e-12


def test_singular_branch_names_element_and_frequency():
    g = simple_grid([BranchElement("bad", 1, 2, R=np.zeros((3, 3)), L=I3 * 1e-3)])
    with pytest.raises(ParameterError) as err:
        assemble_nodal_admittance(g, 0.0)
    assert err.value.element == "bad" and err.value.frequency == 0.0


# Kron reduction ---------------------------------------------------------------------
def test_kron_empty_elimination_is_identity():
    rng = np.random.default_rng(0)
    Y = assemble_nodal_admittance(random_network(rng, n_nodes=3), 50.0)
    np.testing.assert_array_equal(kron_reduce(Y, [0, 1, 2]), Y)


def test_kron_chain_gives_series_impedance():
    Z1 = np.diag([1.0, 2.0, 3.0]) + 0.2
    Z2 = np.diag([0.5, 0.1, 0.7]) + 0.1
    g = simple_grid([BranchElement("a", 1, 2, R=Z1), BranchElement("b", 2, 3, R=Z2)], n=3,
                    kinds=["forming", "zero", "following"])
    Yr = kron_reduce(assemble_nodal_admittance(g, 0.0), [0, 2])
    Ys = np.linalg.inv(Z1 + Z2)
    np.testing.assert_allclose(Yr, np.block([[Ys, -Ys], [-Ys, Ys]]), atol=1e-12)


def test_kron_matches_full_solve():
    rng = np.random.default_rng(11)
    g = random_network(rng, n_nodes=5)
    Y = assemble_nodal_admittance(g, 250.0)
    keep, elim = [0, 2, 4], [1, 3]
    Yr = kron_reduce(Y, keep)
    ik, ie = phase_indices(keep), phase_indices(elim)
    Vk = rng.normal(size=9) + 1j * rng.normal(size=9)
    Ve = -np.linalg.solve(Y[np.ix_(ie, ie)], Y[np.ix_(ie, ik)] @ Vk)
    V = np.zeros(15, complex)
    V[ik], V[ie] = Vk, Ve
    I = Y @ V
    assert np.abs(I[ie]).max() < 1e-12
    assert np.abs(Yr @ Vk - I[ik]).max() < 1e-12


def test_kron_singular_block():
    Y = np.zeros((6, 6), complex)
    Y[:3, :3] = I3
    with pytest.raises(ReductionError):
        kron_reduce(Y, [0])


# hybrid partition ---------------------------------------------------------------------
def test_partition_decoupled():
    hb = partition_hybrid(2 * np.eye(6), [0], [1])
    np.testing.assert_allclose(hb.SS, 0.5 * I3)
    np.testing.assert_allclose(hb.SR, 0 * I3)
    np.testing.assert_allclose(hb.RS, 0 * I3)
    np.testing.assert_allclose(hb.RR, 2 * I3)


def test_partition_schur_by_block_elimination():
    rng = np.random.default_rng(5)
    g = random_network(rng, n_nodes=2, extra_edges=0)
    Y = assemble_nodal_admittance(g, 50.0)
    hb = partition_hybrid(Y, [0], [1])
    # eliminate V_S from  [I_S; I_R] = Y [V_S; V_R]  by Gaussian elimination on the 6x6 system
    M = Y.copy()
    for p in range(3):
        for r in range(p + 1, 6):
            M[r] -= M[r, p] / M[p, p] * M[p]
    np.testing.assert_allclose(hb.RR, M[3:, 3:], atol=1e-12)


def test_partition_errors():
    with pytest.raises(PartitionError, match="empty"):
        partition_hybrid(np.eye(6), [], [0, 1])
    Y = np.eye(6, dtype=complex)
    Y[:3, :3] = 0
    with pytest.raises(PartitionError, match="infeasible"):
        partition_hybrid(Y, [0], [1])


def hybrid_vs_direct(g, H, rng):
    """Relative hybrid-vs-admittance error on random (I_S, V_R)."""
    ops = grid_operators(g, H)
    S, R, Z = list(ops.S), list(ops.R), list(ops.zero)
    iS, iR, iZ = phase_indices(S), phase_indices(R), phase_indices(Z)
    worst = 0.0
    for k in range(H.size):
        Y = ops.Y[k]
        I_S = rng.normal(size=len(iS)) + 1j * rng.normal(size=len(iS))
        V_R = rng.normal(size=len(iR)) + 1j * rng.normal(size=len(iR))
        hb = ops.hybrid.block(k)
        V_S, I_R = hb.apply(I_S, V_R)
        # direct: solve for (V_S, V_Z) with zero injection at Z
        iu = np.concatenate([iS, iZ]).astype(int)
        rhs = np.concatenate([I_S, np.zeros(len(iZ))]) - Y[np.ix_(iu, iR)] @ V_R
        Vu = np.linalg.solve(Y[np.ix_(iu, iu)], rhs)
        V = np.zeros(Y.shape[0], complex)
        V[iu], V[iR] = Vu, V_R
        I = Y @ V
        ref = np.concatenate([V[iS], I[iR]])
        got = np.concatenate([V_S, I_R])
        worst = max(worst, np.abs(got - ref).max() / np.abs(ref).max())
        # composing back through the admittance form reproduces the inputs
        V[iS] = V_S
        I = Y @ V
        assert np.abs(I[iS] - I_S).max() < 1e-10 * max(1, np.abs(I_S).max())
    return worst


def test_hybrid_duality_random_with_zero_nodes():
    rng = np.random.default_rng(21)
    H = HarmonicIndexSet(5, 50.0)
    for _ in range(10):
        g = random_network(rng, n_nodes=6, n_zero=2)
        assert hybrid_vs_direct(g, H, rng) < 1e-10


# stacking ---------------------------------------------------------------------------------
def test_stack_dc_only_and_h25():
    rng = np.random.default_rng(2)
    g = random_network(rng, n_nodes=3)
    hb0 = stack_harmonic_hybrid(g, HarmonicIndexSet(0, 50.0))
    assert hb0.SS.shape[0] == 1
    S = [g.index(n) for n in g.S]
    R = [g.index(n) for n in g.R]
    direct = partition_hybrid(assemble_nodal_admittance(g, 0.0), S, R)
    np.testing.assert_allclose(hb0.SS[0], direct.SS)
    assert stack_harmonic_hybrid(g, HarmonicIndexSet(25, 50.0)).SS.shape[0] == 51


def test_stack_conjugate_symmetry():
    rng = np.random.default_rng(4)
    g = random_network(rng, n_nodes=4)
    H = HarmonicIndexSet(5, 50.0)
    hb = stack_harmonic_hybrid(g, H)
    for name in ("SS", "SR", "RS", "RR"):
        B = getattr(hb, name)
        for h in range(1, 6):
            assert np.abs(B[H.index(-h)] - np.conj(B[H.index(h)])).max(initial=0) < 1e-14


def test_stack_failure_reports_harmonic():
    # tabulated shunt cancels the branch admittance at h = 2 only, so Y_SS is singular there
    tab = {0: 0.1 * I3, 1: 0.1 * I3, 2: -I3}
    g = simple_grid([BranchElement("a", 1, 2, R=I3)], shunts=[ShuntElement("s", 1, table=tab)])
    with pytest.raises(PartitionError) as err:
        stack_harmonic_hybrid(g, HarmonicIndexSet(2, 50.0))
    assert err.value.harmonic in (-2, 2)


def test_stack_fundamental_mismatch():
    g = simple_grid([BranchElement("a", 1, 2, R=I3)])
    with pytest.raises(ModelError):
        stack_harmonic_hybrid(g, HarmonicIndexSet(1, 60.0))


# tables ------------------------------------------------------------------------------------
def test_tabulated_branch_exact_values_no_interpolation():
    table = {0: I3, 1: I3 + 1j * I3}
    b = BranchElement("t", 1, 2, table=table)
    np.testing.assert_array_equal(b.impedance_at(-1, 50.0), I3 - 1j * I3)
    with pytest.raises(ParameterError, match="harmonic 2"):
        b.impedance_at(2, 50.0)
    with pytest.raises(ParameterError, match="not a harmonic"):
        b.impedance(75.0, 50.0)
    with pytest.raises(ModelError):
        BranchElement("t", 1, 2, table={-1: I3})


def test_shunt_is_conductance_only_at_dc():
    s = ShuntElement("s", 1, G=0.1 * I3, C=1e-3 * I3)
    np.testing.assert_array_equal(s.admittance_at(0, 50.0), 0.1 * I3)


# validation -----------------------------------------------------------------------------------
def test_validate_identity_branch_passes():
    g = simple_grid([BranchElement("a", 1, 2, R=I3)])
    rep = validate_grid(g)
    assert rep.ok and str(rep) == "grid valid"


def test_validate_lossless_branch_fails_strictly_lossy():
    g = simple_grid([BranchElement("x", 1, 2, table={0: 1j * I3, 1: 1j * I3})])
    rep = validate_grid(g)
    assert [f.element for f in rep.failed("strictly_lossy")] == ["x", "x"]
    assert not rep.failed("lossy")


def test_validate_non_symmetric_fails():
    Z = I3.copy()
    Z[0, 1] = 0.3  # phase-shifter-like coupling in one direction only
    g = simple_grid([BranchElement("ps", 1, 2, R=Z)])
    rep = validate_grid(g)
    assert rep.failed("symmetric")
    with pytest.raises(ValidationError) as err:
        require_valid(g)
    assert err.value.report is not None


def test_validate_negative_resistance_and_disconnection():
    g = GridModel(
        [Node(1, "forming"), Node(2, "following"), Node(3, "following"), Node(4, "following")],
        [BranchElement("neg", 1, 2, R=-I3), BranchElement("ok", 3, 4, R=I3)],
    )
    rep = validate_grid(g)
    assert rep.failed("lossy")[0].element == "neg"
    assert rep.failed("connected")


def test_validate_checks_harmonics_up_to_hmax():
    # mutual L with indefinite real part can only appear through tables; use an invertibility failure
    g = simple_grid([BranchElement("a", 1, 2, R=I3)], shunts=[ShuntElement("s", 2, C=np.ones((3, 3)) * 1e-3)])
    rep = validate_grid(g, h_max=3)
    assert {f.check for f in rep.findings} == {"invertible"}


# properties ------------------------------------------------------------------------------------
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 6), hm=st.integers(0, 5))
def test_property_hybrid_duality(seed, n, hm):
    rng = np.random.default_rng(seed)
    g = random_network(rng, n_nodes=n)
    if not g.R and not g.shunts:
        # all-forming and floating: Y_SS is the singular Laplacian
        with pytest.raises(PartitionError):
            grid_operators(g, HarmonicIndexSet(hm, 50.0))
        return
    assume(g.R)
    assert hybrid_vs_direct(g, HarmonicIndexSet(hm, 50.0), rng) < 1e-10


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_property_kron_elimination_order(seed):
    rng = np.random.default_rng(seed)
    g = random_network(rng, n_nodes=6)
    Y = assemble_nodal_admittance(g, 150.0)
    all_at_once = kron_reduce(Y, [0, 1, 2])
    step = kron_reduce(Y, [0, 1, 2, 3, 4])  # drop node 5
    step = kron_reduce(step, [0, 1, 2, 4])  # positions shift: drop old node 3
    step = kron_reduce(step, [0, 1, 2])
    scale = np.abs(all_at_once).max()
    assert np.abs(step - all_at_once).max() < 1e-12 * max(1, scale)


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1))
def test_property_cycle_rows_sum_to_zero(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    cyc = list(rng.permutation(n))
    branches = [BranchElement(k, int(cyc[k]), int(cyc[(k + 1) % n]), R=I3) for k in range(n)]
    g = GridModel([Node(k, "following") for k in range(n)], branches)
    A = build_incidence(g)
    # traverse the cycle in branch direction: sum of its block rows vanishes
    assert np.abs(A.reshape(n, 3, -1).sum(axis=0)).max() == 0
