"""Desk-scale systems shared by the tests (all per-unit, f1 = 50 Hz)."""

import numpy as np

from hpflow.cider import (
    ConstantReference,
    TransformSpec,
    VfReference,
    build_cider,
    build_following_cider,
    build_forming_cider,
)
from hpflow.grid import BranchElement, GridModel, Node, ShuntElement
from hpflow.ltp import HarmonicIndexSet, HarmonicSignal
from hpflow.solver import HpfProblem
from hpflow.sources import NortonEquivalent, TheveninEquivalent, diagonal_block_matrix

F1 = 50.0
W1 = 2 * np.pi * F1
POS = np.exp(1j * np.array([0.0, -2 * np.pi / 3, 2 * np.pi / 3]))

# filter / controller parameters (p.u., time in s)
L_F = 3.18e-4
R_F = 0.01
C_F = 3.18e-4
FORMING_GAINS = dict(kp_v=0.5, ki_v=50.0, kp_i=1.0, ki_i=100.0)
FOLLOWING_ISO = dict(kp=1.0, ki=100.0)
FOLLOWING_ANISO = dict(kp=[1.0, 0.5], ki=[100.0, 40.0])


def line_inductance(x=0.1, mutual=1 / 3, asym=0.5):
    """Untransposed-line inductance: self ``x``, mutuals ``x*mutual`` (a-b ``x*asym``)."""
    L = np.full((3, 3), x * mutual / W1)
    np.fill_diagonal(L, x / W1)
    L[0, 1] = L[1, 0] = x * asym / W1
    return L


def line(bid, a, b, r=0.05, x=0.1, **kw):
    return BranchElement(bid, a, b, R=r * np.eye(3), L=line_inductance(x, **kw))


def node_shunt(sid, node, g=0.05, c=1.59e-4):
    return ShuntElement(sid, node, G=g * np.eye(3), C=c * np.eye(3))


def forming(node=1, V=1.0, **kw):
    g = dict(FORMING_GAINS, **kw)
    return build_forming_cider(L_F, R_F, C_F, g["kp_v"], g["ki_v"], g["kp_i"], g["ki_i"], V=V, f=F1, node=node)


def following(node, P=0.5, Q=0.1, aniso=True, theta0=0.0):
    g = FOLLOWING_ANISO if aniso else FOLLOWING_ISO
    return build_following_cider(L_F, R_F, g["kp"], g["ki"], P=P, Q=Q, node=node, theta0=theta0)


def following_constant(node, i_dq=(0.3, -0.05), transform="clarke"):
    return build_cider(
        [{"L": L_F, "R": R_F}], [FOLLOWING_ISO], ConstantReference(i_dq), node=node,
        transform=TransformSpec(transform),
    )


def forming_clarke(node=1, V=1.0):
    return build_cider(
        [{"L": L_F, "R": R_F, "C": C_F}],
        [{"kp": FORMING_GAINS["kp_v"], "ki": FORMING_GAINS["ki_v"]},
         {"kp": FORMING_GAINS["kp_i"], "ki": FORMING_GAINS["ki_i"]}],
        VfReference(V, F1), node=node, transform=TransformSpec("clarke"),
    )


# ---------------------------------------------------------------------------
def two_bus_grid():
    return GridModel(
        [Node(1, "forming"), Node(2, "following")],
        [line("l12", 1, 2)],
        [node_shunt("c2", 2)],
        f1=F1,
    )


def two_bus(h_max=10, aniso=True, P=0.5, Q=0.1):
    H = HarmonicIndexSet(h_max, F1)
    return HpfProblem(two_bus_grid(), [forming(1), following(2, P, Q, aniso)], H)


def norton_harmonic_source(H, node, i5=0.02, i7=0.014, g=0.1, b=0.05):
    """Load-like Norton source with 5th (negative sequence) and 7th (positive) injections."""
    values = {h: a * _seq(h) for h, a in ((5, i5), (7, i7)) if h <= H.h_max}
    I = HarmonicSignal.from_dict(H, 3, values)
    Y = diagonal_block_matrix(H, lambda h: (g - 1j * b / h if h else g) * np.eye(3))
    return NortonEquivalent(I, Y, node=node, H=H)


def _seq(h):
    # balanced set of order h: phase k shifted by -h * 120 deg
    return np.exp(-1j * h * np.array([0.0, 2 * np.pi / 3, 4 * np.pi / 3])) / 2


def four_bus_grid():
    return GridModel(
        [Node(1, "forming"), Node(2, "following"), Node(3, "following"), Node(4, "following")],
        [line("l12", 1, 2), line("l23", 2, 3, r=0.04, x=0.08), line("l24", 2, 4, r=0.06, x=0.09, asym=0.4)],
        [node_shunt("c2", 2), node_shunt("c3", 3), node_shunt("c4", 4)],
        f1=F1,
    )


def four_bus(h_max=10):
    H = HarmonicIndexSet(h_max, F1)
    res = [
        forming(1),
        following(2, P=0.3, Q=0.05),
        following(3, P=0.2, Q=-0.05, aniso=False),
        norton_harmonic_source(H, 4),
    ]
    return HpfProblem(four_bus_grid(), res, H)


def thevenin_fundamental(H, node, v=0.98, z=(0.02, 0.1)):
    V = HarmonicSignal.from_dict(H, 3, {1: 0.5 * v * POS})
    Z = diagonal_block_matrix(H, lambda h: (z[0] + 1j * z[1] * h) * np.eye(3))
    return TheveninEquivalent(V, Z, node=node, H=H)


def linear_case(h_max=10, lti=True):
    """Forming Vf, a constant-reference follower and a Thevenin source: an affine problem."""
    H = HarmonicIndexSet(h_max, F1)
    grid = GridModel(
        [Node(1, "forming"), Node(2, "following"), Node(3, "following")],
        [line("l12", 1, 2), line("l13", 1, 3, r=0.03, x=0.07)],
        [node_shunt("c2", 2), node_shunt("c3", 3)],
        f1=F1,
    )
    if lti:
        res = [forming_clarke(1), following_constant(2), thevenin_fundamental(H, 3)]
    else:
        res = [forming(1), following_constant(2, transform="park"), thevenin_fundamental(H, 3)]
    return HpfProblem(grid, res, H)


def chain_grid(n_nodes=20, seed=0):
    """Feeder of ``n_nodes``: forming at the head, alternating following and zero nodes."""
    rng = np.random.default_rng(seed)
    nodes = [Node(0, "forming")]
    for k in range(1, n_nodes):
        nodes.append(Node(k, "following" if k % 2 else "zero"))
    branches = []
    for k in range(1, n_nodes):
        parent = k - 1 if k < 3 else int(rng.integers(max(0, k - 3), k))
        branches.append(line(f"l{k}", parent, k, r=0.01 + 0.01 * rng.random(), x=0.02 + 0.02 * rng.random()))
    shunts = [node_shunt(f"c{k}", k) for k in range(1, n_nodes) if k % 2]
    return GridModel(nodes, branches, shunts, f1=F1)


def chain_problem(n_nodes=20, h_max=25, seed=0):
    grid = chain_grid(n_nodes, seed)
    H = HarmonicIndexSet(h_max, F1)
    res = [forming(0)]
    for k in grid.R:
        res.append(following(k, P=0.02, Q=0.005, aniso=bool(k % 4 == 1)))
    return HpfProblem(grid, res, H)


# ---------------------------------------------------------------------------
def random_compound(rng, scale=1.0, strict=True):
    """Symmetric matrix with positive definite real part."""
    M = rng.normal(size=(3, 3))
    R = M @ M.T * 0.5 + (0.2 if strict else 0.0) * np.eye(3)
    Mx = rng.normal(size=(3, 3))
    X = Mx @ Mx.T * 0.5 + 0.1 * np.eye(3)
    return scale * R, scale * X


def random_network(rng, n_nodes=None, n_zero=0, extra_edges=None):
    """Random connected RL network with RC shunts and a random S/R/zero split."""
    n = int(n_nodes or rng.integers(2, 7))
    order = rng.permutation(n)
    edges = [(int(order[k]), int(order[rng.integers(0, k)])) for k in range(1, n)]
    n_extra = int(rng.integers(0, 3)) if extra_edges is None else extra_edges
    for _ in range(n_extra):
        a, b = (int(v) for v in rng.choice(n, 2, replace=False))
        edges.append((a, b))
    n_zero = min(n_zero, n - 1)
    kinds = ["forming"] + ["zero"] * n_zero + ["forming" if rng.random() < 0.3 else "following" for _ in range(n - 1 - n_zero)]
    kinds = [kinds[0]] + list(rng.permutation(kinds[1:]))
    nodes = [Node(k, kinds[k]) for k in range(n)]
    branches = []
    for j, (a, b) in enumerate(edges):
        R, X = random_compound(rng)
        branches.append(BranchElement(f"b{j}", a, b, R=R, L=X / W1))
    shunts = []
    for k in range(n):
        if rng.random() < 0.5:
            G, B = random_compound(rng, 0.1, strict=False)
            shunts.append(ShuntElement(f"t{k}", k, G=G, C=B / W1))
    return GridModel(nodes, branches, shunts, f1=F1)
