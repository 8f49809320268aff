"""Standard hardware and controller blocks in per-unit.

Filter stages are series R-L branches, each optionally followed by a shunt C
to ground. With ``u`` the actuator voltage::

    L_k di_k/dt = v_{k-1} - R_k i_k - v_k        (v_0 = u)
    C_k dv_k/dt = i_k - i_{k+1}                  (i_{n+1} = grid current)

A last stage with a capacitor makes the resource grid-forming (output: the
capacitor voltage, disturbance: injected current); without one it is
grid-following (output: the last inductor current, disturbance: grid voltage).
Every state quantity is an output block, innermost first, so the grid-side
output is the last block.

Controllers are cascaded PI loops listed outermost first. Stage ``j``
measures the ``j``-th output block counted back from the grid side.
"""

import numpy as np

from ..exceptions import ModelError
from .blocks import LtpBlock
from .model import CiderModel
from .reference import PqReference, VfReference
from .transforms import TransformSpec


def _diag3(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x * np.eye(3)
    if x.shape == (3,):
        return np.diag(x)
    if x.shape == (3, 3):
        return x
    raise ModelError(f"filter parameter must be scalar, 3-vector or 3x3, got shape {x.shape}")


def _gain2(g, what):
    g = np.asarray(g, dtype=float).reshape(-1)
    if g.size == 1:
        return np.eye(2) * g[0]
    if g.size == 2:
        return np.diag(g)
    raise ModelError(f"{what} must be a scalar or a (d, q) pair")


def filter_block(stages):
    """``LtpBlock`` of a cascaded filter. Returns ``(block, mode)``."""
    if not stages:
        raise ModelError("filter needs at least one stage")
    # state layout: for each stage, i_k then (optionally) v_k
    slots = []
    for k, st in enumerate(stages):
        if st.get("L") is None:
            raise ModelError(f"filter stage {k} has no inductance")
        has_c = st.get("C") not in (None, 0, 0.0)
        if not has_c and k < len(stages) - 1:
            raise ModelError(f"filter stage {k} lacks a capacitor but is not the last stage")
        slots.append(("i", k))
        if has_c:
            slots.append(("v", k))
    mode = "forming" if slots[-1][0] == "v" else "following"
    n = 3 * len(slots)
    pos = {s: 3 * j for j, s in enumerate(slots)}
    A = np.zeros((n, n))
    B = np.zeros((n, 3))
    E = np.zeros((n, 3))

    def put(M, row, col, val):
        M[row : row + 3, col : col + 3] += val

    for k, st in enumerate(stages):
        Linv = np.linalg.inv(_diag3(st["L"]))
        R = _diag3(st.get("R", 0.0))
        r = pos[("i", k)]
        put(A, r, r, -Linv @ R)
        if k == 0:
            put(B, r, 0, Linv)
        else:
            put(A, r, pos[("v", k - 1)], Linv)
        if ("v", k) in pos:
            put(A, r, pos[("v", k)], -Linv)
            c = pos[("v", k)]
            Cinv = np.linalg.inv(_diag3(st["C"]))
            put(A, c, r, Cinv)
            if k + 1 < len(stages):
                put(A, c, pos[("i", k + 1)], -Cinv)
            else:
                put(E, c, 0, -Cinv)  # grid current drawn from the last capacitor
        else:
            put(E, r, 0, -Linv)  # grid voltage behind the last inductor
    C = np.eye(n)
    D = np.zeros((n, 3))
    F = np.zeros((n, 3))
    return LtpBlock(A, B, C, D, E, F), mode


def cascaded_pi_block(stages):
    """Cascaded dq PI controller, outermost stage first.

    Inputs are the measured dq quantities stacked in stage order, the
    disturbance is the outermost dq reference and the output is the actuator
    dq voltage.
    """
    if not stages:
        raise ModelError("controller needs at least one stage")
    nc = len(stages)
    nx, nu = 2 * nc, 2 * nc
    A = np.zeros((nx, nx))
    B = np.zeros((nx, nu))
    E = np.zeros((nx, 2))
    # running reference ref_j = Cx x + Du u + Fw w
    Cx, Du, Fw = np.zeros((2, nx)), np.zeros((2, nu)), np.eye(2)
    for j, st in enumerate(stages):
        kp = _gain2(st.get("kp", 0.0), f"kp of stage {j}")
        ki = _gain2(st.get("ki", 0.0), f"ki of stage {j}")
        sx, su = slice(2 * j, 2 * j + 2), slice(2 * j, 2 * j + 2)
        # error e_j = ref_j - u_j
        eCx, eDu, eFw = Cx.copy(), Du.copy(), Fw.copy()
        eDu[:, su] -= np.eye(2)
        A[sx] = ki @ eCx
        B[sx] = ki @ eDu
        E[sx] = ki @ eFw
        Cx, Du, Fw = kp @ eCx, kp @ eDu, kp @ eFw
        Cx[:, sx] += np.eye(2)
    return LtpBlock(A, B, Cx, Du, E, Fw)


def build_cider(filter_stages, controller_stages, reference, node=None, transform=None, name=""):
    pi, mode = filter_block(filter_stages)
    n_blocks = pi.n_outputs // 3
    nc = len(controller_stages)
    if nc > n_blocks:
        raise ModelError(f"{nc} controller stages but only {n_blocks} measurable quantities")
    kappa = cascaded_pi_block(controller_stages)
    measured = tuple(n_blocks - 1 - j for j in range(nc))
    return CiderModel(
        mode=mode,
        pi=pi,
        kappa=kappa,
        reference=reference,
        control_transform=transform or TransformSpec("park"),
        measured=measured,
        node=node,
        name=name,
    )


def build_following_cider(L, R, kp, ki, P, Q, node=None, theta0=0.0, name=""):
    """L-filter with a dq current loop and PQ reference."""
    return build_cider(
        [{"L": L, "R": R}],
        [{"kp": kp, "ki": ki}],
        PqReference(P, Q),
        node=node,
        transform=TransformSpec("park", theta0),
        name=name,
    )


def build_forming_cider(L, R, C, kp_v, ki_v, kp_i, ki_i, V=1.0, f=50.0, node=None, theta0=0.0, name=""):
    """LC-filter with outer voltage and inner current loops and a Vf reference."""
    return build_cider(
        [{"L": L, "R": R, "C": C}],
        [{"kp": kp_v, "ki": ki_v}, {"kp": kp_i, "ki": ki_i}],
        VfReference(V, f),
        node=node,
        transform=TransformSpec("park", theta0),
        name=name,
    )
