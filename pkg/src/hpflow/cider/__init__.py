"""Converter-interfaced resources: LTP blocks, transforms, references, closed loop."""

import numpy as np

from ..ltp import HarmonicSignal
from .blocks import LtpBlock
from .builders import (
    build_cider,
    build_following_cider,
    build_forming_cider,
    cascaded_pi_block,
    filter_block,
)
from .model import (
    CiderModel,
    ClosedLoop,
    CompiledCider,
    Gain,
    OpenLoop,
    assemble_open_loop,
    build_feedback,
    cider_output,
    cider_output_jacobian,
    close_loop,
    closed_loop_gain,
)
from .reference import (
    ConstantReference,
    CustomReference,
    PqReference,
    ReferenceLaw,
    VfReference,
)
from .transforms import (
    IDENTITY,
    TransformSpec,
    clarke_matrix,
    inverse_clarke_matrix,
    inverse_park,
    park,
)


def reference_vf(setpoint, H):
    """dq voltage reference spectrum ``W_kappa`` for a Vf setpoint."""
    setpoint.check(H)
    sig = HarmonicSignal.zeros(H, 2)
    c = sig.coeffs.copy()
    c[H.index(0)] = setpoint(np.zeros(2))
    return HarmonicSignal(H, c)


def reference_pq(W_rho, setpoint):
    """``(W_kappa, dW_kappa/d(v_d, v_q))`` from the h=0 dq components of ``W_rho``."""
    H = W_rho.H
    v = W_rho[0].real
    c = np.zeros((H.size, 2), dtype=complex)
    c[H.index(0)] = setpoint(v)
    return HarmonicSignal(H, c), setpoint.jacobian(v)


__all__ = [
    "IDENTITY",
    "CiderModel",
    "ClosedLoop",
    "CompiledCider",
    "ConstantReference",
    "CustomReference",
    "Gain",
    "LtpBlock",
    "OpenLoop",
    "PqReference",
    "ReferenceLaw",
    "TransformSpec",
    "VfReference",
    "assemble_open_loop",
    "build_cider",
    "build_feedback",
    "build_following_cider",
    "build_forming_cider",
    "cascaded_pi_block",
    "cider_output",
    "cider_output_jacobian",
    "clarke_matrix",
    "close_loop",
    "closed_loop_gain",
    "filter_block",
    "inverse_clarke_matrix",
    "inverse_park",
    "park",
    "reference_pq",
    "reference_vf",
]
