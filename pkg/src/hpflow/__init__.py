"""Harmonic power flow for polyphase grids with converter-interfaced resources."""

from .cider import (
    CiderModel,
    LtpBlock,
    PqReference,
    TransformSpec,
    VfReference,
    build_following_cider,
    build_forming_cider,
)
from .exceptions import HpfError
from .grid import (
    BranchElement,
    GridModel,
    Node,
    ShuntElement,
    assemble_nodal_admittance,
    build_incidence,
    kron_reduce,
    partition_hybrid,
    stack_harmonic_hybrid,
    validate_grid,
)
from .ltp import HarmonicIndexSet, HarmonicSignal, PeriodicMatrix, ToeplitzOperator, lift
from .solver import HarmonicPowerFlow, HpfProblem, HpfSolution, recover_outputs, solve_hpf
from .sources import NortonEquivalent, TheveninEquivalent

__version__ = "0.1.0"

__all__ = [
    "BranchElement", "CiderModel", "GridModel", "HarmonicIndexSet", "HarmonicPowerFlow",
    "HarmonicSignal", "HpfError", "HpfProblem", "HpfSolution", "LtpBlock", "Node",
    "NortonEquivalent", "PeriodicMatrix", "PqReference", "ShuntElement", "TheveninEquivalent",
    "ToeplitzOperator", "TransformSpec", "VfReference", "assemble_nodal_admittance",
    "build_following_cider", "build_forming_cider", "build_incidence", "kron_reduce", "lift",
    "partition_hybrid", "recover_outputs", "solve_hpf", "stack_harmonic_hybrid", "validate_grid",
]
