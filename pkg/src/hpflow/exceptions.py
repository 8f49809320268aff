"""Exception hierarchy.

Every error raised on purpose by the package derives from :class:`HpfError`,
so callers (and the CLI) can separate model/input problems from bugs.
"""


class HpfError(Exception):
    """Base class for all errors raised by hpflow."""


# grid ------------------------------------------------------------------------
class ModelError(HpfError):
    """Structural problem in a grid or problem definition."""


class ParameterError(HpfError):
    """Electrical parameter unusable at a given frequency."""

    def __init__(self, message, element=None, frequency=None):
        super().__init__(message)
        self.element = element
        self.frequency = frequency


class ReductionError(HpfError):
    """Kron reduction failed (singular eliminated block)."""


class PartitionError(HpfError):
    """Hybrid partition failed (singular Y_SS)."""

    def __init__(self, message, harmonic=None):
        super().__init__(message)
        self.harmonic = harmonic


class ValidationError(HpfError):
    """A grid failed validation; carries the full report."""

    def __init__(self, report):
        super().__init__(str(report))
        self.report = report


# harmonic-domain algebra -----------------------------------------------------
class TruncationError(HpfError):
    """A Fourier coefficient lies outside the harmonic index set."""


class DimensionError(HpfError, ValueError):
    """Operand dimensions do not agree."""


class AliasingError(HpfError):
    """Too few samples to resolve the requested harmonics."""


# resources -------------------------------------------------------------------
class AlgebraicLoopError(HpfError):
    """(I - T D) or (I - D T) is (nearly) singular."""


class GainExistenceError(HpfError):
    """(j Omega - A~) is (nearly) singular, i.e. a resonance on a harmonic."""

    def __init__(self, message, harmonic=None, condition=None):
        super().__init__(message)
        self.harmonic = harmonic
        self.condition = condition


class ReferenceSingularityError(HpfError):
    """Reference calculation evaluated where it is not differentiable."""


class UnsupportedSetpointError(HpfError):
    """Setpoint cannot be represented (e.g. off-nominal frequency)."""


# solver ----------------------------------------------------------------------
class ConvergenceError(HpfError):
    """Newton-Raphson did not converge within max_iter."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class SingularJacobianError(HpfError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class ResourceEvaluationError(HpfError):
    """Wraps a resource failure with the node it belongs to."""

    def __init__(self, node, cause):
        super().__init__(f"resource at node {node!r}: {cause}")
        self.node = node
        self.cause = cause


# oracle ----------------------------------------------------------------------
class OracleInstabilityError(HpfError):
    pass


class OracleTimeoutError(HpfError):
    pass


# io --------------------------------------------------------------------------
class StudyError(HpfError):
    """Input file problem; ``path`` is a JSON pointer when known."""

    def __init__(self, message, path=None):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path
