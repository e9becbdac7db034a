"""Typed exceptions shared by all modules."""


class BoundaryYamabeError(Exception):
    """Base class for all domain errors raised by this package."""


class UnsupportedDimension(BoundaryYamabeError):
    pass


class InvalidResolution(BoundaryYamabeError):
    pass


class IoError(BoundaryYamabeError):
    pass


class FormatError(BoundaryYamabeError):
    """Malformed mesh/field file; message carries field/line diagnostics."""


class DegenerateCell(BoundaryYamabeError):
    pass


class SolverDiverged(BoundaryYamabeError):
    pass


class MissingFarField(BoundaryYamabeError):
    pass


class NonpositiveConformalFactor(BoundaryYamabeError):
    pass


class PositivityViolated(BoundaryYamabeError):
    pass


class ZeroBoundaryTrace(BoundaryYamabeError):
    pass


class QuadratureNotConverged(BoundaryYamabeError):
    pass


class PreconditionRho(BoundaryYamabeError):
    pass


class ChartTooSmall(BoundaryYamabeError):
    pass


class PoleNotOnBoundary(BoundaryYamabeError):
    pass


class FitDiverged(BoundaryYamabeError):
    pass


class InvalidDecayOrder(BoundaryYamabeError):
    pass
