"""Exception hierarchy shared across the package."""


class ScanposeError(Exception):
    """Base class for all scanpose errors."""


class GeometryError(ScanposeError):
    """Base class for geometric/algebraic failures."""


class DegenerateRay(GeometryError):
    """Back-projected ray parallel to the y=0 plane after scanline rotation."""


class DecompositionFailed(GeometryError):
    """No real decomposition of a reduced camera matrix exists."""


class GravitySingular(GeometryError):
    """Gravity direction (anti)parallel to the y-axis; factorization undefined."""


class DegenerateGauge(GeometryError):
    """Canonical frame underdetermined (e.g. coincident first two centers)."""


class LengthMismatch(GeometryError):
    """Pose lists of unequal length."""


class ShapeMismatch(GeometryError):
    """Tensors of different shapes compared."""


class NoIntersection(GeometryError):
    """A line projects parallel to the scanline; no finite intersection."""


class IncompleteVisibility(GeometryError):
    """An observation grid is missing entries (a line unseen by a camera)."""


class RankDeficient(GeometryError):
    """Linear system has an ambiguous nullspace (degenerate data)."""


class ComplexRoots(GeometryError):
    """A decomposition quadratic has negative discriminant; no real solution."""


class PivotZero(GeometryError):
    """A pivot entry required by a closed-form decomposition vanishes."""


class SpanDimensionMismatch(GeometryError):
    """Numerically derived constraint space has unexpected dimension."""


class ConstraintViolation(GeometryError):
    """Input tensor does not satisfy the calibrated internal constraints."""


class GravityMissing(ScanposeError):
    """A gravity-based solver was given observations without gravity."""


class NoRealSolution(ScanposeError):
    """Multi-start decomposition found no tensor-consistent real solution."""


class SingularBlock(GeometryError):
    """Left 2x2 block of a camera matrix is not invertible."""


class PoleDivision(ScanposeError):
    """Balance function evaluated at its pole."""


class InstanceGenerationFailed(ScanposeError):
    """Random instance generation hit a degenerate draw repeatedly."""


class ExhaustedRetries(ScanposeError):
    """Scene sampling exceeded its retry budget."""


class Unnormalizable(GeometryError):
    """Homogeneous vector cannot be dehomogenized (point at infinity)."""


class NotEnoughLines(ScanposeError):
    """Fewer lines than the chosen solver's minimal sample size."""


class AllIterationsFailed(ScanposeError):
    """Every RANSAC iteration errored; no model produced."""


class ParseError(ScanposeError):
    """Observation file is not syntactically valid."""


class SchemaError(ScanposeError):
    """Observation file parses but violates the schema."""


class InconsistentIntrinsics(ScanposeError):
    """Observation file records reference undeclared or conflicting intrinsics."""
