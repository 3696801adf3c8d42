"""Exception types shared across the package."""


class ToothfieldError(Exception):
    """Base class for all data/processing errors raised by this package."""


class ParseError(ToothfieldError):
    """Input file is malformed or uses an unsupported dialect."""


class TopologyError(ToothfieldError):
    """Mesh connectivity is invalid (bad indices, degenerate face declarations)."""


class DegenerateGeometry(ToothfieldError):
    """Geometry carries no usable extent (zero area, coincident points)."""


class InvalidCount(ToothfieldError):
    """A requested count is outside the valid range for the input."""


class SourceOffSurface(ToothfieldError):
    """A geodesic source lies farther from the surface than the snap tolerance."""


class FrameMismatch(ToothfieldError):
    """Operands live in different coordinate frames (model vs normalized)."""


class EmptyField(ToothfieldError):
    """A field column is identically zero; nothing to decode."""


class DegenerateFit(ToothfieldError):
    """Line fit is underdetermined (all points coincident)."""


class ShapeMismatch(ToothfieldError):
    """Array shapes do not satisfy the operation contract."""


class EmptyPrediction(ToothfieldError):
    """No predicted landmarks supplied while ground truth is non-empty."""


class EmptyInput(ToothfieldError):
    """An aggregate was requested over an empty collection."""


class InvalidSpec(ToothfieldError):
    """Synthetic tooth specification violates its own invariants."""
