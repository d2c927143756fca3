"""Exception types shared across the package.

Every contract violation raises one of these instead of a bare
ValueError so callers can react to specific failure modes.
"""


class HclrError(Exception):
    """Base class for all package errors."""


# --- tensor engine ---

class NotScalar(HclrError):
    """backward() was called on a tensor with more than one element."""


class ZeroNormRow(HclrError):
    """A vector or matrix row with near-zero norm cannot be normalized."""


class ShapeMismatch(HclrError):
    """Operand shapes are incompatible with the requested operation."""


# --- data generation and ingestion ---

class ConfigError(HclrError):
    """A configuration value violates its documented constraints."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


class PlacementError(HclrError):
    """Glyph placement could not satisfy the overlap constraints."""


class BadMagic(HclrError):
    """IDX file starts with an unexpected magic number."""


class TruncatedFile(HclrError):
    """IDX file is shorter than its header declares."""


class DimensionMismatch(HclrError):
    """IDX header declares invalid or inconsistent dimensions."""


class EmptyDataset(HclrError):
    """An operation that needs samples received an empty dataset."""


# --- losses and masking ---

class EmptyMask(HclrError):
    """A hard mask selects zero features."""


class DegenerateBatch(HclrError):
    """No anchor in the batch has a non-empty positive set."""


class LengthMismatch(HclrError):
    """Paired vectors have different lengths."""


class InsufficientPoints(HclrError):
    """Fewer feature points than mixture components."""


# --- training and evaluation ---

class DivergenceError(HclrError):
    """Training produced a non-finite loss."""

    def __init__(self, epoch: int, step: int, value: float):
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")
        self.epoch = epoch
        self.step = step


class SingleClass(HclrError):
    """Label column contains only one class."""


class DegenerateClusters(HclrError):
    """Clustering metric requires >= 2 classes with >= 2 members each."""
