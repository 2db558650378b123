"""Exception types shared across the package."""


class GPTreeError(Exception):
    """Base class for every error raised by this library."""


class ConfigError(GPTreeError):
    """A run configuration failed validation."""


class FactorizationFailure(GPTreeError):
    """Cholesky failed at every jitter level.

    Usually signals an ill-conditioned kernel matrix, e.g. many duplicate
    inputs or a wildly inappropriate lengthscale.
    """


class ZeroRow(GPTreeError):
    """An input row has (near-)zero norm and cannot be L2-normalized."""


class DimensionMismatch(GPTreeError):
    """Two matrices disagree on the feature dimension."""


class SingleClassNode(GPTreeError):
    """A binary node received labels of only one class (malformed split)."""


class EmptyClass(GPTreeError):
    """A class has no samples where at least one is required."""


class ClassCollision(GPTreeError):
    """A novel session re-used a class id seen in an earlier session."""


class UnknownClass(GPTreeError):
    """Data contains a class id the tree does not cover."""


class PDViolation(GPTreeError):
    """A variational precision matrix lost positive-definiteness."""


class FormatError(GPTreeError):
    """A data or artifact file is malformed."""


class LabelRangeError(GPTreeError):
    """A label lies outside the declared class range."""


class VersionMismatch(GPTreeError):
    """An artifact was written with an unsupported format version."""


class InsufficientClasses(GPTreeError):
    """The dataset has too few classes for the requested session plan."""


class InsufficientShots(GPTreeError):
    """A novel class has fewer training samples than the requested shots."""
