"""Exception hierarchy shared by every subpackage."""


class IQShrinkError(Exception):
    """Base class for all library errors."""


class DimensionError(IQShrinkError, ValueError):
    """Operand extents are incompatible."""


class StructuralError(IQShrinkError, ValueError):
    """A tensor does not have the layout a block requires."""


class ContractError(IQShrinkError, ValueError):
    """A documented precondition was violated by the caller."""


class NonFiniteError(IQShrinkError, FloatingPointError):
    """NaN or Inf appeared where only finite values are allowed."""


class ConfigError(IQShrinkError, ValueError):
    """Invalid or unknown configuration value."""


class StratificationError(IQShrinkError, ValueError):
    """A stratum is too small for the requested split."""


class EnumerationError(IQShrinkError, ValueError):
    """Unsupported member of a fixed enumeration (e.g. modulation scheme)."""


class FormatError(IQShrinkError, ValueError):
    """Base class for binary container decoding failures."""


class BadMagicError(FormatError):
    pass


class VersionError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class RecordCountError(FormatError):
    pass
