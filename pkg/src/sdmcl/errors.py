"""Exception types raised across the package."""


class SdmclError(Exception):
    """Base class for all package errors."""


class ZeroVector(SdmclError, ValueError):
    pass


class DimensionMismatch(SdmclError, ValueError):
    pass


# optimizer/baseline code talks about shapes rather than dimensions
ShapeMismatch = DimensionMismatch


class IndexOutOfRange(SdmclError, IndexError):
    pass


class NotNormalized(SdmclError, ValueError):
    pass


class StaleTrace(SdmclError, RuntimeError):
    """A forward trace was used after the model's parameters changed."""


class EmptyData(SdmclError, ValueError):
    pass


class IndivisibleClasses(SdmclError, ValueError):
    pass


class FormatError(SdmclError, ValueError):
    """Base for binary file format problems."""


class BadMagic(FormatError):
    pass


class CountMismatch(FormatError):
    pass


class Truncated(FormatError):
    pass


class LabelOutOfRange(FormatError):
    pass


class ConfigError(SdmclError, ValueError):
    pass
