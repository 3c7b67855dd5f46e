"""Exception types shared across the package."""


class BrambleError(Exception):
    """Base class for all package-specific errors."""


class ConfigurationError(BrambleError):
    """A spec or config value is malformed; the message names the field."""


class NumericError(BrambleError):
    """A nonfinite or otherwise unusable value showed up during estimation."""


class DegenerateLawError(BrambleError):
    """The offspring law has zero step variance (or similar degeneracy)."""


class NonBoundaryReducible(BrambleError):
    """No tilt parameter brings this law into the boundary normalization."""


class UncertifiedLawError(BrambleError):
    """An operation requiring a boundary-certified law got an uncertified one."""


class TableRangeError(BrambleError):
    """A renewal-table lookup fell outside the tabulated grid."""


class TableResolutionError(BrambleError):
    """The ladder-chain depth is too small for the requested grid."""


class UnsupportedFamilyError(BrambleError):
    """The law family lacks a derived size-biased first-generation sampler."""


class ExperimentError(BrambleError):
    """An experiment could not produce usable statistics (e.g. no survivors)."""
