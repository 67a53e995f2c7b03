"""Exception hierarchy shared across the package."""


class StreambalError(Exception):
    """Base class for all errors raised by streambal."""


class ValidationError(StreambalError):
    """Input data violates a documented invariant (bad probabilities, duplicate ids, ...)."""


class DimensionError(ValidationError):
    """Vectors that must share a length do not."""


class ConfigurationError(StreambalError):
    """A configuration value is missing, malformed, or inconsistent."""


class DataError(StreambalError):
    """External data could not be parsed or refers to unknown units."""


class DegenerateVarianceError(StreambalError):
    """A spatial-correlation statistic is undefined for the given sample."""


class SamplingError(StreambalError):
    """A randomized procedure exhausted its retry budget."""


class LpNumericalError(StreambalError):
    """The simplex basis broke down numerically; distinct from infeasibility."""


class InvariantError(StreambalError):
    """An internal contract between modules was breached; indicates a bug."""
