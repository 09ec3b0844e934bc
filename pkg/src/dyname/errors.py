"""Exception hierarchy shared across the package."""


class DynameError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(DynameError):
    """Invalid configuration value or combination."""


class MalformedRow(DynameError):
    """A CSV row contains a non-numeric or non-finite cell."""


class EmptySeries(DynameError):
    """The ingested file contains no data rows."""


class ConstantChannel(DynameError):
    """A channel has zero variance on the fitting split."""


class OutOfRange(DynameError):
    """A window or buffer request falls outside the series bounds."""


class CausalityError(DynameError):
    """A read touched observations beyond the current stream clock."""


class DegenerateSpectrum(DynameError):
    """All non-DC FFT amplitudes vanish (constant buffer)."""


class NoValidSamples(DynameError):
    """No leak-free period-strided sample exists for a batch request."""


class ZeroVariance(DynameError):
    """Correlation requested against a zero-variance segment."""


class SingularSystem(DynameError):
    """Linear system is singular (reachable only with zero regularization)."""


class NonFiniteInput(DynameError):
    """An input value is NaN or infinite."""


class NonFiniteGradient(DynameError):
    """A gradient became NaN or infinite during an update."""


class InsufficientHistory(DynameError):
    """Not enough past observations for the requested baseline fit."""


class MissingColumn(DynameError):
    """A required column is absent from a step CSV."""
