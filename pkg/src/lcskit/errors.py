"""Exception hierarchy shared across the package."""


class LcsKitError(Exception):
    """Base class for all lcskit errors."""


class FormatError(LcsKitError):
    """A file does not conform to its declared binary/JSON layout."""


class ValidationError(LcsKitError):
    """Input data violates a structural invariant (e.g. non-monotone times)."""


class DataError(LcsKitError):
    """Input data contains invalid values (NaN/Inf samples)."""


class OutOfRangeError(LcsKitError):
    """Query time outside the field's sampled time interval."""


class OutOfDomainError(LcsKitError):
    """Query position outside a non-periodic domain."""


class EscapeError(LcsKitError):
    """A trajectory left a non-periodic domain during integration."""

    def __init__(self, message, exit_time=None, indices=None):
        super().__init__(message)
        self.exit_time = exit_time
        self.indices = indices


class DivergenceError(LcsKitError):
    """Integration exceeded max_steps or the step size underflowed."""


class DegenerateRegionError(LcsKitError):
    """Eigenvector interpolation requested in a degenerate/invalid cell."""


class EmptyLineError(LcsKitError):
    """Line tracing stopped before producing a single step."""


class EmptyFieldError(LcsKitError):
    """No usable seeds remain (e.g. the whole tensor field is degenerate)."""


class PartialDataError(LcsKitError):
    """An operation crossed invalid nodes; carries the offending indices."""

    def __init__(self, message, gaps=None):
        super().__init__(message)
        self.gaps = list(gaps) if gaps is not None else []


class UnavailableError(LcsKitError):
    """Requested per-seed data is unavailable (failed seed status)."""
