"""Exception types shared across the toolkit."""


class QdetError(Exception):
    """Base class for toolkit errors."""


class NonConvergenceError(QdetError):
    """A numerical iteration failed to converge within its budget."""


class CalibrationError(NonConvergenceError):
    """Threshold calibration could not bracket or reach the target ARL."""


class TraceFormatError(QdetError, ValueError):
    """A trace file violates the CSV contract."""


class MalformedRowError(TraceFormatError):
    """A trace row could not be parsed into finite numbers."""


class NonMonotoneTimeError(TraceFormatError):
    """Trace timestamps are not strictly increasing."""


class EmptyTraceError(TraceFormatError):
    """Trace file contains no samples."""


class NonUniformSpacingError(TraceFormatError):
    """Trace timestamps are not uniformly spaced."""
