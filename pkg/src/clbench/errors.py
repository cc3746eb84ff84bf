"""Exception hierarchy shared across the harness."""


class ClbenchError(Exception):
    """Base class for all harness errors."""


class ConfigError(ClbenchError):
    """Invalid configuration: bad key, bad value, or incompatible combination."""


class DataFormatError(ClbenchError):
    """Malformed input file (wrong magic, truncated payload, ...)."""


class NumericsError(ClbenchError):
    """Non-finite values where finite ones are required."""


class StateError(ClbenchError):
    """Operation called in a state that cannot serve it (e.g. empty buffer)."""


class ProtocolError(ClbenchError):
    """Violation of a run protocol contract (e.g. overwriting a recorded cell)."""
