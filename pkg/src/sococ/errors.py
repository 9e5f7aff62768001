"""Exception types shared across the simulator."""


class ConfigurationError(ValueError):
    """A configuration value violates its documented constraints."""


class InternalConsistencyError(RuntimeError):
    """Simulator state broke one of its own invariants (a bug, not bad input)."""
