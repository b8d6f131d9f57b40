"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Matrix or vector shapes are inconsistent with the operation."""


class DomainError(ValueError):
    """Input values violate the operation's numeric preconditions."""


class SynthesisError(RuntimeError):
    """Controller synthesis failed (no stabilizing solution exists)."""


class ConditioningError(RuntimeError):
    """A computation succeeded structurally but failed a conditioning check."""


class IntegrationFault(RuntimeError):
    """Numerical integration produced a non-finite state."""


class ProtocolFault(RuntimeError):
    """The external-policy bridge violated the message protocol."""


class ConfigError(ValueError):
    """An experiment configuration document is malformed."""
