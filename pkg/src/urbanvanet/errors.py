"""Exception types shared across the simulator."""


class InvalidInputError(ValueError):
    """A geometric or numeric argument is outside the operation's domain."""


class ConfigError(ValueError):
    """A scenario or parameter object violates its invariants."""

    def __init__(self, message, field=None):
        self.field = field
        super().__init__(f"{field}: {message}" if field else message)


class TraceParseError(ValueError):
    """A trace row could not be parsed."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class TraceValidationError(ValueError):
    """Parsed trace samples break an ordering or range invariant."""


class OutOfSpanError(LookupError):
    """A position was requested outside a vehicle's trace span."""


class SimulationIntegrityError(RuntimeError):
    """The event engine detected an inconsistent state and stopped the run."""


class NoGatewayAvailable(LookupError):
    """No gateway candidate exists for a non-empty target set."""
