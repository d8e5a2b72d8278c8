"""Exception hierarchy for the simulator."""


class MemSimError(Exception):
    """Base class for every error raised by memsim."""


class ConfigError(MemSimError):
    pass


class PortMismatch(ConfigError):
    pass


class NonPowerOfTwo(ConfigError):
    pass


class GroupIndivisible(ConfigError):
    pass


class ZeroField(ConfigError):
    pass


class GeometryError(ConfigError):
    pass


class ParseError(ConfigError):
    """Raised for malformed config files; carries the key and line when known."""

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if key is not None:
            where.append(f"key {key!r}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class MissingField(ParseError):
    pass


class PolicyMisuse(MemSimError):
    pass


class BankMismatch(MemSimError):
    pass


class OrphanFill(MemSimError):
    pass


class ChannelMismatch(MemSimError):
    pass


class InvalidSpec(MemSimError):
    pass


class SimulationError(MemSimError):
    """Runtime failure; ``stats`` holds the partial statistics when available."""

    def __init__(self, message, stats=None):
        super().__init__(message)
        self.stats = stats


class CycleCapExceeded(SimulationError):
    pass


class DeadlockDetected(SimulationError):
    pass
