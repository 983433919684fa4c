"""Exception types raised across the package."""


class PtnoiseError(Exception):
    """Base class for every error this package raises on purpose."""


class ZeroVector(PtnoiseError, ValueError):
    """A vector too close to zero to be normalized."""


class UnsupportedOp(PtnoiseError, KeyError):
    """A tape node carries an operation tag outside the supported set."""


class DimMismatch(PtnoiseError, ValueError):
    pass


class TemperatureNonPositive(PtnoiseError, ValueError):
    pass


class DegenerateProbability(PtnoiseError, ValueError):
    """The probability a loss needs to take a log of (or divide by) is ~0."""


class InvalidQ(PtnoiseError, ValueError):
    pass


class InvalidCombination(PtnoiseError, ValueError):
    pass


class NoNoisySamples(PtnoiseError, ValueError):
    pass


class NoCleanSamples(PtnoiseError, ValueError):
    pass


class ConfigError(PtnoiseError, ValueError):
    pass


class UnknownKey(ConfigError):
    def __init__(self, key):
        super().__init__(f"unknown config key: {key!r}")
        self.key = key


class InvalidValue(ConfigError):
    def __init__(self, field, constraint):
        super().__init__(f"invalid value for {field}: must satisfy {constraint}")
        self.field = field
        self.constraint = constraint


class ConfigSyntax(ConfigError):
    def __init__(self, msg, line, col):
        super().__init__(f"config syntax error at line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


class EmptyClass(UserWarning):
    """A pseudo-class received no members; selection continues without it."""
