"""Exception hierarchy shared by every stage of the pipeline."""


class GotError(Exception):
    """Base class for all errors raised by this package."""

    stage = None

    def with_stage(self, stage):
        self.stage = stage
        return self

    def __str__(self):
        msg = super().__str__()
        if self.stage:
            return f"[{self.stage}] {msg}"
        return msg


class ConfigError(GotError, ValueError):
    """Inconsistent or malformed problem configuration."""


class DataError(GotError, ValueError):
    """Dataset missing, malformed, or inconsistent with the configuration."""


class NumericError(GotError, ArithmeticError):
    """A numerical evaluation produced a non-finite or unusable value."""


class UnsupportedRestrictionError(GotError):
    """The requested restriction cannot be encoded with the given inputs."""


class SimplexError(GotError):
    """The LP solver hit numerical trouble it could not recover from."""


class InfeasibleError(GotError):
    """An LP has no feasible point."""
