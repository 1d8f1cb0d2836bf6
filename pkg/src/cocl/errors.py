"""Exception hierarchy shared across the package."""


class CoclError(Exception):
    """Base class for every error raised by cocl."""


class DimensionError(CoclError, ValueError):
    """Operand shapes do not line up."""


class DomainError(CoclError, ValueError):
    """Argument outside an operation's mathematical domain (e.g. log of 0)."""


class DegenerateInputError(CoclError, ValueError):
    """Input too close to a singular point, such as a zero-norm row."""


class ContractError(CoclError, RuntimeError):
    """A caller violated a documented precondition."""


class ConfigError(CoclError, ValueError):
    """Invalid or inconsistent configuration."""


class FormatError(CoclError, ValueError):
    """Malformed binary input. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset=None, path=None):
        super().__init__(message)
        self.offset = offset
        self.path = path


class DivergenceError(CoclError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, task=None, epoch=None):
        super().__init__(message)
        self.task = task
        self.epoch = epoch
