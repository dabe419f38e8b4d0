"""Exception hierarchy shared by every module."""


class GraphICLError(Exception):
    """Base class for all library errors."""


class DimensionError(GraphICLError, ValueError):
    pass


class NumericError(GraphICLError, ArithmeticError):
    pass


class StateError(GraphICLError, RuntimeError):
    pass


class ConfigError(GraphICLError, ValueError):
    pass


class InputError(GraphICLError, ValueError):
    pass


class ValidationError(GraphICLError, ValueError):
    pass


class EpisodeError(GraphICLError, ValueError):
    pass


class TrainingError(GraphICLError, RuntimeError):
    pass


class ParseError(GraphICLError, ValueError):
    """Malformed container file; ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset
