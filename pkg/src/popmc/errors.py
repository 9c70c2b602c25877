"""Exception hierarchy shared by the parser, the state store and the engines."""

from __future__ import annotations


class ModelError(Exception):
    """A model is malformed or evaluates to something meaningless."""


class ParseError(ModelError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


class RateError(ModelError):
    """A rate expression produced a negative or non-finite value."""

    def __init__(self, message: str, state=None, command=None):
        super().__init__(message)
        self.state = state
        self.command = command


class RateExceeded(Exception):
    """An explored state leaves faster than the uniformization rate allows."""

    def __init__(self, state, exit_rate: float, rate: float):
        super().__init__(
            f"state {tuple(state)} has exit rate {exit_rate!r} > uniformization "
            f"rate {rate!r}; restart with a larger --lambda"
        )
        self.state = tuple(state)
        self.exit_rate = exit_rate
        self.rate = rate


class CapacityError(Exception):
    pass


class DivergenceError(Exception):
    """Numerical integration became unstable or produced non-finite values."""

    def __init__(self, message: str, last=None):
        super().__init__(message)
        self.last = last
