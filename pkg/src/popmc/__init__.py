"""Transient analysis of Markov population models given as guarded commands."""

from .errors import (CapacityError, DivergenceError, ModelError, ParseError,
                     RateError, RateExceeded)
from .model import (GuardedCommand, Model, enabled, eval_rate, exit_rate,
                    format_model, load_model, parse_model, successor)

__version__ = "0.1.0"
