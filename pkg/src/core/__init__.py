"""Core modules for the ConDA-TTA pipeline"""

from .exceptions import (CondaError, DataError, NumericError, ParameterError, ParseError,
                         SchemaError, ShapeError, StateError)
from .logger import log_info, log_error, log_warning, log_debug

__all__ = [
    'CondaError',
    'DataError',
    'NumericError',
    'ParameterError',
    'ParseError',
    'SchemaError',
    'ShapeError',
    'StateError',
    'log_info',
    'log_error',
    'log_warning',
    'log_debug'
]
