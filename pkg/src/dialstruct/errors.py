"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class NumericError(ArithmeticError):
    """A computation produced or received non-finite values."""


class ParameterError(ValueError):
    """A hyperparameter or argument is outside its valid range."""


class InputError(ValueError):
    """Input data violates a precondition (empty corpus, bad labels, ...)."""


class CapacityError(ValueError):
    """A dialogue exceeds the configured sequence or pair capacity."""


class ConsistencyError(RuntimeError):
    """Internal bookkeeping invariant was violated."""


class CorpusParseError(ValueError):
    """A corpus or structure file does not match the documented schema."""
