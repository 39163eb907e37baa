"""Exception hierarchy shared by all modules."""


class TensorUCBError(Exception):
    pass


class ConfigurationError(TensorUCBError, ValueError):
    """Invalid sizes, variances, budgets or other settings."""


class ShapeError(TensorUCBError, ValueError):
    """A context or feature vector does not match the declared dimensions."""


class ContractError(TensorUCBError, ValueError):
    """A precondition on an argument (index range, node id, ...) was violated."""


class NumericalError(TensorUCBError, ArithmeticError):
    """Non-finite values entered or were produced by an update."""


class ConsistencyError(TensorUCBError, RuntimeError):
    """Internal state lost an invariant, e.g. a covariance stopped being positive definite."""


class DataError(TensorUCBError, ValueError):
    """Required data (e.g. node features) is missing."""


class ParseError(TensorUCBError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class GuardError(TensorUCBError, ValueError):
    """An enumeration-based oracle was asked to handle a problem that is too large."""
