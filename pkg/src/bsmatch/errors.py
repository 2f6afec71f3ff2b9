"""Exception hierarchy shared across the package."""


class BSMError(Exception):
    """Base class for all package errors."""


class ParameterDomainError(BSMError, ValueError):
    """A parameter lies outside its admissible domain."""


class NumericalDomainError(BSMError, ArithmeticError):
    """A matrix that must be PSD / PD is not (Cholesky or eigen failure)."""


class LookupKeyError(BSMError, KeyError):
    """A character is not on the speller grid."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class ValidationError(BSMError, ValueError):
    """Input data violates a structural rule (RCP design, dimensions, schema)."""

    def __init__(self, message, rule=None, row=None):
        super().__init__(message)
        self.rule = rule
        self.row = row

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self), "rule": self.rule, "row": self.row}


class ContractError(BSMError, ValueError):
    """An operation was called outside its contract (e.g. empty trace)."""


class DiagnosticError(BSMError, ValueError):
    """A convergence diagnostic is undefined for the given chains."""


class SamplerError(BSMError, RuntimeError):
    """Numerical failure inside the sampler, carrying iteration and block."""

    def __init__(self, message, iteration=None, block=None):
        super().__init__(f"{message} (iteration={iteration}, block={block})")
        self.iteration = iteration
        self.block = block
