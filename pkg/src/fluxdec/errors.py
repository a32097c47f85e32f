"""Exception hierarchy.  ``exit_code`` is what the CLI returns for each family."""
from __future__ import annotations


class FluxdecError(Exception):
    exit_code = 1
    code = "error"

    def __init__(self, message: str = "", **details):
        super().__init__(message)
        self.details = details

    def to_dict(self) -> dict:
        out = {"error": self.code, "message": str(self)}
        out.update({k: v for k, v in self.details.items() if _jsonable(v)})
        return out


def _jsonable(v) -> bool:
    return isinstance(v, (str, int, float, bool, type(None), list, dict))


class ValidationError(FluxdecError, ValueError):
    exit_code = 2
    code = "validation"


class ResourceError(FluxdecError):
    exit_code = 3
    code = "resource"


class NumericalError(FluxdecError, ArithmeticError):
    exit_code = 4
    code = "numerical"


# validation family
class GeometryMismatch(ValidationError):
    code = "geometry-mismatch"


class NonHermitianError(ValidationError):
    code = "non-hermitian-input"


class InvalidSiteError(ValidationError):
    code = "invalid-site"


class MalformedFile(ValidationError):
    code = "malformed-file"


class NormViolation(ValidationError):
    code = "norm-violation"


class VersionMismatch(ValidationError):
    code = "version-mismatch"


class InsufficientData(ValidationError):
    code = "insufficient-data"


class NonpositiveValue(ValidationError):
    code = "nonpositive-value"


class NegativeInput(ValidationError):
    code = "negative-input"


class UnpairedSite(ValidationError):
    code = "unpaired-site"


class NonzeroMeanError(ValidationError):
    code = "nonzero-mean"


class NyquistViolation(ValidationError):
    code = "nyquist-violation"


class PreconditionViolation(ValidationError):
    code = "precondition-violation"

    def __init__(self, message: str = "", check: str = "", **details):
        super().__init__(message or f"precondition failed: {check}", check=check, **details)
        self.check = check


# resource family
class DimensionOverflow(ResourceError):
    code = "dimension-overflow"


# numerical family
class NoPlateauError(NumericalError):
    code = "no-plateau"


class NoLinearWindowError(NumericalError):
    code = "no-linear-window"


class EigensolverError(NumericalError):
    code = "eigensolver-failure"


class DegenerateGroundState(NumericalError):
    code = "degenerate-ground-state"


class TruncationOverflow(NumericalError):
    code = "truncation-overflow"


class StepInstability(NumericalError):
    code = "step-instability"


class AllSizesFailed(NumericalError):
    code = "all-sizes-failed"
