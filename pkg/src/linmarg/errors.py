"""Typed errors. Every error carries the exit code the CLI maps it to."""


class LinmargError(Exception):
    exit_code = 3


class VerificationFailure(LinmargError):
    exit_code = 1


# --- Input validation (exit 2) ---
class ValidationError(LinmargError):
    exit_code = 2


class DimensionMismatch(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class InvalidDegree(ValidationError):
    pass


class InvalidFrequency(ValidationError):
    pass


class InvalidDomain(ValidationError):
    pass


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        where = []
        if line is not None:
            where.append(f"строка {line}")
        if column is not None:
            where.append(f"столбец {column}")
        super().__init__(f"{message} ({', '.join(where)})" if where else message)


# --- Numerical failures (exit 3) ---
class NonPositiveDefinite(LinmargError):
    pass


class SingularPosterior(LinmargError):
    pass


class ImproperMarginal(LinmargError):
    pass


class DegenerateScan(LinmargError):
    pass


# --- Sampler (exit 4) ---
class EnvelopeTooLoose(LinmargError):
    exit_code = 4

    def __init__(self, message: str, acceptance_rate: float, proposals: int):
        self.acceptance_rate = acceptance_rate
        self.proposals = proposals
        super().__init__(f"{message} (acceptance={acceptance_rate:.3g}, proposals={proposals})")
