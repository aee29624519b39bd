"""Exception hierarchy shared by all nvcavity modules."""


class NVCavityError(Exception):
    """Base class for every error raised by this package."""


class DomainError(NVCavityError, ValueError):
    """An input lies outside the domain where a quantity is defined."""


class InputError(NVCavityError, ValueError):
    """Malformed input such as an unsorted grid or a non-Hermitian matrix."""


class DegeneracyError(NVCavityError):
    """A generator has more than one stationary state."""


class IntegrationError(NVCavityError):
    """Time integration failed; ``diagnostics`` carries solver state."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoSolutionError(NVCavityError):
    """An inversion has no root in its admissible domain."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class RankDeficiencyError(NVCavityError):
    """Normal equations of a least-squares problem are singular."""


class DesignError(NVCavityError):
    """A photonic design has no resonance where one was expected."""


class ParseError(NVCavityError):
    """A scenario document failed validation.

    ``field`` names the offending key (dotted path) and ``line`` the
    1-based line in the source text where it was found, when known.
    """

    def __init__(self, message, field=None, line=None):
        where = []
        if field is not None:
            where.append(f"field '{field}'")
        if line is not None:
            where.append(f"line {line}")
        full = f"{message} ({', '.join(where)})" if where else message
        super().__init__(full)
        self.field = field
        self.line = line


class NonConvergenceError(NVCavityError):
    """A fit did not converge; the best-so-far result is attached."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class OverlapWarning(UserWarning):
    """Overlap factor above unity, i.e. inconsistent inputs."""
