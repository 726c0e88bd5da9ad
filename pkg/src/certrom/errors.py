"""Exception hierarchy shared by all certrom modules."""


class CertromError(Exception):
    """Base class for every error raised by certrom."""


class SingularMatrix(CertromError):
    """A (full-order) matrix has no usable pivot, e.g. at an exact resonance."""


class SingularReducedMatrix(SingularMatrix):
    """The reduced matrix of a Galerkin ROM is singular at the requested point."""


class EmptyBasis(CertromError):
    """Every column fell below the drop tolerance during orthogonalization."""


class DimensionTooLarge(CertromError):
    """A dense computation was requested above the configured size cap."""


class DimensionMismatch(CertromError, ValueError):
    pass


class InvalidSpec(CertromError, ValueError):
    """A benchmark, grid or run configuration is malformed."""


class DegenerateGrid(CertromError, ValueError):
    """The training set is too small for the requested sampling strategy."""


class NotConverged(CertromError):
    """The greedy loop hit ``max_iterations`` before reaching the tolerance.

    The partial results are kept on the exception so callers can still
    write them out.
    """

    def __init__(self, message, report=None, rom=None):
        super().__init__(message)
        self.report = report
        self.rom = rom
