import numpy as np
import pytest

from certrom.linalg import orth
from certrom.system import AffineSystem, Coefficient, ParameterDomain, ParameterPoint


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def constant_system(A, B, scale=1.0, f_lo=1.0, f_hi=2.0):
    """System whose matrix and rhs do not depend on the parameter."""
    B = np.asarray(B)
    return AffineSystem([A], [Coefficient()], [B[:, None] if B.ndim == 1 else B], [Coefficient()],
                        ParameterDomain(f_lo, f_hi), scale=scale)


def random_affine_system(rng, n, p=1, scale=1.0):
    """``A(s) = A0 + s A1`` with complex dense terms and ``B(s) = Q``; well-conditioned in [0.1, 0.2] Hz."""
    A0 = crandn(rng, n, n) + 3 * np.sqrt(n) * np.eye(n)
    A1 = crandn(rng, n, n) / np.sqrt(n)
    Q = crandn(rng, n, p)
    return AffineSystem([A0, A1], [Coefficient(), Coefficient(s_power=1)], [Q], [Coefficient()],
                        ParameterDomain(0.1, 0.2), scale=scale)


def random_point(rng, lo=0.1, hi=0.2):
    return ParameterPoint(float(rng.uniform(lo, hi)))


def random_basis(rng, n, r, complex_=True):
    M = crandn(rng, n, r) if complex_ else rng.standard_normal((n, r))
    return orth(M)


def dense_matrix(system, mu):
    A = system.assemble(mu)
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CRITERIA: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    """Remember one acceptance verdict; all verdicts are echoed in the terminal summary."""
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[number])
