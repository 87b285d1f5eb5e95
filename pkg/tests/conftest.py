import numpy as np
import pytest

from exppert.algebra import ExpPolyMatrix, SpectralBasis


@pytest.fixture
def rng():
    return np.random.default_rng(20261018)


def random_matrix(rng, d, scale=1.0):
    return scale * (rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d)))


def random_skew(rng, d, scale=1.0):
    M = random_matrix(rng, d, scale)
    return 0.5 * (M - M.conj().T)


def random_ep(rng, basis, d, n_terms=3, max_k=2, max_power=0, rho=False, scale=1.0, skew=False):
    """Random exponential polynomial over ``basis``; ``skew`` makes it skew-Hermitian."""
    terms = []
    for _ in range(n_terms):
        k = rng.integers(-max_k, max_k + 1, size=basis.rank)
        p = int(rng.integers(0, max_power + 1))
        r = float(rng.uniform(-0.2, 0.0)) if rho else 0.0
        C = random_matrix(rng, d, scale)
        if skew:
            terms.append((k, 0.0, 0, C))
            terms.append((-k, 0.0, 0, -C.conj().T))
        else:
            terms.append((k, r, p, C))
    return ExpPolyMatrix.from_terms(basis, d, terms)


def max_abs(M):
    return float(np.max(np.abs(M)))


BASIS1 = SpectralBasis((1.0,))
BASIS2 = SpectralBasis((1.0, np.sqrt(2.0)))


_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance verdict; the line is echoed in the terminal summary."""

    def _report(number, title, ok, detail=""):
        line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {title}" + (f" [{detail}]" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
