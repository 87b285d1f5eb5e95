"""Exception hierarchy shared by the algebra, kernels and expansion engine."""


class ExpansionError(Exception):
    """Base class for failures raised while building an expansion.

    ``order`` is filled in by the recursion driver with the perturbative
    order at which the failure happened (``None`` outside the driver).
    """

    order = None

    def annotate(self, order):
        self.order = order
        if self.args:
            self.args = (f"order {order}: {self.args[0]}",) + self.args[1:]
        return self


class SecularTermError(ExpansionError):
    """A limiting mean was requested for a term growing (or decaying) in time."""


class ResonanceError(ExpansionError):
    """A small or vanishing divisor was met while solving a homological equation.

    Attributes
    ----------
    pair : (int, int) or None
        Eigenvalue indices (l, m) of the offending divisor.
    k : tuple of int or None
        Integer mode vector over the spectral basis.
    divisor : float
        Modulus of the divisor.
    bound : float
        Diophantine lower bound it failed to exceed.
    """

    def __init__(self, message, pair=None, k=None, divisor=0.0, bound=0.0):
        super().__init__(message)
        self.pair = pair
        self.k = k
        self.divisor = divisor
        self.bound = bound


class ExistenceConditionError(ExpansionError):
    """The quantum-averaging limits do not exist for some mode."""


class NonDiagonalizableError(ExpansionError):
    """The constant part of the generator has no usable eigenbasis."""


class IllConditionedEigenbasisError(NonDiagonalizableError):
    """The eigenvector matrix is too ill-conditioned to trust."""


class MatrixOverflowError(ArithmeticError):
    """A dense kernel produced non-finite entries."""
