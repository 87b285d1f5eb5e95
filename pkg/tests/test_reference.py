import numpy as np
import pytest

from exppert.algebra import ExpPolyMatrix
from exppert.engine import expand
from exppert.linalg import expm
from exppert.propagator import PropagationResult, propagate
from exppert.reference import StepSizeUnderflowError, error_curve, reference_propagate
from exppert.systems import bloch_siegert, three_lambda

from conftest import random_skew


def test_constant_generator(rng):
    A = random_skew(rng, 3)
    tol = 1e-12
    r = reference_propagate(ExpPolyMatrix.constant(A), [10.0], tol)
    assert np.max(np.abs(r.U[0] - expm(10.0 * A))) < 10 * tol * 10


def test_constant_generator_callable(rng):
    A = random_skew(rng, 2)
    r = reference_propagate(lambda t: A, [0.5, 1.0], 1e-12, dim=2)
    np.testing.assert_allclose(r.U[-1], expm(A), atol=1e-11)
    with pytest.raises(ValueError):
        reference_propagate(lambda t: A, [1.0], 1e-12)


def test_tolerance_range():
    s = bloch_siegert()
    for tol in (1e-15, 1e-5):
        with pytest.raises(ValueError):
            reference_propagate(s, [1.0], tol)


def test_self_consistency_halving_tolerance():
    s = bloch_siegert(epsilon=0.2)
    ts = np.linspace(0, 20, 101)[1:]
    tol = 1e-10
    a = reference_propagate(s, ts, tol).probabilities
    b = reference_propagate(s, ts, tol / 2).probabilities
    assert np.max(np.abs(a - b)) < 10 * tol


def test_unitarity_drift_three_lambda():
    s = three_lambda()
    w = s.basis.frequencies[0]
    tol = 1e-12
    r = reference_propagate(s, np.linspace(0, 400 / w, 200)[1:], tol)
    assert r.defects.max() < 100 * tol


def test_error_scales_with_tolerance():
    s = bloch_siegert(epsilon=0.5)
    ts = np.linspace(0, 10, 51)[1:]
    exact = reference_propagate(s, ts, 1e-14)
    errs = [np.max(np.abs(reference_propagate(s, ts, tol).U - exact.U)) for tol in (1e-7, 1e-8)]
    assert errs[1] < errs[0] and errs[0] / errs[1] <= 10 * 10


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_step_size_underflow():
    blowup = lambda t: np.array([[1.0 / (1.0 - t) ** 2]], dtype=complex)  # noqa: E731
    with pytest.raises(StepSizeUnderflowError):
        reference_propagate(blowup, [0.5, 2.0], 1e-10, dim=1)


class TestErrorCurve:
    def test_identical(self):
        r = reference_propagate(bloch_siegert(), np.linspace(0, 3, 11)[1:], 1e-10)
        e = error_curve(r, r)
        assert e.shape == (10, 2)
        assert np.all(e[:, 1] == 0.0)
        np.testing.assert_array_equal(e[:, 0], r.times)

    def test_grid_mismatch(self):
        a = PropagationResult(np.array([1.0, 2.0]), np.zeros((2, 2, 2)))
        b = PropagationResult(np.array([1.0, 3.0]), np.zeros((2, 2, 2)))
        with pytest.raises(ValueError):
            error_curve(a, b)

    def test_observable_override(self):
        U = np.array([[[0.6, 0.8], [0.8, -0.6]]], dtype=complex)
        a = PropagationResult(np.array([1.0]), U)
        b = PropagationResult(np.array([1.0]), np.eye(2)[None].astype(complex))
        assert error_curve(a, b, (1, 1))[0, 1] == pytest.approx(1 - 0.36)
        assert error_curve(a, b)[0, 1] == pytest.approx(0.64)

    def test_fm_beats_fm_at_higher_order_three_lambda(self):
        s = three_lambda(omega=12.0, scaled_time=True)
        tau = np.linspace(0, 100, 401)[1:]
        ref = reference_propagate(s, tau, 1e-12)
        e3 = error_curve(propagate(expand(s, "fm", 3), tau, 1.0), ref)[:, 1].max()
        e7 = error_curve(propagate(expand(s, "fm", 7), tau, 1.0), ref)[:, 1].max()
        assert e7 < e3

    def test_ld_deteriorates_fm_flat(self):
        s = bloch_siegert()
        ts = np.linspace(0, 40, 401)[1:]
        ref = reference_propagate(s, ts, 1e-12, epsilon=0.5)
        ld = error_curve(propagate(expand(s, "ld", 3, resonance="secular"), ts, 0.5), ref)[:, 1]
        fm = error_curve(propagate(expand(s, "fm", 3), ts, 0.5), ref)[:, 1]
        early, late = ts < 10, ts > 30
        assert ld[late].max() > 5 * ld[early].max()
        assert fm[late].max() < 10 * fm[early].max()
