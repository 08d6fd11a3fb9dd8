import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from byzopt import (
    Huber,
    PiecewiseLinearDerivative,
    Quadratic,
    argmin_interval,
    check_admissible,
    evaluate,
    function_from_dict,
    function_to_dict,
    gradient,
)
from byzopt.convexlib import DomainError, gradient_samples, pack_functions

import oracles


def test_quadratic_values():
    assert evaluate(Quadratic(1.0), 0.0) == 1.0
    # (x+1)^2 has minimum 0 at -1
    assert evaluate(Quadratic(-1.0), -1.0) == 0.0
    assert argmin_interval(Quadratic(-1.0)) == (-1.0, -1.0)
    assert gradient(Quadratic(2.0), 2.5) == 1.0


def test_quadratic_gradient_matches_finite_difference():
    fn = Quadratic(1.0)
    fd = oracles.central_difference(fn, 2.5)
    assert gradient(fn, 2.5) == 3.0
    assert abs(gradient(fn, 2.5) - fd) <= 1e-6


def test_huber_value_against_quadrature():
    fn = Huber(0.0, 2.0, 1.0)
    # linear branch: slope * (|x| - width/2)
    assert evaluate(fn, 3.0) == pytest.approx(5.0, abs=1e-12)
    assert evaluate(fn, 3.0) == pytest.approx(
        oracles.quadrature_value(fn, 3.0), abs=1e-9)
    assert evaluate(fn, -2.5) == pytest.approx(
        oracles.quadrature_value(fn, -2.5), abs=1e-9)
    assert gradient(fn, 5.0) == 2.0
    assert gradient(fn, -5.0) == -2.0
    # derivative continuous across the core boundary
    assert gradient(fn, 1.0) == pytest.approx(2.0, abs=1e-12)


def test_piecewise_linear_derivative():
    fn = PiecewiseLinearDerivative(((0.0, -1.0), (1.0, 0.0), (2.0, 0.0),
                                    (3.0, 1.0)))
    assert argmin_interval(fn) == (1.0, 2.0)
    assert gradient(fn, -5.0) == -1.0
    assert gradient(fn, 1.5) == 0.0
    assert gradient(fn, 2.5) == 0.5
    assert evaluate(fn, 1.0) == 0.0
    assert evaluate(fn, 1.7) == 0.0
    assert evaluate(fn, 3.0) == pytest.approx(
        oracles.quadrature_value(fn, 3.0), abs=1e-9)
    assert fn.lipschitz_bound == 1.0


def test_pld_value_anchor_is_minimum():
    fn = PiecewiseLinearDerivative(((-2.0, -3.0), (1.0, 3.0)))
    lo, hi = argmin_interval(fn)
    assert lo == hi == pytest.approx(-0.5)
    for x in np.linspace(-4, 3, 31):
        assert evaluate(fn, float(x)) >= -1e-12


def test_check_admissible_ok():
    assert check_admissible(Quadratic(0.0)).ok
    assert check_admissible(Huber(0.0, 2.0, 1.0)).ok


def test_check_admissible_violations():
    dec = PiecewiseLinearDerivative(((-1.0, 1.0), (1.0, -1.0)))
    assert "non_monotone_gradient" in check_admissible(dec).violations

    wrong_bound = Huber(0.0, 2.0, 1.0, lipschitz_bound=1.0)
    assert gradient(wrong_bound, 5.0) == 2.0
    assert "lipschitz_exceeded" in check_admissible(wrong_bound).violations

    flat = PiecewiseLinearDerivative(((0.0, 1.0),))
    assert "unbounded_argmin" in check_admissible(flat).violations
    never_up = PiecewiseLinearDerivative(((-1.0, -2.0), (1.0, 0.0)))
    assert "unbounded_argmin" in check_admissible(never_up).violations

    # a quadratic cannot honour any declared global derivative bound
    assert "lipschitz_exceeded" in check_admissible(
        Quadratic(0.0, 1.0, 0.0, lipschitz_bound=10.0)).violations


def test_non_finite_arguments_rejected():
    fn = Quadratic(0.0)
    with pytest.raises(DomainError):
        evaluate(fn, math.inf)
    with pytest.raises(DomainError):
        gradient(fn, math.nan)


def test_constructor_validation():
    with pytest.raises(ValueError):
        Quadratic(0.0, s=-1.0)
    with pytest.raises(ValueError):
        Huber(0.0, slope=0.0, width=1.0)
    with pytest.raises(ValueError):
        PiecewiseLinearDerivative(((0.0, 1.0), (0.0, 2.0)))
    with pytest.raises(ValueError):
        PiecewiseLinearDerivative(())


def test_serialization_roundtrip():
    fns = [
        Quadratic(1.25, 2.0, -3.0),
        Huber(-0.5, 1.5, 0.75),
        PiecewiseLinearDerivative(((-1.0, -2.0), (0.5, 0.0), (2.0, 3.0))),
        Huber(0.0, 2.0, 1.0, lipschitz_bound=5.0),
    ]
    for fn in fns:
        d = function_to_dict(fn)
        back = function_from_dict(d)
        assert back == fn
        assert function_to_dict(back) == d
    # the documented wire format
    assert function_to_dict(Quadratic(1.0, 1.0, 0.0)) == {
        "kind": "quadratic", "a": 1.0, "s": 1.0, "c": 0.0}


def test_gradient_samples_match_scalar():
    fns = [Quadratic(0.5, 2.0), Huber(-1.0, 2.0, 0.5),
           PiecewiseLinearDerivative(((-1.0, -1.0), (0.0, 0.0), (1.0, 2.0)))]
    xs = np.linspace(-3, 3, 101)
    for fn in fns:
        vec = gradient_samples(fn, xs)
        for x, v in zip(xs, vec):
            assert v == pytest.approx(fn.grad(float(x)), abs=1e-12)


# --- property tests ---------------------------------------------------------

reasonable = st.floats(-5.0, 5.0, allow_nan=False, allow_infinity=False)


@st.composite
def piecewise_functions(draw):
    k = draw(st.integers(2, 6))
    xs = sorted(draw(st.lists(
        st.floats(-5.0, 5.0, allow_nan=False), min_size=k, max_size=k,
        unique=True)))
    d0 = draw(st.floats(-5.0, -0.1))
    steps = draw(st.lists(st.floats(0.0, 3.0), min_size=k - 1, max_size=k - 1))
    ds = [d0]
    for s in steps:
        ds.append(ds[-1] + s)
    if ds[-1] <= 0:
        ds[-1] = 0.1
    return PiecewiseLinearDerivative(tuple(zip(xs, ds)))


admissible_functions = st.one_of(
    st.builds(Quadratic, a=reasonable, s=st.floats(0.1, 5.0),
              c=reasonable),
    st.builds(Huber, a=reasonable, slope=st.floats(0.5, 5.0),
              width=st.floats(0.1, 3.0)),
    piecewise_functions(),
)


@settings(max_examples=60, deadline=None)
@given(admissible_functions, st.lists(st.floats(-10, 10, allow_nan=False),
                                      min_size=2, max_size=20))
def test_gradient_is_non_decreasing(fn, points):
    points = sorted(points)
    g = [fn.grad(x) for x in points]
    for a, b in zip(g, g[1:]):
        assert a <= b + 1e-12


@settings(max_examples=60, deadline=None)
@given(admissible_functions)
def test_argmin_consistency(fn):
    lo, hi = fn.argmin_interval()
    assert lo <= hi
    assert abs(fn.grad(lo)) <= 1e-12
    assert abs(fn.grad(hi)) <= 1e-12
    assert fn.grad(lo - 1.0) < 0
    assert fn.grad(hi + 1.0) > 0


@settings(max_examples=40, deadline=None)
@given(admissible_functions, st.integers(0, 2**32 - 1))
def test_finite_difference_agreement(fn, seed):
    rng = np.random.default_rng(seed)
    for x in rng.uniform(-8, 8, size=100):
        fd = oracles.central_difference(fn, float(x))
        assert abs(fn.grad(float(x)) - fd) <= 1e-5


@settings(max_examples=40, deadline=None)
@given(admissible_functions)
def test_admissible_functions_pass_check(fn):
    assert check_admissible(fn).ok


def test_pack_functions_layout():
    fns = (Quadratic(1.0), Huber(2.0, 2.0, 1.0),
           PiecewiseLinearDerivative(((-1.0, -1.0), (1.0, 1.0))))
    pack = pack_functions(fns)
    assert list(pack.kind) == [0, 1, 2]
    assert list(pack.bp_off) == [0, 0, 0, 2]
    assert pack.lip[0] == math.inf
    assert pack.lip[1] == 2.0
    assert pack.lip[2] == 1.0
    assert pack.xmin[2] == -0.0 or pack.xmin[2] == 0.0
