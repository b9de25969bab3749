"""State-space geometry: dims, region classification, the exponential pairing."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from affineflow.core import (
    Dims,
    Region,
    Tolerances,
    as_point,
    as_state,
    classify_region,
    exp_functional,
    in_domain,
    in_domain_interior,
)

D21 = Dims(2, 1)
D11 = Dims(1, 1)


def test_dims_basic():
    assert D21.d == 3
    assert D21.I == slice(0, 2)
    assert D21.J == slice(2, 3)
    with pytest.raises(ValueError):
        Dims(-1, 2)
    with pytest.raises(ValueError):
        Dims(0, 0)


def test_dims_slices_partition():
    x = np.arange(5.0)
    dims = Dims(3, 2)
    assert np.array_equal(np.concatenate([x[dims.I], x[dims.J]]), x)


def test_tolerances_positive():
    with pytest.raises(ValueError):
        Tolerances(ode_rel=0.0)
    with pytest.raises(ValueError):
        Tolerances(region_eps=-1e-9)


def test_as_point_shape():
    u = as_point(-1.0, Dims(1, 0))
    assert u.shape == (1,) and u.dtype == np.complex128
    with pytest.raises(ValueError):
        as_point([1.0, 2.0], Dims(1, 0))


def test_as_state_cone():
    x = as_state([0.5, -3.0], D11)
    assert x.dtype == np.float64 and x[0] == 0.5
    with pytest.raises(ValueError):
        as_state([-0.5, 0.0], D11)
    # a small tolerance band admits slightly-negative cone entries
    assert as_state([-1e-12, 0.0], D11, nonneg_eps=1e-9)[0] == -1e-12


def test_classify_region_frozen_points():
    assert classify_region([-1.0 + 2j, 0.5j], D11) is Region.INTERIOR
    assert classify_region([0.0 + 1j, -2.0j], D11) is Region.PURE_IMAGINARY
    assert classify_region([1e-13 + 1j, 0.0j], D11) is Region.PURE_IMAGINARY
    assert classify_region([0.1, 0.0], D11) is Region.OUTSIDE
    assert classify_region([-1.0, 0.3], D11) is Region.OUTSIDE  # free real part
    # boundary: cone real part pinned at 0 but another one strictly negative
    assert classify_region([-1.0, 0.0, 1j], Dims(2, 1)) is Region.BOUNDARY


def test_in_domain_interior_vs_in_domain():
    assert in_domain([0.0, 1j], D11)
    assert not in_domain_interior([0.0, 1j], D11)
    assert in_domain_interior([-0.2, 1j], D11)
    # m = 0: every imaginary point is "interior"
    assert in_domain_interior([2.5j], Dims(0, 1))
    assert not in_domain_interior([0.1 + 2.5j], Dims(0, 1))


cone_part = st.floats(min_value=-8.0, max_value=0.0, allow_nan=False)
imag_part = st.floats(min_value=-8.0, max_value=8.0, allow_nan=False)
state_cone = st.floats(min_value=0.0, max_value=10.0, allow_nan=False)
state_free = st.floats(min_value=-10.0, max_value=10.0, allow_nan=False)


@st.composite
def admissible_pair(draw):
    """A (u, x) pair with u in the half-space and x in the state cone, dims (2, 1)."""
    u = np.array(
        [
            complex(draw(cone_part), draw(imag_part)),
            complex(draw(cone_part), draw(imag_part)),
            complex(0.0, draw(imag_part)),
        ]
    )
    x = np.array([draw(state_cone), draw(state_cone), draw(state_free)])
    return u, x


@given(admissible_pair())
@settings(max_examples=200, deadline=None)
def test_exp_functional_contraction(pair):
    """|exp(<u, x>)| <= 1 whenever u is admissible and x is a state."""
    u, x = pair
    assert in_domain(u, D21)
    assert abs(exp_functional(u, x)) <= 1.0 + 1e-12


@given(
    st.floats(min_value=-5.0, max_value=-1e-6),
    st.floats(min_value=-5.0, max_value=5.0),
    st.floats(min_value=1e-6, max_value=5.0),
)
@settings(max_examples=100, deadline=None)
def test_exp_functional_strict_decay(re_u, im_u, x):
    """Strictly interior u paired with strictly positive cone mass contracts strictly."""
    val = exp_functional([complex(re_u, im_u)], [x])
    assert abs(val) < 1.0
    assert abs(val) == pytest.approx(np.exp(re_u * x), rel=1e-12)


def test_exp_functional_frozen_value():
    # <u, x> = (-1 + i) * 2 = -2 + 2i
    val = exp_functional([-1.0 + 1.0j], [2.0])
    assert val == pytest.approx(np.exp(-2.0) * np.exp(2.0j), abs=1e-15)


def test_exp_functional_shape_mismatch():
    with pytest.raises(ValueError):
        exp_functional([1j, 2j], [1.0])


@given(admissible_pair())
@settings(max_examples=100, deadline=None)
def test_classification_consistency(pair):
    """classify_region agrees with the boolean helpers on admissible points."""
    u, _ = pair
    region = classify_region(u, D21)
    assert region is not Region.OUTSIDE
    assert in_domain(u, D21)
    if in_domain_interior(u, D21):
        assert region in (Region.INTERIOR,)
