import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from exitrate.model import (Ball, Box, ControlBox, ControlSpec, DiffusionSpec,
                            EllipticityError, FeedbackTuple, MultiChannelSystem,
                            NoiseLevel, StructuralError, closed_loop, validate_diffusion)


def test_closed_loop_scalar():
    sys_ = MultiChannelSystem([[0.0]], ([[1.0]],))
    assert closed_loop(sys_, FeedbackTuple(([[-2.0]],))).tolist() == [[-2.0]]


def test_closed_loop_zero_gains_returns_A(rng):
    A = rng.standard_normal((3, 3))
    sys_ = MultiChannelSystem(A, (rng.standard_normal((3, 2)), rng.standard_normal((3, 1))))
    np.testing.assert_array_equal(closed_loop(sys_, FeedbackTuple.zeros(sys_)), A)


def test_closed_loop_block():
    sys_ = MultiChannelSystem(np.zeros((2, 2)), (np.eye(2),))
    M = closed_loop(sys_, FeedbackTuple(([[-1.0, 0.0], [0.0, -3.0]],)))
    np.testing.assert_array_equal(M, np.diag([-1.0, -3.0]))


def test_closed_loop_linear_in_gains(rng):
    A = rng.standard_normal((3, 3))
    Bs = (rng.standard_normal((3, 1)), rng.standard_normal((3, 2)))
    sys_ = MultiChannelSystem(A, Bs)
    g = [rng.standard_normal((1, 3)), rng.standard_normal((2, 3))]
    dg = [rng.standard_normal((1, 3)), rng.standard_normal((2, 3))]
    lhs = closed_loop(sys_, FeedbackTuple(tuple(a + b for a, b in zip(g, dg))))
    rhs = closed_loop(sys_, FeedbackTuple(tuple(g))) + sum(B @ d for B, d in zip(Bs, dg))
    np.testing.assert_allclose(lhs, rhs, rtol=0, atol=1e-12)


def test_closed_loop_mismatch_names_channel():
    sys_ = MultiChannelSystem(np.zeros((2, 2)), (np.eye(2), np.ones((2, 1))))
    with pytest.raises(StructuralError, match="channel 1"):
        closed_loop(sys_, FeedbackTuple((np.zeros((2, 2)), np.zeros((2, 2)))))


def test_system_rejects_bad_B_rows():
    with pytest.raises(StructuralError):
        MultiChannelSystem(np.zeros((2, 2)), (np.ones((3, 1)),))


@pytest.mark.parametrize("base, mod, beta, kappa", [
    (np.eye(2), "constant", 0.0, 1.0),
    (np.diag([2.0, 1.0]), "constant", 0.0, 1.0),
    (np.eye(1), "saturating", -0.5, 0.25),
    (np.eye(1), "saturating", 2.0, 1.0),
])
def test_kappa_examples(base, mod, beta, kappa):
    spec = DiffusionSpec(base, mod, beta)
    assert validate_diffusion(spec) == pytest.approx(kappa, abs=1e-14)
    assert spec.kappa == pytest.approx(kappa, abs=1e-14)


def test_kappa_is_a_lower_bound(rng):
    spec = DiffusionSpec([[1.0, 0.3], [0.0, 0.7]], "saturating", -0.6)
    x = 10 * rng.standard_normal((1000, 2))
    lam_min = np.linalg.eigvalsh(spec.covariance(x))[:, 0]
    assert lam_min.min() >= spec.kappa - 1e-12


def test_ellipticity_errors():
    with pytest.raises(EllipticityError):
        DiffusionSpec([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(EllipticityError):
        DiffusionSpec([[1.0]], "saturating", -1.0)


def test_domains_membership_and_projection():
    box = Box([-1.0, 0.0], [1.0, 2.0])
    assert box.contains([0.0, 1.0]) and not box.contains([1.0, 1.0])
    assert box.contains_closure([1.0, 1.0])
    np.testing.assert_allclose(box.project([3.0, -1.0]), [1.0, 0.0])
    ball = Ball([5.0, 0.0], 1.0)
    assert ball.contains([5.5, 0.0]) and not ball.contains([6.0, 0.0])
    np.testing.assert_allclose(ball.project([8.0, 0.0]), [6.0, 0.0])
    assert ball.signed_distance([5.0, 0.0]) == pytest.approx(-1.0)


def test_box_rejects_empty():
    with pytest.raises(ValueError):
        Box([0.0], [0.0])


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2))
@settings(max_examples=60, deadline=None)
def test_projection_lands_in_closure(x):
    for D in (Box([-1.0, -1.0], [1.0, 1.0]), Ball([0.5, 0.0], 0.7)):
        p = D.project(np.array(x))
        assert D.contains_closure(p, tol=1e-10)


def test_control_spec_checks_dims():
    sys_ = MultiChannelSystem(np.zeros((2, 2)), (np.ones((2, 1)), np.eye(2)))
    ControlSpec((ControlBox([-1.0], [1.0]), ControlBox([-1, -1], [1, 1]))).check_against(sys_)
    with pytest.raises(StructuralError):
        ControlSpec((ControlBox([-1.0], [1.0]),)).check_against(sys_)
    assert ControlBox([-1.0, 0.0], [1.0, 4.0]).midpoint.tolist() == [0.0, 2.0]


def test_noise_level_bounds():
    NoiseLevel(0.1, 1.0)
    with pytest.raises(StructuralError):
        NoiseLevel(0.0)
    with pytest.raises(StructuralError):
        NoiseLevel(2.0, 1.0)
