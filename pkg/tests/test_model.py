"""Model ingredients and right-hand sides: worked examples and structural properties."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from flocksteer import (
    CircleTarget,
    ConstantSteering,
    DegenerateInfluenceError,
    DomainError,
    FrictionRule,
    GainRule,
    GaussianKernel,
    InfluenceRule,
    Masking,
    ModelConfig,
    OpenLoopSystem,
    OrientationBias,
    OrientationMap,
    PowerKernel,
    SwarmState,
    TrackingSteering,
    influence_matrix,
    rhs_closed,
    rhs_open,
)
from flocksteer.model import gain_vector, local_mean_velocity, steering_eval

PRESET_GAIN = GainRule(A=10.0, offset=0.1, power=0.5)
PRESET_INFLUENCE = InfluenceRule(PowerKernel(1.0, 1.0, 0.3))

finite = st.floats(-50, 50, allow_nan=False, allow_infinity=False)


@st.composite
def configurations(draw, max_n=10, max_d=3):
    n = draw(st.integers(1, max_n))
    d = draw(st.integers(1, max_d))
    x = draw(arrays(float, (n, d), elements=finite))
    v = draw(arrays(float, (n, d), elements=st.floats(-5, 5)))
    return x, v


# -- state ------------------------------------------------------------------


def test_state_rejects_nonfinite_and_shape_mismatch():
    with pytest.raises(DomainError):
        SwarmState(0.0, [[np.nan, 0.0]], [[0.0, 0.0]])
    with pytest.raises(DomainError):
        SwarmState(0.0, [[0.0, 0.0]], [[0.0, 0.0, 0.0]])
    s = SwarmState(0.0, [[1.0, 2.0]], [[0.0, 0.0]])
    assert s.n_agents == 1 and s.dim == 2
    with pytest.raises(ValueError):
        s.x[0, 0] = 5.0


# -- influence --------------------------------------------------------------


def test_influence_single_agent():
    assert influence_matrix([[3.0, 1.0]], [[0.0, 0.0]], PRESET_INFLUENCE).tolist() == [[1.0]]


def test_influence_coincident_pair_is_uniform():
    A = influence_matrix([[1.0, 1.0], [1.0, 1.0]], np.zeros((2, 2)), PRESET_INFLUENCE)
    np.testing.assert_array_equal(A, [[0.5, 0.5], [0.5, 0.5]])


def test_influence_unit_distance_row():
    # 1 / (1 + 2^-0.3) by hand
    A = influence_matrix([[0.0, 0.0], [1.0, 0.0]], np.zeros((2, 2)), PRESET_INFLUENCE)
    np.testing.assert_allclose(A[0], [0.5517995186601091, 0.44820048133989093], rtol=0, atol=1e-14)


def test_influence_rejects_nonfinite():
    with pytest.raises(DomainError):
        influence_matrix([[0.0], [np.inf]], [[0.0], [0.0]], PRESET_INFLUENCE)


def test_influence_underflow_is_degenerate():
    rule = InfluenceRule(GaussianKernel(1.0, 0.01))
    with pytest.raises(DegenerateInfluenceError):
        influence_matrix([[0.0], [100.0]], [[0.0], [0.0]], rule)


def _rules():
    return st.sampled_from([
        PRESET_INFLUENCE,
        InfluenceRule(PowerKernel(2.0, 0.5, 1.5), Masking(0.7, 1.5, 0.05)),
        InfluenceRule(GaussianKernel(1.0, 30.0), orientation=OrientationBias(0.8, 0.1)),
        InfluenceRule(PowerKernel(), Masking(0.5, 1.0, 0.1), OrientationBias(0.5, 0.05)),
    ])


@settings(max_examples=150, deadline=None)
@given(configurations(), _rules())
def test_influence_row_stochastic_and_positive(xv, rule):
    x, v = xv
    A = influence_matrix(x, v, rule)
    assert np.all(A > 0)
    np.testing.assert_allclose(A.sum(axis=1), 1.0, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(configurations(), _rules(), arrays(float, 3, elements=finite))
def test_influence_shift_invariant(xv, rule, shift):
    x, v = xv
    y = shift[: x.shape[1]]
    np.testing.assert_allclose(influence_matrix(x + y, v, rule), influence_matrix(x, v, rule), rtol=0, atol=1e-12)


def test_masking_attenuates_blocked_line_of_sight():
    rule = InfluenceRule(PowerKernel(), Masking(kappa=0.9, width=0.5, smoothing=0.01))
    x = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    A = influence_matrix(x, np.zeros_like(x), rule)
    plain = influence_matrix(x, np.zeros_like(x), PRESET_INFLUENCE)
    # agent 1 sits between 0 and 2
    assert A[0, 2] / A[0, 1] < 0.2 * plain[0, 2] / plain[0, 1]


def test_orientation_favours_agents_ahead():
    rule = InfluenceRule(PowerKernel(), orientation=OrientationBias(eta=0.8, delta=0.05))
    x = np.array([[0.0, 0.0], [1.0, 0.0], [-1.0, 0.0]])
    v = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 0.0]])
    A = influence_matrix(x, v, rule)
    assert A[0, 1] > A[0, 2]


# -- orientation map and gain -------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(arrays(float, 3, elements=st.floats(-1e6, 1e6)), st.floats(0.01, 10))
def test_orientation_map_in_unit_ball(u, b):
    s = OrientationMap(b)(u)
    assert np.linalg.norm(s) <= 1.0
    assert np.all(OrientationMap(b)(np.zeros(3)) == 0)


def test_bounded_gain_at_zero():
    assert PRESET_GAIN(np.zeros(2)) == pytest.approx(10 / np.sqrt(0.1), rel=1e-15)
    assert PRESET_GAIN(np.zeros(2)) == pytest.approx(31.6228, abs=1e-4)


def test_bounded_gain_acceleration_tends_to_bound():
    norms = np.array([1.0, 10.0, 1e3, 1e6])
    acc = [PRESET_GAIN(np.array([r, 0.0])) * r for r in norms]
    assert np.all(np.diff(acc) > 0)
    assert acc[-1] == pytest.approx(10.0, rel=1e-9)
    assert max(acc) < 10.0


def test_default_gain_at_zero():
    assert GainRule(A=1.0, offset=1.0)(np.zeros(3)) == 1.0


@settings(max_examples=200, deadline=None)
@given(arrays(float, (4, 2), elements=st.floats(-1e4, 1e4)))
def test_gain_acceleration_bound(u):
    alpha = gain_vector(u, np.zeros_like(u), PRESET_GAIN)
    assert np.all(alpha > 0)
    assert np.all(alpha * np.linalg.norm(u, axis=1) <= 10.0 + 1e-9)


# -- local mean ---------------------------------------------------------------


def test_local_mean_examples():
    v = np.array([[1.0, 0.0], [0.0, 1.0]])
    np.testing.assert_array_equal(local_mean_velocity(np.eye(2), v), v)
    w = np.tile([[2.0, -1.0]], (3, 1))
    np.testing.assert_allclose(local_mean_velocity(np.full((3, 3), 1 / 3), w), w, atol=1e-15)
    A = np.array([[0.55182, 0.44818], [0.44818, 0.55182]])
    np.testing.assert_allclose(local_mean_velocity(A, v)[0], [0.55182, 0.44818])
    with pytest.raises(DomainError):
        local_mean_velocity(np.eye(3), v)


# -- right-hand sides -----------------------------------------------------------


def test_rhs_flocked_state_is_stationary():
    cfg = ModelConfig(4, 2, PRESET_INFLUENCE, PRESET_GAIN)
    s = SwarmState(0.0, np.random.default_rng(0).normal(size=(4, 2)), np.tile([1.0, -2.0], (4, 1)))
    dx, dv = rhs_closed(s, cfg)
    np.testing.assert_array_equal(dx, s.v)
    np.testing.assert_allclose(dv, 0.0, atol=1e-12)


def test_rhs_single_agent_feels_only_steering():
    cfg = ModelConfig(1, 2, PRESET_INFLUENCE, PRESET_GAIN, ConstantSteering([[1.0, 0.0]]))
    _, dv = rhs_closed(SwarmState(0.0, [[3.0, 4.0]], [[7.0, -1.0]]), cfg)
    np.testing.assert_array_equal(dv, [[1.0, 0.0]])


def test_rhs_two_agent_uniform_constant_gain():
    system = OpenLoopSystem(2, 1, alpha=lambda t: np.ones(2), influence=lambda t: np.full((2, 2), 0.5))
    _, dv = rhs_open(SwarmState(0.0, [[0.0], [1.0]], [[0.0], [2.0]]), system)
    np.testing.assert_array_equal(dv, [[1.0], [-1.0]])


def test_rhs_open_examples():
    half = lambda t: np.full((2, 2), 0.5)  # noqa: E731
    s = SwarmState(0.0, [[0.0], [1.0]], [[0.0], [2.0]])
    _, dv = rhs_open(s, OpenLoopSystem(2, 1, alpha=lambda t: np.array([2.0, 1.0]), influence=half))
    np.testing.assert_array_equal(dv, [[2.0], [-1.0]])
    _, dv = rhs_open(s, OpenLoopSystem(2, 1, alpha=lambda t: np.zeros(2), influence=half))
    np.testing.assert_array_equal(dv, 0.0)
    beta = np.array([[0.3], [-0.7]])
    _, dv = rhs_open(s, OpenLoopSystem(2, 1, alpha=lambda t: np.array([5.0, 3.0]), influence=lambda t: np.eye(2),
                                       steering=lambda t: beta))
    np.testing.assert_array_equal(dv, beta)
    with pytest.raises(DomainError):
        rhs_open(s, OpenLoopSystem(2, 1, alpha=lambda t: np.ones(2), influence=lambda t: np.full((2, 2), 0.6)))


def test_rhs_friction_and_eps_scaling():
    cfg = ModelConfig(1, 1, friction=FrictionRule(c=2.0, r=1.0))
    _, dv = rhs_closed(SwarmState(0.0, [[0.0]], [[3.0]]), cfg)
    assert dv[0, 0] == pytest.approx(-18.0)
    system = OpenLoopSystem(2, 1, alpha=lambda t: np.ones(2), influence=lambda t: np.full((2, 2), 0.5))
    base = ModelConfig(2, 1, InfluenceRule(PowerKernel(beta=0.0)), GainRule.constant(1.0))
    s = SwarmState(0.0, [[0.0], [1.0]], [[0.0], [2.0]])
    np.testing.assert_allclose(rhs_closed(s, base.replace(eps=0.25))[1], 4 * rhs_open(s, system)[1])


def test_rhs_rejects_mismatched_state():
    cfg = ModelConfig(3, 2)
    with pytest.raises(DomainError):
        rhs_closed(SwarmState(0.0, np.zeros((2, 2)), np.zeros((2, 2))), cfg)


@settings(max_examples=60, deadline=None)
@given(configurations(max_n=6, max_d=2), st.randoms(use_true_random=False))
def test_rhs_permutation_equivariant(xv, rnd):
    x, v = xv
    n, d = x.shape
    perm = np.array(rnd.sample(range(n), n))
    rule = InfluenceRule(PowerKernel(), Masking(0.5, 1.0, 0.05), OrientationBias(0.3, 0.1))
    cfg = ModelConfig(n, d, rule, PRESET_GAIN, friction=FrictionRule(0.2, 1.0))
    dx, dv = rhs_closed(SwarmState(0.0, x, v), cfg)
    px, pv = rhs_closed(SwarmState(0.0, x[perm], v[perm]), cfg)
    np.testing.assert_allclose(px, dx[perm], atol=1e-12)
    np.testing.assert_allclose(pv, dv[perm], rtol=1e-10, atol=1e-10)


# -- steering -----------------------------------------------------------------


def test_tracking_zero_gains():
    rule = TrackingSteering(0.0, 0.0)
    np.testing.assert_array_equal(steering_eval(rule, [3.0, 4.0], [1.0, 1.0], 2.5), 0.0)


def test_tracking_on_target():
    rule = TrackingSteering(2.0, 0.1, CircleTarget())
    np.testing.assert_allclose(steering_eval(rule, [100.0, 20.0], [1.0, 0.0], 0.0), [0.0, 0.0], atol=1e-15)


def test_tracking_from_origin():
    rule = TrackingSteering(2.0, 0.1, CircleTarget())
    np.testing.assert_allclose(steering_eval(rule, [0.0, 0.0], [0.0, 0.0], 0.0), [12.0, 2.0], rtol=1e-15)


def test_circle_target_velocity_matches_derivative():
    tgt = CircleTarget()
    t, h = 3.7, 1e-5
    fd = (tgt.position(t + h) - tgt.position(t - h)) / (2 * h)
    np.testing.assert_allclose(tgt.velocity(t), fd, atol=1e-8)
    np.testing.assert_allclose(tgt.velocity(0.0), [1.0, 0.0])


def test_open_loop_schedule_row():
    rule = ConstantSteering([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(steering_eval(rule, [0, 0], [0, 0], 1.0, i=1), [3.0, 4.0])


def test_config_validation():
    with pytest.raises(DomainError):
        ModelConfig(2, 2, eps=0.0)
    with pytest.raises(DomainError):
        ModelConfig(2, 2, steering=ConstantSteering(np.zeros((3, 2))))
    with pytest.raises(DomainError):
        Masking(kappa=1.0)
    with pytest.raises(DomainError):
        OrientationBias(eta=1.0)
    with pytest.raises(DomainError):
        GainRule(A=0.0)
