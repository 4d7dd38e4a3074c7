import numpy as np
import pytest

from exitrate.elliptic_eig import build_grid, discretize, principal_eigenpair
from exitrate.hjb import (ChannelError, ChannelProblem, ConventionError, PolicyField,
                          assemble_channel_operator, grid_gradient, improve_policy,
                          policy_iteration, rate_vector, write_solution)
from exitrate.model import (Box, ControlBox, ControlSpec, DiffusionSpec, FeedbackTuple,
                            MultiChannelSystem, closed_loop)
from exitrate.sde_sim import PolicyDrift, estimate_exit_rate, sample_exit_times

ONE_D = MultiChannelSystem([[0.5]], ([[1.0]],))


def _problem(box=(-1.0, 1.0), res=101, eps=0.5):
    grid = build_grid(Box([-1.0], [1.0]), res)
    controls = ControlSpec((ControlBox([box[0]], [box[1]]),))
    return ChannelProblem(ONE_D, FeedbackTuple.zeros(ONE_D), 0, controls,
                          DiffusionSpec([[1.0]]), eps, grid)


def test_zero_policy_reduces_to_closed_loop():
    sys_ = MultiChannelSystem([[0.1, 1.0], [0.0, -0.2]], ([[1.0], [0.0]], [[0.0], [1.0]]))
    fb = FeedbackTuple(([[-1.0, 0.0]], [[0.0, -2.0]]))
    grid = build_grid(Box([-1, -1], [1, 1]), 15)
    controls = ControlSpec((ControlBox([-1.0], [1.0]), ControlBox([-1.0], [1.0])))
    prob = ChannelProblem(sys_, fb, 0, controls, DiffusionSpec(np.eye(2)), 0.4, grid)
    op = assemble_channel_operator(prob, PolicyField.constant(0, grid, [0.0]))
    fb0 = FeedbackTuple((np.zeros((1, 2)), fb.gains[1]))
    ref = discretize(closed_loop(sys_, fb0), DiffusionSpec(np.eye(2)), 0.4, grid)
    assert abs(op.L - ref.L).max() == 0


def test_constant_policy_row_by_hand():
    prob = _problem(res=11)                   # h = 0.2, interior -0.8..0.8
    op = assemble_channel_operator(prob, PolicyField.constant(0, prob.grid, [0.3]))
    k = 4                                     # node x = 0, drift b = 0.3 > 0
    h, diff = 0.2, 0.5 * 0.5 / 0.04
    row = op.L.getrow(k).toarray().ravel()
    assert row[k] == pytest.approx(2 * diff + 0.3 / h)
    assert row[k + 1] == pytest.approx(-(diff + 0.3 / h))
    assert row[k - 1] == pytest.approx(-diff)


def test_vertex_policy_keeps_m_matrix():
    prob = _problem(res=81)
    u = np.where(np.arange(prob.grid.n_interior) % 2 == 0, 1.0, -1.0)[:, None]
    op = assemble_channel_operator(prob, PolicyField(0, u))
    assert np.all(np.isfinite(op.drift))
    L = op.L.tocoo()
    assert np.all(L.data[L.row != L.col] <= 0)


def test_improve_policy_ties_and_signs():
    box = ControlBox([-1.0], [2.0])
    pol = improve_policy(np.array([[0.0], [1e-13], [0.5], [-0.5]]), [[1.0]], box)
    np.testing.assert_allclose(pol.values.ravel(), [0.5, 0.5, 2.0, -1.0])


def test_improve_policy_pushes_toward_peak():
    grid = build_grid(Box([-1.0], [1.0]), 41)
    x = grid.points[:, 0]
    psi = np.cos(np.pi * x / 2)
    pol = improve_policy(grid_gradient(grid, psi), [[1.0]], ControlBox([-1.0], [1.0]))
    assert np.all(pol.values[x < -1e-12] == 1.0)
    assert np.all(pol.values[x > 1e-12] == -1.0)
    assert pol.values[np.abs(x) < 1e-12][0, 0] == 0.0


def test_improve_policy_scale_invariant(rng):
    g = rng.standard_normal((50, 2))
    B = rng.standard_normal((2, 2))
    box = ControlBox([-1, -2], [1, 0.5])
    a = improve_policy(g, B, box).values
    b = improve_policy(7.3 * g, B, box).values
    np.testing.assert_array_equal(a, b)


def test_grid_gradient_of_linear_function():
    grid = build_grid(Box([-1, -1], [1, 1]), 11)
    pts = grid.points
    psi = 2 * pts[:, 0] - pts[:, 1]
    g = grid_gradient(grid, psi)
    inner = np.all(np.abs(pts) < 0.7, axis=1)
    np.testing.assert_allclose(g[inner], np.tile([2.0, -1.0], (inner.sum(), 1)), atol=1e-12)


def test_degenerate_box_is_uncontrolled():
    prob = _problem(box=(0.0, 0.0))
    sol = policy_iteration(prob)
    ref = principal_eigenpair(discretize([[0.5]], DiffusionSpec([[1.0]]), 0.5, prob.grid))
    assert sol.sweeps == 1 and sol.lam == pytest.approx(ref.lam, rel=1e-12)


def test_policy_beats_enumerated_policies():
    prob = _problem(res=203)
    sol = policy_iteration(prob)
    assert sol.converged
    for u in (-1.0, -0.5, 0.0, 0.5, 1.0):
        lam_u = principal_eigenpair(
            assemble_channel_operator(prob, PolicyField.constant(0, prob.grid, [u]))).lam
        assert sol.lam <= lam_u + 1e-8
    x = prob.grid.points[:, 0]
    centering = np.sign(-x)[:, None]
    lam_c = principal_eigenpair(
        assemble_channel_operator(prob, PolicyField(0, centering))).lam
    assert sol.lam <= lam_c + 1e-8
    assert np.all(np.diff(sol.trace) <= 10 * 1e-9 * np.array(sol.trace[:-1]))


def test_larger_box_never_worse():
    small = policy_iteration(_problem(box=(-0.5, 0.5))).lam
    big = policy_iteration(_problem(box=(-1.0, 1.0))).lam
    assert big <= small + 1e-10


def test_rate_vector_single_channel_matches_iteration():
    prob = _problem()
    rates, sols = rate_vector(ONE_D, FeedbackTuple.zeros(ONE_D), prob.controls,
                              prob.diffusion, prob.eps, prob.grid)
    assert rates.shape == (1,) and rates[0] == policy_iteration(prob).lam


def test_symmetric_channels_equal():
    B = [[1.0], [0.0]]
    sys_ = MultiChannelSystem(0.3 * np.eye(2), (B, B))
    fb = FeedbackTuple(([[-1.0, 0.0]], [[-1.0, 0.0]]))
    box = ControlBox([-0.5], [0.5])
    grid = build_grid(Box([-1, -1], [1, 1]), 25)
    rates, _ = rate_vector(sys_, fb, ControlSpec((box, box)), DiffusionSpec(np.eye(2)),
                           0.5, grid)
    assert abs(rates[0] - rates[1]) <= 1e-8


def test_channel_rate_bound_when_feedback_is_admissible():
    # gamma x stays inside U on D, so the optimum can only improve on it
    sys_ = MultiChannelSystem(0.5 * np.eye(2), ([[1.0], [0.0]], [[0.0], [1.0]]))
    fb = FeedbackTuple(([[-0.8, 0.0]], [[0.0, -0.8]]))
    box = ControlBox([-1.0], [1.0])
    grid = build_grid(Box([-1, -1], [1, 1]), 31)
    dif = DiffusionSpec(np.eye(2))
    lam0 = principal_eigenpair(discretize(closed_loop(sys_, fb), dif, 0.4, grid)).lam
    rates, _ = rate_vector(sys_, fb, ControlSpec((box, box)), dif, 0.4, grid)
    assert np.all(lam0 - rates >= -1e-8)


def test_channel_errors_carry_index():
    sys_ = MultiChannelSystem(np.zeros((2, 2)), ([[1.0], [0.0]], [[0.0], [1.0]]))
    fb = FeedbackTuple.zeros(sys_)
    box = ControlBox([-1.0], [1.0])
    grid = build_grid(Box([-1, -1], [1, 3]), 7)
    dif = DiffusionSpec([[1.0, 0.0], [0.99, 0.1]])      # stencil fails on this grid
    with pytest.raises(ChannelError) as info:
        rate_vector(sys_, fb, ControlSpec((box, box)), dif, 1.0, grid)
    assert info.value.channel == 0


def test_convention_violation_detected(monkeypatch):
    import exitrate.hjb as hjb_mod
    orig = hjb_mod.principal_eigenpair
    calls = []

    def inflated(op, *a, **kw):
        # a solver whose second answer is larger than the first
        pair = orig(op, *a, **kw)
        calls.append(pair.lam)
        return type(pair)(pair.lam * 10.0 ** len(calls), pair.psi, pair.residual,
                          pair.iterations)

    monkeypatch.setattr(hjb_mod, "principal_eigenpair", inflated)
    with pytest.raises(ConventionError, match="rose"):
        policy_iteration(_problem())


def test_trace_monotone_on_fine_grid():
    sol = policy_iteration(_problem(res=1601))
    tr = np.array(sol.trace)
    assert sol.converged and np.all(np.diff(tr) <= 10 * 1e-9 * tr[:-1])


def test_policy_lowers_simulated_rate(interval, unit_noise):
    prob = _problem(res=801)
    sol = policy_iteration(prob)
    lam0 = principal_eigenpair(discretize([[0.5]], unit_noise, 0.5, prob.grid)).lam
    # exits are only checked at step ends, which biases the rate low by O(sqrt(dt))
    kw = dict(diffusion=unit_noise, eps=0.5, x0=[0.0], D=interval, dt=5e-4, n=3000,
              base_seed=1)
    r_pol = estimate_exit_rate(sample_exit_times(
        PolicyDrift([[0.5]], [[1.0]], prob.grid, sol.policy.values), t_max=80.0, **kw))
    r_0 = estimate_exit_rate(sample_exit_times([[0.5]], t_max=20.0, **kw))
    assert r_pol.rate <= r_0.rate
    assert abs(r_pol.rate - sol.lam) / sol.lam <= 0.10
    assert abs(r_0.rate - lam0) / lam0 <= 0.10


def test_write_solution(tmp_path):
    prob = _problem(res=21)
    sol = policy_iteration(prob)
    paths = write_solution(sol, prob.grid, tmp_path / "ch1")
    assert [p.split("/")[-1] for p in paths] == ["ch1.json", "ch1_policy.csv", "ch1_psi.csv"]
    assert (tmp_path / "ch1_policy.csv").read_text().splitlines()[0] == "x1,u1"
