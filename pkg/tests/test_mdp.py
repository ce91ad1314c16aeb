import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import deterministic_policies, path_value, random_mdp, random_policy
from stlcmdp.gridworld import GridSpec, build_grid_mdp, grid_cost_table
from stlcmdp.mdp import (CmdpProblem, FiniteHorizonMdp, ShapeError, cost_of_occupancy,
                         deterministic_policy, flow_residual, occupancy_of_policy,
                         optimal_policy_dp, policy_from_occupancy, state_marginals,
                         uniform_policy, value_of_policy)
from stlcmdp.serialize import (array_from_json, array_to_json, mdp_from_json, mdp_to_json,
                               policy_from_json, policy_to_json)


def chain(H=9):
    return FiniteHorizonMdp.from_dense(np.ones((1, 1, 1)), H)


def test_zero_cost_value():
    rng = np.random.default_rng(0)
    mdp = random_mdp(rng, 3, 2, 4)
    assert value_of_policy(mdp, random_policy(rng, 4, 3, 2), np.zeros((3, 2))) == 0.0


def test_unit_cost_chain():
    assert value_of_policy(chain(), np.ones((10, 1, 1)), np.ones((1, 1))) == 10.0


def test_value_matches_path_enumeration():
    rng = np.random.default_rng(1)
    for _ in range(20):
        mdp = random_mdp(rng, 2, 2, 3, stationary=False)
        policy = random_policy(rng, 3, 2, 2)
        cost = rng.random((4, 2, 2))
        assert value_of_policy(mdp, policy, cost) == pytest.approx(path_value(mdp, policy, cost),
                                                                   abs=1e-12)


def test_dp_zero_cost_tie_break():
    mdp = random_mdp(np.random.default_rng(2), 3, 3, 2)
    policy, value = optimal_policy_dp(mdp, np.zeros((3, 3)))
    assert value == 0.0
    assert np.all(policy[..., 0] == 1.0)


def test_dp_matches_enumeration():
    rng = np.random.default_rng(3)
    for _ in range(10):
        mdp = random_mdp(rng, 2, 2, 2)
        cost = rng.random((3, 2, 2))
        _, value = optimal_policy_dp(mdp, cost)
        best = min(value_of_policy(mdp, pi, cost) for pi in deterministic_policies(2, 2, 2))
        assert value == pytest.approx(best, abs=1e-12)


def test_dp_gridworld_rests():
    spec = GridSpec(6, 6)
    mdp = build_grid_mdp(spec, 9)
    policy, value = optimal_policy_dp(mdp, grid_cost_table(spec, 9))
    assert value == 0.0
    assert np.all(policy[..., -1] == 1.0)


def test_occupancy_of_single_path():
    # 0 -> 1 -> 2 -> 2 deterministically
    kernel = np.zeros((3, 1, 3))
    kernel[0, 0, 1] = kernel[1, 0, 2] = kernel[2, 0, 2] = 1.0
    mdp = FiniteHorizonMdp.from_dense(kernel, 3)
    q = occupancy_of_policy(mdp, np.ones((4, 3, 1)))
    expected = np.zeros((4, 3, 1))
    expected[0, 0] = expected[1, 1] = expected[2, 2] = expected[3, 2] = 1.0
    assert np.array_equal(q, expected)
    assert cost_of_occupancy(q, np.ones((3, 1))) == 4.0


def test_uniform_policy_symmetric_chain():
    kernel = np.array([[[0, 1.0], [1.0, 0]], [[1.0, 0], [0, 1.0]]])
    mdp = FiniteHorizonMdp.from_dense(kernel, 4)
    q = occupancy_of_policy(mdp, uniform_policy(mdp))
    assert np.allclose(state_marginals(q)[1:], 0.5)


def test_policy_from_occupancy_rows():
    q = np.zeros((1, 2, 3))
    q[0, 0] = (0.2, 0.6, 0.2)
    policy = policy_from_occupancy(q)
    assert np.allclose(policy[0, 0], (0.2, 0.6, 0.2))
    assert np.allclose(policy[0, 1], 1 / 3)


def test_cost_of_occupancy_shape_error():
    with pytest.raises(ShapeError):
        cost_of_occupancy(np.zeros((2, 2, 2)), np.zeros((3, 2)))


def test_kernel_validation():
    with pytest.raises(ValueError):
        FiniteHorizonMdp.from_dense(np.full((2, 1, 2), 0.4), 2)
    with pytest.raises(ShapeError):
        FiniteHorizonMdp.from_dense(np.ones((2, 1, 1)), 2)
    with pytest.raises(ShapeError):
        FiniteHorizonMdp(2, 1, 2, 5, np.zeros((2, 1, 1)), np.ones((2, 1, 1)))


def test_dense_round_trip():
    rng = np.random.default_rng(4)
    mdp = random_mdp(rng, 4, 3, 3, stationary=False)
    again = FiniteHorizonMdp.from_dense(np.stack([mdp.kernel(h) for h in range(4)]), 3,
                                        mdp.initial_state, mdp.embedding)
    for h in range(4):
        assert np.array_equal(again.kernel(h), mdp.kernel(h))


def test_ge_constraint_normalization():
    rng = np.random.default_rng(5)
    mdp = random_mdp(rng, 3, 2, 3)
    d = np.zeros((4, 3, 2))
    d[3, 1] = 1.0
    problem = CmdpProblem(mdp, rng.random((3, 2)), d, 0.4, ">=").normalized()
    assert problem.direction == "<=" and problem.threshold == pytest.approx(0.6)
    policy = random_policy(rng, 3, 3, 2)
    assert value_of_policy(mdp, policy, problem.constraint) == pytest.approx(
        1 - value_of_policy(mdp, policy, d))


def test_json_round_trip():
    rng = np.random.default_rng(6)
    mdp = random_mdp(rng, 3, 2, 3, stationary=False)
    again = mdp_from_json(mdp_to_json(mdp))
    assert np.array_equal(again.succ, mdp.succ) and np.array_equal(again.prob, mdp.prob)
    policy = random_policy(rng, 3, 3, 2)
    assert np.array_equal(policy_from_json(policy_to_json(policy, {"seed": 1})), policy)
    table = rng.random((2, 3, 4))
    assert np.array_equal(array_from_json(array_to_json(table)), table)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.integers(1, 3), st.integers(0, 4))
def test_occupancy_identities(seed, S, A, H):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(rng, S, A, H, stationary=bool(rng.integers(2)))
    policy = random_policy(rng, H, S, A)
    cost = rng.random((H + 1, S, A))
    q = occupancy_of_policy(mdp, policy)
    assert cost_of_occupancy(q, cost) == pytest.approx(value_of_policy(mdp, policy, cost),
                                                       abs=1e-10)
    assert flow_residual(mdp, q) < 1e-12
    assert np.allclose(q.sum(axis=(1, 2)), 1.0, atol=1e-12)


def test_deterministic_policy_shape():
    mdp = random_mdp(np.random.default_rng(7), 2, 3, 1)
    policy = deterministic_policy(mdp, [[2, 0], [1, 1]])
    assert policy.shape == (2, 2, 3) and policy[0, 0, 2] == 1.0
