import json

import numpy as np
import pytest

from conftest import chain_of, garnet
from ksme import mdp as mdp_lib
from ksme.errors import (ConfigError, DegenerateGarnetError, DimensionError,
                         InvalidMdpError, NonConvergenceError)


def test_valid_two_state_mdp(self_loop):
    assert mdp_lib.validate_mdp(self_loop).ok


def test_row_sum_violation_names_index():
    t = np.array([[[0.5, 0.4]], [[0.0, 1.0]]])
    # bypass the constructor check to feed validate_mdp a broken instance
    bad = object.__new__(mdp_lib.Mdp)
    object.__setattr__(bad, "transitions", t)
    object.__setattr__(bad, "rewards", np.zeros((2, 1)))
    object.__setattr__(bad, "gamma", 0.9)
    report = mdp_lib.validate_mdp(bad)
    assert not report.ok
    assert any("row(x=0,a=0) sums to 0.9" in v for v in report.violations)


def test_gamma_one_is_a_violation():
    bad = object.__new__(mdp_lib.Mdp)
    object.__setattr__(bad, "transitions", np.ones((1, 1, 1)))
    object.__setattr__(bad, "rewards", np.zeros((1, 1)))
    object.__setattr__(bad, "gamma", 1.0)
    report = mdp_lib.validate_mdp(bad)
    assert any("gamma out of [0,1)" in v for v in report.violations)


def test_single_action_chain_equals_transitions(self_loop):
    chain = chain_of(self_loop)
    assert np.array_equal(chain.p_pi, self_loop.transitions[:, 0, :])


def test_two_action_average_reward():
    mdp = mdp_lib.Mdp(np.ones((1, 2, 1)), np.array([[0.0, 1.0]]), 0.9)
    assert chain_of(mdp).r_pi[0] == pytest.approx(0.5)


def test_deterministic_policy_selects_rows():
    mdp = garnet(6, k=3, b=3, seed=4)
    actions = [2, 0, 1, 1, 0, 2]
    chain = chain_of(mdp, mdp_lib.Policy.deterministic(actions, 3))
    for x, a in enumerate(actions):
        assert np.array_equal(chain.p_pi[x], mdp.transitions[x, a])


def test_policy_shape_mismatch(self_loop):
    with pytest.raises(DimensionError):
        mdp_lib.induce_chain(self_loop, mdp_lib.Policy.uniform(2, 3))


def test_self_loop_value(self_loop):
    v = mdp_lib.policy_value(chain_of(self_loop)).values
    assert v[1] == pytest.approx(10.0, abs=1e-12)


def test_zero_rewards_zero_value():
    mdp = garnet(5, sigma=0.0)
    assert np.all(mdp_lib.policy_value(chain_of(mdp)).values == 0.0)


def test_deterministic_cycle_value():
    mdp = mdp_lib.Mdp(np.array([[[0.0, 1.0]], [[1.0, 0.0]]]),
                      np.array([[0.0], [1.0]]), 0.9)
    v = mdp_lib.policy_value(chain_of(mdp)).values
    assert v == pytest.approx([0.9 / 0.19, 1 / 0.19], abs=1e-12)


def test_direct_and_iterate_agree():
    for seed in range(5):
        chain = chain_of(garnet(10, k=3, seed=seed))
        a = mdp_lib.policy_value(chain, "direct_solve").values
        b = mdp_lib.policy_value(chain, "iterate", tol=1e-10).values
        assert np.max(np.abs(a - b)) <= 1e-8


def test_iterate_cap_raises():
    chain = chain_of(garnet(5, gamma=0.99, sigma=1.0))
    with pytest.raises(NonConvergenceError) as info:
        mdp_lib.policy_value(chain, "iterate", tol=1e-12, max_iter=3)
    assert info.value.last_residual > 0


def test_optimal_value_examples(self_loop):
    v_pi = mdp_lib.policy_value(chain_of(self_loop)).values
    v_star = mdp_lib.optimal_value(self_loop).values
    assert np.max(np.abs(v_pi - v_star)) <= 1e-9
    mdp = mdp_lib.Mdp(np.ones((1, 2, 1)), np.array([[0.0, 1.0]]), 0.9)
    assert mdp_lib.optimal_value(mdp).values[0] == pytest.approx(10.0, abs=1e-9)
    flat = mdp_lib.Mdp(np.full((3, 2, 3), 1 / 3), np.full((3, 2), 0.4), 0.9)
    assert mdp_lib.optimal_value(flat).values == pytest.approx([4.0] * 3,
                                                               abs=1e-9)


def test_optimal_dominates_policy_values():
    mdp = garnet(8, k=3, seed=2)
    v_star = mdp_lib.optimal_value(mdp).values
    for seed in range(5):
        policy = mdp_lib.Policy.random(8, 3, seed)
        v = mdp_lib.policy_value(chain_of(mdp, policy)).values
        assert np.all(v <= v_star + 1e-9)


def test_value_magnitude_bound():
    mdp = garnet(10, sigma=1.0, seed=3)
    v = mdp_lib.policy_value(chain_of(mdp)).values
    assert np.max(np.abs(v)) <= np.max(np.abs(mdp.rewards)) / 0.1 + 1e-9


def test_garnet_deterministic_and_branching():
    cfg = mdp_lib.GarnetConfig(12, 3, 4, 0.5, 77)
    a, b = mdp_lib.generate_garnet(cfg), mdp_lib.generate_garnet(cfg)
    assert np.array_equal(a.transitions, b.transitions)
    assert np.array_equal(a.rewards, b.rewards)
    assert np.all((a.transitions > 0).sum(axis=2) == 4)
    assert mdp_lib.validate_mdp(a).ok


def test_garnet_full_branching_and_sigma():
    mdp = mdp_lib.generate_garnet(mdp_lib.GarnetConfig(6, 2, 6, 0.3, 1))
    assert np.all(mdp.transitions > 0)
    assert mdp_lib.reward_std(chain_of(mdp)) == pytest.approx(0.3, abs=1e-9)


def test_garnet_sigma_zero_constant_rewards():
    chain = chain_of(garnet(7, sigma=0.0))
    assert np.ptp(chain.r_pi) == 0.0


def test_garnet_sigma_under_given_policy():
    policy = mdp_lib.Policy.random(9, 3, 5)
    mdp = mdp_lib.generate_garnet(mdp_lib.GarnetConfig(9, 3, 3, 0.7, 2),
                                  policy)
    assert mdp_lib.reward_std(chain_of(mdp, policy)) == pytest.approx(
        0.7, abs=1e-9)


def test_garnet_config_errors():
    with pytest.raises(ConfigError):
        mdp_lib.GarnetConfig(3, 1, 4, 0.5, 0)
    with pytest.raises(ConfigError):
        mdp_lib.GarnetConfig(3, 1, 1, -0.5, 0)


def test_degenerate_garnet():
    # one successor per (x, a) and one action: every next state is a Dirac
    with pytest.raises(DegenerateGarnetError):
        mdp_lib.generate_garnet(mdp_lib.GarnetConfig(4, 1, 1, 0.5, 0))


def test_induce_chain_rows_stochastic():
    for seed in range(5):
        chain = chain_of(garnet(15, k=4, b=5, seed=seed),
                         mdp_lib.Policy.random(15, 4, seed))
        assert np.max(np.abs(chain.p_pi.sum(axis=1) - 1.0)) <= 1e-12


def test_json_round_trip(tmp_path, self_loop):
    path = tmp_path / "m.json"
    mdp_lib.save_mdp(self_loop, path)
    back = mdp_lib.load_mdp(path)
    assert np.array_equal(back.transitions, self_loop.transitions)
    assert back.gamma == self_loop.gamma


def test_load_rejects_bad_rows(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n_states": 1, "n_actions": 1, "gamma": 0.5,
                                "transitions": [[[0.5]]], "rewards": [[0]]}))
    with pytest.raises(InvalidMdpError):
        mdp_lib.load_mdp(path)


def test_load_rejects_malformed_json(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{oops")
    with pytest.raises(InvalidMdpError):
        mdp_lib.load_mdp(path)


def test_policy_specs():
    assert mdp_lib.policy_from_spec("uniform", 3, 2).probs[0, 0] == 0.5
    a = mdp_lib.policy_from_spec("random:4", 3, 2).probs
    b = mdp_lib.policy_from_spec("random:4", 3, 2).probs
    assert np.array_equal(a, b)
    with pytest.raises(ConfigError):
        mdp_lib.policy_from_spec("random:x", 3, 2)


def test_normalized_chain_has_unit_span():
    chain = chain_of(garnet(6, sigma=0.4, seed=9))
    normalized, scale = chain.normalized()
    assert scale == pytest.approx(chain.r_span)
    assert normalized.r_span == pytest.approx(1.0)
