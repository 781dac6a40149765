import math

import numpy as np
import pytest

from conftest import chain_of, garnet
from ksme import bounds, metrics
from ksme import mdp as mdp_lib


def branch_chain():
    """State 0 splits evenly between absorbing states with rewards 0 and 1."""
    p = np.array([[0, .5, .5], [0, 1, 0], [0, 0, 1.]])
    return mdp_lib.InducedChain(p, np.array([0.5, 0.0, 1.0]), 0.9)


def test_delta_deterministic_is_zero(self_loop):
    assert np.all(bounds.delta_n(chain_of(self_loop), 10).values == 0.0)


def test_delta_half_half_branch():
    assert bounds.delta_n(branch_chain(), 0).values[0, 0] == pytest.approx(0.5)


def test_delta_constant_rewards(identical_states):
    assert np.all(bounds.delta_n(chain_of(identical_states), 5).values == 0.0)


def test_delta_recursion_matches_powers():
    for seed in range(3):
        chain = chain_of(garnet(10, seed=seed))
        series = bounds.delta_n(chain, 5)
        for n in range(6):
            assert np.max(np.abs(series.values[n] -
                                 bounds.delta_n_by_powers(chain, n))) <= 1e-10


def test_delta_range_and_tail():
    chain = chain_of(garnet(10, seed=3, sigma=1.0))
    series = bounds.delta_n(chain)
    assert series.values.min() >= 0.0
    assert series.values.max() <= chain.r_span + 1e-12
    assert series.tail_bound <= 1e-10
    assert series.tail_bound == pytest.approx(
        0.9 ** (series.n_max + 1) * chain.r_span / 0.1)


def test_truncation_depth_default():
    chain = chain_of(garnet(6, seed=4))
    expected = math.ceil(math.log(1e-10 * 0.1 / chain.r_span) / math.log(0.9))
    assert bounds.truncation_depth(chain, 1e-10) == expected


def test_truncated_sum_monotone_in_depth():
    chain = chain_of(garnet(8, seed=5))
    previous = None
    for n_max in range(0, 30, 3):
        series = bounds.delta_n(chain, n_max)
        total = series.discounted_sums()
        if previous is not None:
            prev_total, prev_tail = previous
            assert np.all(total >= prev_total - 1e-15)
            assert np.all(total - prev_total <= prev_tail + 1e-12)
        previous = (total, series.tail_bound)


def test_reward_variance_examples(self_loop, identical_states):
    assert np.all(bounds.reward_variance(chain_of(self_loop)) == 0.0)
    assert bounds.reward_variance(branch_chain())[0] == pytest.approx(0.25)
    assert np.all(bounds.reward_variance(chain_of(identical_states)) == 0.0)


def test_additive_bound_deterministic_reduces(self_loop):
    chain = chain_of(self_loop)
    u, _ = metrics.mico_fixed_point(chain)
    series = bounds.delta_n(chain)
    assert np.all(series.values == 0.0)
    v = mdp_lib.policy_value(chain)
    report = bounds.theorem16_check(chain, metrics.reduce(u), v, series)
    assert report.passed
    assert report.max_violation <= 1e-8


def test_additive_bound_uniform_jump(uniform_jump):
    chain = chain_of(uniform_jump)
    u, _ = metrics.mico_fixed_point(chain)
    pi_u = metrics.reduce(u)
    assert pi_u.values[0, 1] == pytest.approx(1.0, abs=1e-9)
    v = mdp_lib.policy_value(chain)
    assert abs(v.values[0] - v.values[1]) == pytest.approx(1.0, abs=1e-12)
    assert bounds.theorem16_check(chain, pi_u, v, bounds.delta_n(chain)).passed


def test_additive_bound_counterexample():
    # single-action, branching-2 Garnet where the additive bound fails by ~1.24
    chain = chain_of(garnet(8, k=1, b=2, seed=7, sigma=1.0))
    u, _ = metrics.mico_fixed_point(chain)
    v = mdp_lib.policy_value(chain)
    report = bounds.theorem16_check(chain, metrics.reduce(u), v,
                                    bounds.delta_n(chain))
    assert report.max_violation > 1.0
    # the MICo bound itself still holds
    assert bounds.value_bound_check(u, v).passed


def test_mico_self_distance_uses_independent_trajectories():
    # U(x,x) = sum_{n>=1} gamma^n E|r(X_n) - r(Y_n)| with X, Y independent
    # from x, which can exceed sum_n gamma^n Delta_n(x)
    chain = chain_of(garnet(8, k=1, b=2, seed=7, sigma=1.0))
    u, _ = metrics.mico_fixed_point(chain)
    p, gaps = chain.p_pi, chain.reward_gaps()
    step, total = np.eye(8), np.zeros(8)
    for n in range(1, 600):
        step = step @ p
        total += chain.gamma ** n * np.einsum("xa,ab,xb->x", step, gaps, step)
    assert np.max(np.abs(total - np.diag(u.values))) <= 1e-9
    assert np.any(total > bounds.delta_n(chain).discounted_sums() + 0.1)


def test_dispersion_bound_examples(self_loop):
    chain = chain_of(self_loop)
    report = bounds.prop17_check(bounds.delta_n(chain),
                                 bounds.reward_variance(chain))
    assert report.sigma == 0.0 and report.passed
    chain = branch_chain()
    report = bounds.prop17_check(bounds.delta_n(chain, 0),
                                 bounds.reward_variance(chain))
    assert report.sigma == pytest.approx(0.5)
    assert 0.5 <= math.sqrt(2) * 0.5
    assert report.passed


def test_dispersion_bound_random_garnets_with_global_bound():
    for seed in range(25):
        chain = chain_of(garnet(8, k=2, seed=seed, sigma=0.7))
        u, _ = metrics.mico_fixed_point(chain)
        report = bounds.prop17_check(bounds.delta_n(chain),
                                     bounds.reward_variance(chain),
                                     metrics.reduce(u),
                                     mdp_lib.policy_value(chain))
        assert report.passed


def test_gap_stats_identical(identical_states):
    stats = bounds.gap_stats(identical_states)
    for kind in bounds.GAP_KINDS:
        assert stats.min_gap[kind] == pytest.approx(0.0, abs=1e-9)
        assert stats.mean_gap[kind] == pytest.approx(0.0, abs=1e-9)


def test_gap_stats_self_loop(self_loop):
    stats = bounds.gap_stats(self_loop)
    for kind in bounds.GAP_KINDS:
        assert stats.min_gap[kind] == pytest.approx(0.0, abs=1e-8)


def test_gap_stats_signs():
    for seed in range(5):
        stats = bounds.gap_stats(garnet(10, k=2, seed=seed, sigma=1.0))
        assert stats.min_gap["mico"] >= -1e-8
        assert stats.min_gap["pi_bisim"] >= -1e-8
        for kind in bounds.GAP_KINDS:
            assert stats.mean_gap[kind] >= stats.min_gap[kind]


def test_gap_stats_accepts_chain():
    mdp = garnet(6, seed=2)
    a = bounds.gap_stats(mdp)
    b = bounds.gap_stats(chain_of(mdp))
    assert a.min_gap == b.min_gap


def test_value_gap_witness_deterministic_garnets_give_no_witness():
    # branching 1 with one action: deterministic chains, so sigma must be 0
    assert bounds.prop4_search(n_trials=30, n_actions=(1, 1), branching=(1, 1),
                               sigma=0.0, seed=3) is None


def test_value_gap_witness_witness_is_reproducible_and_reverified():
    first = bounds.prop4_search(n_trials=200, seed=1)
    assert first is not None
    again = bounds.prop4_search(n_trials=200, seed=1)
    assert again.trial == first.trial and again.pair == first.pair
    chain = chain_of(first.mdp)
    u, _ = metrics.mico_fixed_point(chain, method="direct_solve")
    x, y = first.pair
    v = mdp_lib.policy_value(chain, "iterate").values
    assert metrics.reduce(u).values[x, y] < abs(v[x] - v[y]) - 1e-6
