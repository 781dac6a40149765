"""Runnable invariant suite used by `ksme check`.

Each check returns a CheckResult. `fault` names a solver to corrupt on
purpose so the failure path of the suite can itself be tested.
"""

import dataclasses
import itertools

import numpy as np

from ksme import bounds, embedding, learning, metrics, probability
from ksme import mdp as mdp_lib
from ksme.errors import DegenerateGarnetError, NotPSDError

SCALES = {"small": {"mdps": 6, "states": (4, 12), "pairs": 20, "ot": 40},
          "full": {"mdps": 60, "states": (5, 30), "pairs": 100, "ot": 200}}
FAULTS = (None, "kernel")


@dataclasses.dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str


def _garnets(seed, count, states, sigma=0.5):
    for i in range(count):
        rng = mdp_lib.make_rng([seed, i])
        n = int(rng.integers(states[0], states[1] + 1))
        k = int(rng.integers(1, 5))
        b = int(rng.integers(1, min(n, 4) + 1))
        gamma = float(rng.choice([0.5, 0.9]))
        try:
            mdp = mdp_lib.generate_garnet(
                mdp_lib.GarnetConfig(n, k, b, sigma, int(rng.integers(2**32)),
                                     gamma))
        except DegenerateGarnetError:
            continue
        yield mdp, mdp_lib.induce_chain(mdp, mdp_lib.Policy.uniform(n, k))


class _Solvers:
    def __init__(self, fault):
        self.fault = fault

    def kernel(self, chain):
        k, report = metrics.kernel_fixed_point(chain)
        if self.fault == "kernel":
            values = k.values.copy()
            values[0, -1] += 0.1
            values[-1, 0] += 0.1
            k = metrics.KernelMatrix(values, k.gamma, k.reward_scale)
        return k


def _result(name, worst, limit):
    return CheckResult(name, bool(worst <= limit),
                       f"max {worst:.3e} (limit {limit:.0e})")


def run_checks(seed=0, scale="small", fault=None):
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {sorted(SCALES)}")
    if fault not in FAULTS:
        raise ValueError(f"fault must be one of {FAULTS}")
    cfg = SCALES[scale]
    solve = _Solvers(fault)
    rng = mdp_lib.make_rng(seed)
    worst = dict.fromkeys(
        ("equivalence", "decomposition", "value_mico", "value_pi_bisim",
         "value_bisim", "additive", "dispersion", "contraction", "lockstep",
         "spectral", "delta_recursion"), 0.0)
    tol = 1e-10
    for mdp, chain in _garnets(seed, cfg["mdps"], cfg["states"]):
        k = solve.kernel(chain)
        d_ks = metrics.ksme_distance(k).values
        u, _ = metrics.mico_fixed_point(chain, tol)
        pi_u = metrics.reduce(u).values
        worst["equivalence"] = max(worst["equivalence"],
                                   float(np.max(np.abs(d_ks - pi_u))))
        worst["decomposition"] = max(worst["decomposition"],
                                     metrics.decomposition_residual(k, chain))
        v = mdp_lib.policy_value(chain)
        v_star = mdp_lib.optimal_value(mdp, tol)
        d_pi, _ = metrics.pi_bisim_fixed_point(chain, tol)
        d_b, _ = metrics.bisim_fixed_point(mdp, tol)
        for key, dist, vals in (("value_mico", u, v),
                                ("value_pi_bisim", d_pi, v),
                                ("value_bisim", d_b, v_star)):
            worst[key] = max(worst[key],
                             bounds.value_bound_check(dist, vals).max_violation)
        deltas = bounds.delta_n(chain)
        worst["additive"] = max(worst["additive"], bounds.theorem16_check(
            chain, pi_u, v, deltas).max_violation)
        p17 = bounds.prop17_check(deltas, bounds.reward_variance(chain),
                                  pi_u, v)
        worst["dispersion"] = max(worst["dispersion"], p17.max_delta_excess,
                              p17.max_global_excess)
        n = chain.n_states
        for _ in range(cfg["pairs"]):
            a, b = rng.normal(size=(2, n, n)) * 5
            a, b = a + a.T, b + b.T
            gap = float(np.max(np.abs(a - b)))
            for op in (metrics.kernel_apply, metrics.mico_apply):
                lhs = float(np.max(np.abs(op(a, chain) - op(b, chain))))
                worst["contraction"] = max(worst["contraction"],
                                           lhs - chain.gamma * gap)
        for _, kn, un in metrics.lockstep_iterates(chain, 20):
            diff = probability.semimetric_from_kernel(kn) - metrics.reduce(
                un).values
            worst["lockstep"] = max(worst["lockstep"],
                                    float(np.max(np.abs(diff))))
        q = embedding.quotient_states(d_ks)
        try:
            emb = embedding.spectral_embed(k, q)
        except NotPSDError:
            worst["spectral"] = np.inf
        else:
            reps = q.representatives()
            worst["spectral"] = max(worst["spectral"], float(np.max(np.abs(
                emb.squared_distances() - d_ks[np.ix_(reps, reps)]))))
        for step in range(6):
            worst["delta_recursion"] = max(
                worst["delta_recursion"], float(np.max(np.abs(
                    deltas.values[step] - bounds.delta_n_by_powers(chain, step)
                ))) if step <= deltas.n_max else 0.0)
    results = [
        _result("ksme equals reduced MICo", worst["equivalence"], 5 * tol),
        _result("kernel decomposition residual", worst["decomposition"],
                3 * tol),
        _result("|dV| <= MICo", worst["value_mico"], 1e-8),
        _result("|dV| <= pi-bisimulation", worst["value_pi_bisim"], 1e-8),
        _result("|dV*| <= bisimulation", worst["value_bisim"], 1e-8),
        _result("additive value bound", worst["additive"], 1e-8),
        _result("dispersion bound", worst["dispersion"], 1e-8),
        _result("operator contraction", worst["contraction"], 1e-12),
        _result("lockstep iterates", worst["lockstep"], 1e-10),
        _result("spectral embedding", worst["spectral"], 1e-8),
        _result("delta recursion", worst["delta_recursion"], 1e-10),
    ]
    results.extend(_probability_checks(rng, cfg["ot"]))
    results.append(_gradient_check(rng))
    results.append(_jl_linearity(rng))
    return results


def _probability_checks(rng, count):
    ot_err, mmd_err = 0.0, 0.0
    for _ in range(count):
        p, q = rng.integers(1, 5, size=2)
        mu, nu = rng.dirichlet(np.ones(p)), rng.dirichlet(np.ones(q))
        cost = rng.random((p, q))
        value, _, _ = probability.transport(mu, nu, cost)
        oracle = min(float(np.sum(v * cost))
                     for v in probability.enumerate_vertices(mu, nu))
        ot_err = max(ot_err, abs(value - oracle))
        n = int(rng.integers(2, 7))
        x = rng.normal(size=(n, 3))
        k = np.exp(-np.sum((x[:, None] - x[None]) ** 2, axis=2))
        rho = probability.semimetric_from_kernel(k)
        a, b = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
        mmd_err = max(mmd_err, abs(probability.mmd_squared(a, b, k) -
                                   probability.energy_distance(a, b, rho)))
    return [_result("transport matches vertex oracle", ot_err, 1e-9),
            _result("MMD^2 equals energy distance", mmd_err, 1e-10)]


def _gradient_check(rng, h=1e-6):
    n, m = 4, 3
    phi = rng.normal(size=(n, m))
    emb = learning.LearnedEmbedding(phi, rng.normal(size=(n, m)))
    pairs = [(learning.TransitionSample(int(x), float(rx), int(xn)),
              learning.TransitionSample(int(y), float(ry), int(yn)))
             for x, y, xn, yn, rx, ry in zip(
                 rng.integers(n, size=8), rng.integers(n, size=8),
                 rng.integers(n, size=8), rng.integers(n, size=8),
                 rng.random(8), rng.random(8))]
    grad = learning.ksme_loss_gradient(pairs, emb, 0.9, 1.0)
    numeric = np.zeros_like(phi)
    for i, j in itertools.product(range(n), range(m)):
        for sign in (1, -1):
            shifted = phi.copy()
            shifted[i, j] += sign * h
            numeric[i, j] += sign * learning.ksme_loss(
                pairs, learning.LearnedEmbedding(shifted, emb.phi_target),
                0.9, 1.0)
    numeric /= 2 * h
    rel = float(np.max(np.abs(grad - numeric)) /
                max(1e-12, float(np.max(np.abs(numeric)))))
    return _result("semi-gradient vs finite differences", rel, 1e-5)


def _jl_linearity(rng):
    a, b = rng.normal(size=(2, 5, 4))
    ea = embedding.FeatureEmbedding(a, tuple(range(5)), "spectral_exact")
    eb = embedding.FeatureEmbedding(b, tuple(range(5)), "spectral_exact")
    es = embedding.FeatureEmbedding(a + b, tuple(range(5)), "spectral_exact")
    pa, pb, ps = (embedding.jl_project(e, 7, 3).features for e in (ea, eb, es))
    return _result("projection is linear",
                   float(np.max(np.abs(ps - (pa + pb)))), 1e-12)


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'PASS' if r.passed else 'FAIL'}  {r.name:<{width}}  {r.detail}"
             for r in results]
    return "\n".join(lines)
