"""Behavioural metrics on finite MDPs and their fixed-point solvers.

Covers the bisimulation metric, the pi-bisimulation metric, the MICo
distance U^pi and its reduction, and the kernel similarity kernel k^pi with
its induced distance (KSMe).

Reward scale. The kernel operator measures immediate similarity as
1 - |r_x - r_y| / (2 s), where s is the chain's reward span (1 when all
rewards agree). Its induced semimetric then carries the reward term
|r_x - r_y| / s, i.e. it equals the reduced MICo distance of the rewards
divided by s. `ksme_distance` multiplies by s again, so it returns d_ks at
the raw reward scale where it coincides with the reduced MICo distance of
the raw rewards.
"""

import dataclasses
import time

import numpy as np

from ksme import fixed_point, probability
from ksme.errors import DimensionError, NonConvergenceError, SizeError
from ksme.fixed_point import DEFAULT_TOL, FixedPointReport

DIRECT_SOLVE_MAX_STATES = 64
KINDS = ("bisim", "pi_bisim", "mico", "reduced_mico", "ksme")


@dataclasses.dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    kind: str

    @property
    def zero_diag(self):
        return self.kind != "mico"

    @property
    def n_states(self):
        return self.values.shape[0]


@dataclasses.dataclass(frozen=True)
class KernelMatrix:
    """Kernel on states; `reward_scale` is the divisor used for rewards."""
    values: np.ndarray
    gamma: float
    reward_scale: float = 1.0


def _square(u, n, name):
    u = np.asarray(u, dtype=float)
    if u.shape != (n, n):
        raise DimensionError(f"{name} has shape {u.shape}, expected {(n, n)}")
    return u


def _symmetrize(u):
    return 0.5 * (u + u.T)


# --- MICo -------------------------------------------------------------------


def mico_apply(u, chain):
    """T_M(U)(x, y) = |r_x - r_y| + gamma * (P U P^T)(x, y)."""
    u = _square(u, chain.n_states, "u")
    p = chain.p_pi
    return chain.reward_gaps() + chain.gamma * (p @ u @ p.T)


def _direct_pair_solve(chain, rhs):
    """Solves X = rhs + gamma P X P^T as a dense |X|^2 linear system."""
    n = chain.n_states
    if n > DIRECT_SOLVE_MAX_STATES:
        raise SizeError(
            f"direct_solve supports at most {DIRECT_SOLVE_MAX_STATES} states")
    p = chain.p_pi
    system = np.eye(n * n) - chain.gamma * np.kron(p, p)
    return np.linalg.solve(system, rhs.ravel()).reshape(n, n)


def mico_fixed_point(chain, tol=DEFAULT_TOL, method="iterate", max_iter=None):
    """MICo distance U^pi.

    Returns:
      (DistanceMatrix of kind "mico", FixedPointReport)
    """
    n = chain.n_states
    if method == "direct_solve":
        start = time.perf_counter()
        u = _symmetrize(_direct_pair_solve(chain, chain.reward_gaps()))
        residual = float(np.max(np.abs(mico_apply(u, chain) - u)))
        report = FixedPointReport(1, residual, residual <= tol,
                                  time.perf_counter() - start)
    elif method == "iterate":
        u, report = fixed_point.iterate(lambda x: mico_apply(x, chain),
                                        np.zeros((n, n)), chain.gamma, tol,
                                        max_iter)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DistanceMatrix(np.maximum(u, 0.0), "mico"), report


def reduce(u):
    """Reduced MICo: U(x, y) - (U(x, x) + U(y, y)) / 2, zero diagonal."""
    values = u.values if isinstance(u, DistanceMatrix) else np.asarray(u)
    diag = np.diag(values)
    reduced = values - 0.5 * (diag[:, None] + diag[None, :])
    reduced = _symmetrize(reduced)
    np.fill_diagonal(reduced, 0.0)
    return DistanceMatrix(reduced, "reduced_mico")


# --- Kernel similarity ------------------------------------------------------


def immediate_similarity(chain):
    """1 - |r_x - r_y| / (2 s) with s the reward span (1 if rewards agree)."""
    return 1.0 - chain.reward_gaps() / (2.0 * chain.reward_scale)


def kernel_apply(k, chain):
    """T_k(k)(x, y) = immediate similarity + gamma * (P k P^T)(x, y)."""
    k = _square(k, chain.n_states, "k")
    p = chain.p_pi
    return immediate_similarity(chain) + chain.gamma * (p @ k @ p.T)


def kernel_fixed_point(chain, tol=DEFAULT_TOL, method="iterate",
                       max_iter=None):
    """The unique fixed point k^pi of the kernel similarity operator.

    Returns:
      (KernelMatrix, FixedPointReport)
    """
    n = chain.n_states
    if method == "direct_solve":
        start = time.perf_counter()
        k = _symmetrize(_direct_pair_solve(chain, immediate_similarity(chain)))
        residual = float(np.max(np.abs(kernel_apply(k, chain) - k)))
        report = FixedPointReport(1, residual, residual <= tol,
                                  time.perf_counter() - start)
    elif method == "iterate":
        k, report = fixed_point.iterate(lambda x: kernel_apply(x, chain),
                                        np.zeros((n, n)), chain.gamma, tol,
                                        max_iter)
        k = _symmetrize(k)
    else:
        raise ValueError(f"unknown method {method!r}")
    return KernelMatrix(k, chain.gamma, chain.reward_scale), report


def ksme_distance(k):
    """KSMe: reward_scale * (k(x,x) + k(y,y) - 2 k(x,y)), clamped at 0."""
    values = k.values if isinstance(k, KernelMatrix) else np.asarray(k)
    scale = k.reward_scale if isinstance(k, KernelMatrix) else 1.0
    return DistanceMatrix(scale * probability.semimetric_from_kernel(values),
                          "ksme")


def decomposition_residual(k, chain):
    """Sup-norm gap in d(x,y) = |r_x - r_y| / s + gamma * MMD^2(P_x, P_y).

    Everything is evaluated at the kernel's own (normalized) reward scale.
    """
    kv = k.values if isinstance(k, KernelMatrix) else np.asarray(k)
    scale = chain.reward_scale
    induced = probability.semimetric_from_kernel(kv)
    p = chain.p_pi
    embedded = p @ kv @ p.T
    diag = np.diag(embedded)
    mmd_sq = diag[:, None] + diag[None, :] - 2.0 * embedded
    rhs = chain.reward_gaps() / scale + chain.gamma * mmd_sq
    return float(np.max(np.abs(induced - rhs)))


def lockstep_iterates(chain, n_steps):
    """Yields (n, k_n, U_n) for the kernel and MICo iterations from zero.

    Both operators act on the chain with rewards divided by its reward
    scale so that the induced distances of k_n and the reductions of U_n
    refer to the same reward term.
    """
    normalized, _ = chain.normalized()
    n = chain.n_states
    k = np.zeros((n, n))
    u = np.zeros((n, n))
    yield 0, k, u
    for step in range(1, n_steps + 1):
        k = kernel_apply(k, normalized)
        u = mico_apply(u, normalized)
        yield step, k, u


# --- Kantorovich-based metrics ----------------------------------------------


class _PairTransport:
    """Optimal-transport lifting of a ground metric between state pairs.

    Caches per-pair supports and simplex bases so that repeated solves with
    slowly changing costs are warm started.
    """

    def __init__(self, dists):
        # dists: array (m, n) of next-state distributions, one per "row".
        self.dists = dists
        self.supports = [np.flatnonzero(row > 0) for row in dists]
        self.bases = {}

    def solve(self, key, a, b, d):
        """Optimal value and sparse plan for coupling rows a and b."""
        sa, sb = self.supports[a], self.supports[b]
        cost = d[np.ix_(sa, sb)]
        value, plan, basis = probability.transport(
            self.dists[a, sa], self.dists[b, sb], cost, self.bases.get(key))
        self.bases[key] = basis
        rows, cols = np.nonzero(plan)
        return value, sa[rows], sb[cols], plan[rows, cols]


def _pair_index(n):
    """Maps ordered pairs to unordered off-diagonal pair ids (-1 on diagonal)."""
    index = -np.ones((n, n), dtype=int)
    iu, ju = np.triu_indices(n, 1)
    index[iu, ju] = np.arange(iu.size)
    index[ju, iu] = np.arange(iu.size)
    return index, iu, ju


def _stall(d, tol):
    """Improvement below which a policy-iteration round counts as no change."""
    return min(tol, 1e-12 * (1.0 + float(np.max(np.abs(d)))))


def _solve_for_couplings(n, gamma, immediate, couplings, index):
    """Solves d = immediate + gamma * sum lambda d for fixed couplings."""
    m = index.max() + 1
    system = np.eye(m)
    for pid, (xs, ys, w) in enumerate(couplings):
        cols = index[xs, ys]
        keep = cols >= 0
        np.add.at(system[pid], cols[keep], -gamma * w[keep])
    rhs = immediate
    sol = np.linalg.solve(system, rhs)
    d = np.zeros((n, n))
    iu, ju = np.triu_indices(n, 1)
    d[iu, ju] = sol
    d[ju, iu] = sol
    return d


def _wasserstein_apply(d, rows, gamma, gaps, lifter, action_of=None):
    """F(d) for each unordered pair, with the per-pair optimal couplings."""
    n = d.shape[0]
    iu, ju = np.triu_indices(n, 1)
    out = np.zeros((n, n))
    couplings = []
    for pid, (x, y) in enumerate(zip(iu, ju)):
        a = 0 if action_of is None else action_of[pid]
        w, xs, ys, mass = lifter.solve((x, y, a), rows(x, a), rows(y, a), d)
        out[x, y] = out[y, x] = gaps[a][x, y] + gamma * w
        couplings.append((xs, ys, mass))
    return out, couplings


def _pi_bisim_policy_iteration(chain, tol, start=None, max_rounds=500):
    n = chain.n_states
    gamma = chain.gamma
    gaps = [chain.reward_gaps()]
    lifter = _PairTransport(chain.p_pi)
    index, iu, ju = _pair_index(n)

    def rows(x, a):
        return x

    d = np.zeros((n, n)) if start is None else start
    for rounds in range(1, max_rounds + 1):
        new, couplings = _wasserstein_apply(d, rows, gamma, gaps, lifter)
        if rounds > 1 and np.max(d - new) <= _stall(d, tol):
            return d, rounds
        d = _solve_for_couplings(n, gamma, gaps[0][iu, ju], couplings, index)
    raise NonConvergenceError("coupling policy iteration did not terminate")


def _finish(operator, d, gamma, tol, start, rounds):
    """Polishes a policy-iteration result with plain iteration and reports."""
    try:
        d, report = fixed_point.iterate(operator, d, gamma, tol)
    except NonConvergenceError as err:
        err.report = dataclasses.replace(
            err.report, iterations=err.report.iterations + rounds,
            wall_time=time.perf_counter() - start)
        raise
    return d, FixedPointReport(report.iterations + rounds,
                               report.final_residual, report.converged,
                               time.perf_counter() - start)


def pi_bisim_apply(d, chain, lifter=None):
    """F^pi(d)(x, y) = |r_x - r_y| + gamma * W(d)(P_x, P_y)."""
    d = _square(d, chain.n_states, "d")
    lifter = lifter or _PairTransport(chain.p_pi)
    out, _ = _wasserstein_apply(d, lambda x, a: x, chain.gamma,
                                [chain.reward_gaps()], lifter)
    return out


def pi_bisim_fixed_point(chain, tol=DEFAULT_TOL, method="policy_iteration",
                         max_iter=None):
    """pi-bisimulation metric d^pi.

    method "iterate" is plain value iteration of F^pi from zero. The default
    "policy_iteration" alternates exact linear solves for fixed couplings
    with coupling improvement (one Kantorovich problem per pair), which
    terminates in finitely many rounds, then confirms the fixed point with
    further applications of F^pi until the a-posteriori error is <= tol.
    """
    start = time.perf_counter()
    n = chain.n_states
    lifter = _PairTransport(chain.p_pi)

    def operator(d):
        return pi_bisim_apply(d, chain, lifter)

    if method == "iterate":
        d, report = fixed_point.iterate(operator, np.zeros((n, n)),
                                        chain.gamma, tol, max_iter)
    elif method == "policy_iteration":
        d, rounds = _pi_bisim_policy_iteration(chain, tol)
        d, report = _finish(operator, d, chain.gamma, tol, start, rounds)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DistanceMatrix(np.maximum(d, 0.0), "pi_bisim"), report


def bisim_apply(d, mdp, lifter=None):
    """F(d)(x, y) = max_a |r_x^a - r_y^a| + gamma * W(d)(P_x^a, P_y^a)."""
    d = _square(d, mdp.n_states, "d")
    n, k = mdp.n_states, mdp.n_actions
    lifter = lifter or _PairTransport(mdp.transitions.reshape(n * k, n))
    values, _ = _bisim_action_values(d, mdp, lifter)
    return np.max(values, axis=0)


def _bisim_action_values(d, mdp, lifter):
    n, k = mdp.n_states, mdp.n_actions
    gaps = [np.abs(mdp.rewards[:, a][:, None] - mdp.rewards[:, a][None, :])
            for a in range(k)]
    values = np.zeros((k, n, n))
    couplings = []
    for a in range(k):
        action_of = np.full(n * (n - 1) // 2, a)
        values[a], c = _wasserstein_apply(
            d, lambda x, b: x * k + b, mdp.gamma, gaps, lifter, action_of)
        couplings.append(c)
    return values, couplings


def _bisim_strategy_iteration(mdp, tol, max_rounds=500):
    """Hoffman-Karp iteration for the max-over-actions, min-over-couplings
    fixed point: solve the coupling (minimizer) problem exactly for a fixed
    action choice per pair, then re-choose actions greedily."""
    n, k, gamma = mdp.n_states, mdp.n_actions, mdp.gamma
    lifter = _PairTransport(mdp.transitions.reshape(n * k, n))
    index, iu, ju = _pair_index(n)
    gaps = [np.abs(mdp.rewards[:, a][:, None] - mdp.rewards[:, a][None, :])
            for a in range(k)]

    def rows(x, a):
        return x * k + a

    d = np.zeros((n, n))
    values, _ = _bisim_action_values(d, mdp, lifter)
    action_of = np.argmax(values[:, iu, ju], axis=0)
    total = 0
    for _ in range(max_rounds):
        # inner: coupling policy iteration for the fixed action choice
        immediate = np.array([gaps[a][x, y]
                              for a, x, y in zip(action_of, iu, ju)])
        for inner in range(max_rounds):
            new, couplings = _wasserstein_apply(d, rows, gamma, gaps, lifter,
                                                action_of)
            total += 1
            if inner > 0 and np.max(d - new) <= _stall(d, tol):
                break
            d = _solve_for_couplings(n, gamma, immediate, couplings, index)
        else:
            raise NonConvergenceError("inner coupling iteration stalled")
        values, _ = _bisim_action_values(d, mdp, lifter)
        pair_values = values[:, iu, ju]
        current = pair_values[action_of, np.arange(iu.size)]
        best = np.argmax(pair_values, axis=0)
        improve = pair_values[best, np.arange(iu.size)] > current + _stall(
            d, tol)
        if not np.any(improve):
            return d, total
        action_of = np.where(improve, best, action_of)
    raise NonConvergenceError("action strategy iteration did not terminate")


def bisim_fixed_point(mdp, tol=DEFAULT_TOL, method="policy_iteration",
                      max_iter=None):
    """Bisimulation metric d_~ (max over actions of reward gap + gamma W)."""
    start = time.perf_counter()
    n, k = mdp.n_states, mdp.n_actions
    lifter = _PairTransport(mdp.transitions.reshape(n * k, n))

    def operator(d):
        return bisim_apply(d, mdp, lifter)

    if method == "iterate":
        d, report = fixed_point.iterate(operator, np.zeros((n, n)),
                                        mdp.gamma, tol, max_iter)
    elif method == "policy_iteration":
        d, rounds = _bisim_strategy_iteration(mdp, tol)
        d, report = _finish(operator, d, mdp.gamma, tol, start, rounds)
    else:
        raise ValueError(f"unknown method {method!r}")
    return DistanceMatrix(np.maximum(d, 0.0), "bisim"), report
