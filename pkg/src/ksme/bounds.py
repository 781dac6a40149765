"""Value-difference bounds for behavioural metrics and Garnet gap statistics."""

import dataclasses
import math

import numpy as np

from ksme import mdp as mdp_lib
from ksme import metrics
from ksme.errors import DegenerateGarnetError
from ksme.fixed_point import DEFAULT_TOL

GAP_KINDS = ("ksme", "pi_bisim", "mico")
BOUND_TOL = 1e-8


@dataclasses.dataclass(frozen=True)
class DeltaSeries:
    """values[n, x] = expected reward gap of two trajectories from x that
    share their first n steps and then branch for one independent step."""
    values: np.ndarray
    gamma: float
    tail_bound: float

    @property
    def n_max(self):
        return self.values.shape[0] - 1

    def discounted_sums(self):
        """sum_n gamma^n Delta_n(x) over the stored horizon."""
        weights = self.gamma ** np.arange(self.values.shape[0])
        return weights @ self.values

    def additive_term(self):
        """Pairwise additive slack, including the truncated tail."""
        s = self.discounted_sums()
        return 0.5 * (s[:, None] + s[None, :]) + self.tail_bound


def truncation_depth(chain, tol=DEFAULT_TOL):
    """Smallest horizon whose analytic tail bound is below tol."""
    span, gamma = chain.r_span, chain.gamma
    if span == 0.0 or gamma == 0.0:
        return 0
    target = tol * (1.0 - gamma) / span
    if target >= 1.0:
        return 0
    return max(0, int(math.ceil(math.log(target) / math.log(gamma))))


def delta_n(chain, n_max=None, tol=DEFAULT_TOL):
    """Delta_n(x) for n = 0..n_max via Delta_{n+1} = P Delta_n."""
    if n_max is None:
        n_max = truncation_depth(chain, tol)
    p = chain.p_pi
    first = np.einsum("xa,ab,xb->x", p, chain.reward_gaps(), p)
    values = np.zeros((n_max + 1, chain.n_states))
    values[0] = first
    for n in range(n_max):
        values[n + 1] = p @ values[n]
    tail = chain.gamma ** (n_max + 1) * chain.r_span / (1.0 - chain.gamma)
    return DeltaSeries(values, chain.gamma, tail)


def delta_n_by_powers(chain, n):
    """Delta_n from the n-step distribution (P^n) directly."""
    first = np.einsum("xa,ab,xb->x", chain.p_pi, chain.reward_gaps(),
                      chain.p_pi)
    return np.linalg.matrix_power(chain.p_pi, n) @ first


def reward_variance(chain):
    """Var of r^pi(X') for X' ~ P_x^pi, per state x."""
    p, r = chain.p_pi, chain.r_pi
    mean = p @ r
    return np.clip(p @ r ** 2 - mean ** 2, 0.0, None)


@dataclasses.dataclass(frozen=True)
class BoundReport:
    name: str
    max_violation: float
    passed: bool
    worst_pair: tuple = None


def _off_diagonal_max(excess):
    n = excess.shape[0]
    if n < 2:
        return 0.0, None
    masked = excess.copy()
    np.fill_diagonal(masked, -np.inf)
    flat = int(np.argmax(masked))
    return float(masked.flat[flat]), divmod(flat, n)


def value_bound_check(distance, values, name="value_bound", tol=BOUND_TOL):
    """Checks |V(x) - V(y)| <= d(x, y) for all pairs."""
    d = distance.values if hasattr(distance, "values") else np.asarray(distance)
    v = values.values if hasattr(values, "values") else np.asarray(values)
    excess = np.abs(v[:, None] - v[None, :]) - d
    worst, pair = _off_diagonal_max(excess)
    return BoundReport(name, worst, worst <= tol, pair)


def theorem16_check(chain, pi_u, v, deltas, tol=BOUND_TOL):
    """|V(x) - V(y)| <= PiU(x, y) + (sum_n gamma^n (D_n(x) + D_n(y))) / 2."""
    d = pi_u.values if hasattr(pi_u, "values") else np.asarray(pi_u)
    vals = v.values if hasattr(v, "values") else np.asarray(v)
    excess = np.abs(vals[:, None] - vals[None, :]) - d - deltas.additive_term()
    worst, pair = _off_diagonal_max(excess)
    return BoundReport("theorem16", worst, worst <= tol, pair)


@dataclasses.dataclass(frozen=True)
class DispersionReport:
    sigma: float
    max_delta_excess: float
    max_global_excess: float
    passed: bool


def prop17_check(deltas, variances, pi_u=None, v=None, tol=BOUND_TOL):
    """Delta_n(x) <= sqrt(2) sigma, and optionally the global value bound
    |V(x) - V(y)| <= PiU(x, y) + sqrt(2) sigma / (1 - gamma)."""
    sigma = float(np.sqrt(np.max(variances))) if np.size(variances) else 0.0
    delta_excess = float(np.max(deltas.values)) - math.sqrt(2.0) * sigma
    global_excess = -math.inf
    if pi_u is not None and v is not None:
        d = pi_u.values if hasattr(pi_u, "values") else np.asarray(pi_u)
        vals = v.values if hasattr(v, "values") else np.asarray(v)
        slack = math.sqrt(2.0) * sigma / (1.0 - deltas.gamma)
        global_excess, _ = _off_diagonal_max(
            np.abs(vals[:, None] - vals[None, :]) - d - slack)
    passed = delta_excess <= 1e-10 and global_excess <= tol
    return DispersionReport(sigma, delta_excess, global_excess, passed)


# --- Gap statistics ----------------------------------------------------------


@dataclasses.dataclass(frozen=True)
class GapStats:
    """min/mean of d(x, y) - |V(x) - V(y)| over unordered pairs x != y."""
    min_gap: dict
    mean_gap: dict
    sigma: float


def solve_distances(chain, which=GAP_KINDS, tol=DEFAULT_TOL):
    """Distance matrices (raw reward scale) for the requested kinds."""
    out = {}
    if "ksme" in which or "reduced_mico" in which:
        kernel, _ = metrics.kernel_fixed_point(chain, tol)
        out["ksme"] = metrics.ksme_distance(kernel)
    if "mico" in which or "reduced_mico" in which:
        u, _ = metrics.mico_fixed_point(chain, tol)
        out["mico"] = u
        out["reduced_mico"] = metrics.reduce(u)
    if "pi_bisim" in which:
        out["pi_bisim"], _ = metrics.pi_bisim_fixed_point(chain, tol)
    return {kind: out[kind] for kind in which}


def gap_stats(source, which=GAP_KINDS, policy=None, tol=DEFAULT_TOL):
    """Gap statistics for an MDP (under `policy`) or a chain."""
    if isinstance(source, mdp_lib.Mdp):
        policy = policy or mdp_lib.Policy.uniform(source.n_states,
                                                  source.n_actions)
        chain = mdp_lib.induce_chain(source, policy)
    else:
        chain = source
    v = mdp_lib.policy_value(chain).values
    value_gaps = np.abs(v[:, None] - v[None, :])
    iu, ju = np.triu_indices(chain.n_states, 1)
    distances = solve_distances(chain, which, tol)
    mins, means = {}, {}
    for kind in which:
        gaps = (distances[kind].values - value_gaps)[iu, ju]
        mins[kind] = float(gaps.min()) if gaps.size else 0.0
        means[kind] = float(gaps.mean()) if gaps.size else 0.0
    return GapStats(mins, means, mdp_lib.reward_std(chain))


# --- Counterexample search ---------------------------------------------------


@dataclasses.dataclass(frozen=True)
class ValueGapWitness:
    trial: int
    seed: int
    mdp: mdp_lib.Mdp
    pair: tuple
    gap: float


def prop4_search(n_trials=2000, n_states=10, n_actions=(1, 4),
                 branching=(2, 4), sigma=0.5, gamma=0.9, seed=0,
                 threshold=1e-6, tol=DEFAULT_TOL):
    """Looks for a Garnet where d_ks(x, y) < |V(x) - V(y)| - threshold.

    Trial t uses seed `seed ^ t` for both its shape and its Garnet, so
    the result does not depend on the order in which trials are run.

    Returns:
      the first ValueGapWitness, or None.
    """
    for trial in range(n_trials):
        trial_seed = seed ^ trial
        rng = mdp_lib.make_rng(trial_seed)
        k = int(rng.integers(n_actions[0], n_actions[1] + 1))
        b = int(rng.integers(branching[0], min(branching[1], n_states) + 1))
        config = mdp_lib.GarnetConfig(n_states, k, b, sigma,
                                      int(rng.integers(2 ** 63)), gamma)
        try:
            mdp = mdp_lib.generate_garnet(config)
        except DegenerateGarnetError:
            continue
        chain = mdp_lib.induce_chain(
            mdp, mdp_lib.Policy.uniform(n_states, k))
        kernel, _ = metrics.kernel_fixed_point(chain, tol)
        d = metrics.ksme_distance(kernel).values
        v = mdp_lib.policy_value(chain).values
        gaps = d - np.abs(v[:, None] - v[None, :])
        np.fill_diagonal(gaps, np.inf)
        flat = int(np.argmin(gaps))
        if gaps.flat[flat] < -threshold:
            pair = divmod(flat, n_states)
            return ValueGapWitness(trial, trial_seed, mdp, pair,
                                float(gaps.flat[flat]))
    return None
