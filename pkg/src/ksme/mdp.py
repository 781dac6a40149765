"""Finite MDPs: data model, policy collapse, value solvers and Garnet MDPs.

Rewards are stored as expectations r_x^a only. Every quantity computed by
this package depends on the reward kernel only through its mean.

Random numbers come from numpy's PCG64 bit generator (O'Neill's permuted
congruential generator, 128-bit state, 64-bit output), which is portable
and stable across platforms for a given seed.
"""

import dataclasses
import json

import numpy as np

from ksme import fixed_point
from ksme.errors import (ConfigError, DegenerateGarnetError, DimensionError,
                         InvalidMdpError)

ROW_TOL = 1e-12


def make_rng(seed):
    """Returns a PCG64-backed generator for an integer seed."""
    return np.random.Generator(np.random.PCG64(seed))


def _frozen(array):
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclasses.dataclass(frozen=True)
class Mdp:
    """A finite MDP with expected rewards.

    Attributes:
      transitions: array of shape (n_states, n_actions, n_states).
      rewards: array of shape (n_states, n_actions) of expected rewards.
      gamma: discount factor in [0, 1).
    """
    transitions: np.ndarray
    rewards: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "transitions", _frozen(self.transitions))
        object.__setattr__(self, "rewards", _frozen(self.rewards))
        object.__setattr__(self, "gamma", float(self.gamma))
        t, r = self.transitions, self.rewards
        if t.ndim != 3 or t.shape[0] != t.shape[2]:
            raise DimensionError(
                f"transitions must have shape (X, A, X), got {t.shape}")
        if r.shape != t.shape[:2]:
            raise DimensionError(
                f"rewards shape {r.shape} does not match transitions "
                f"{t.shape[:2]}")

    @property
    def n_states(self):
        return self.transitions.shape[0]

    @property
    def n_actions(self):
        return self.transitions.shape[1]

    def to_dict(self):
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "gamma": self.gamma,
            "transitions": self.transitions.tolist(),
            "rewards": self.rewards.tolist(),
        }


@dataclasses.dataclass(frozen=True)
class Policy:
    probs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "probs", _frozen(self.probs))
        if self.probs.ndim != 2:
            raise DimensionError("policy probs must be a 2-d table")

    @classmethod
    def uniform(cls, n_states, n_actions):
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))

    @classmethod
    def deterministic(cls, actions, n_actions):
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros((actions.size, n_actions))
        probs[np.arange(actions.size), actions] = 1.0
        return cls(probs)

    @classmethod
    def random(cls, n_states, n_actions, seed):
        """Rows drawn from a flat Dirichlet distribution."""
        rng = make_rng(seed)
        return cls(rng.dirichlet(np.ones(n_actions), size=n_states))


@dataclasses.dataclass(frozen=True)
class InducedChain:
    """Markov reward process obtained by following a policy."""
    p_pi: np.ndarray
    r_pi: np.ndarray
    gamma: float

    def __post_init__(self):
        object.__setattr__(self, "p_pi", _frozen(self.p_pi))
        object.__setattr__(self, "r_pi", _frozen(self.r_pi))
        object.__setattr__(self, "gamma", float(self.gamma))
        n = self.r_pi.shape[0]
        if self.p_pi.shape != (n, n):
            raise DimensionError(
                f"p_pi shape {self.p_pi.shape} does not match r_pi ({n},)")

    @property
    def n_states(self):
        return self.r_pi.shape[0]

    @property
    def r_span(self):
        if self.r_pi.size == 0:
            return 0.0
        return float(np.max(self.r_pi) - np.min(self.r_pi))

    @property
    def reward_scale(self):
        """The reward span, or 1 for constant rewards."""
        span = self.r_span
        return span if span > 0.0 else 1.0

    def normalized(self):
        """Returns (chain with rewards divided by reward_scale, scale)."""
        scale = self.reward_scale
        return InducedChain(self.p_pi, self.r_pi / scale, self.gamma), scale

    def reward_gaps(self):
        """Matrix of |r_x - r_y|."""
        return np.abs(self.r_pi[:, None] - self.r_pi[None, :])


@dataclasses.dataclass(frozen=True)
class ValueFunction:
    values: np.ndarray
    kind: str  # "policy" or "optimal"

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values))

    def gaps(self):
        """Matrix of |V(x) - V(y)|."""
        return np.abs(self.values[:, None] - self.values[None, :])


@dataclasses.dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self):
        return not self.violations

    def __bool__(self):
        return self.ok


def validate_mdp(mdp):
    """Checks the MDP invariants; violations are returned, not raised."""
    violations = []
    t, r = mdp.transitions, mdp.rewards
    for x in range(mdp.n_states):
        for a in range(mdp.n_actions):
            row = t[x, a]
            total = float(row.sum())
            if abs(total - 1.0) > ROW_TOL:
                violations.append(f"row(x={x},a={a}) sums to {total:.15g}")
            if np.any(row < 0):
                y = int(np.argmin(row))
                violations.append(
                    f"row(x={x},a={a}) has negative entry {row[y]!r} at y={y}")
    bad = np.argwhere(~np.isfinite(r))
    for x, a in bad:
        violations.append(f"reward(x={x},a={a}) is not finite: {r[x, a]!r}")
    if not 0.0 <= mdp.gamma < 1.0:
        violations.append(f"gamma out of [0,1): {mdp.gamma!r}")
    return ValidationReport(tuple(violations))


def validate_policy(policy, n_states, n_actions):
    violations = []
    if policy.probs.shape != (n_states, n_actions):
        raise DimensionError(
            f"policy shape {policy.probs.shape} does not match MDP "
            f"({n_states}, {n_actions})")
    for x, row in enumerate(policy.probs):
        if abs(row.sum() - 1.0) > ROW_TOL:
            violations.append(f"policy row(x={x}) sums to {row.sum():.15g}")
        if np.any(row < 0):
            violations.append(f"policy row(x={x}) has a negative entry")
    return ValidationReport(tuple(violations))


def induce_chain(mdp, policy):
    """Collapses the MDP under `policy` into P^pi and r^pi."""
    report = validate_policy(policy, mdp.n_states, mdp.n_actions)
    if not report:
        raise InvalidMdpError(report.violations)
    probs = policy.probs
    p_pi = np.einsum("xa,xay->xy", probs, mdp.transitions)
    r_pi = np.einsum("xa,xa->x", probs, mdp.rewards)
    return InducedChain(p_pi, r_pi, mdp.gamma)


def policy_value(chain, method="direct_solve", tol=fixed_point.DEFAULT_TOL,
                 max_iter=None):
    """Solves V = r + gamma P V.

    Args:
      chain: an InducedChain.
      method: "direct_solve" (dense linear solve) or "iterate".
      tol: sup-norm tolerance for "iterate".
      max_iter: optional iteration cap for "iterate".
    """
    n = chain.n_states
    if method == "direct_solve":
        values = np.linalg.solve(np.eye(n) - chain.gamma * chain.p_pi,
                                 chain.r_pi)
    elif method == "iterate":
        p, r, g = chain.p_pi, chain.r_pi, chain.gamma
        values, _ = fixed_point.iterate(lambda v: r + g * (p @ v),
                                        np.zeros(n), g, tol, max_iter)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return ValueFunction(values, "policy")


def optimal_value(mdp, tol=fixed_point.DEFAULT_TOL, max_iter=None):
    """Value iteration on the Bellman optimality operator."""
    t, r, g = mdp.transitions, mdp.rewards, mdp.gamma

    def bellman(v):
        return np.max(r + g * (t @ v), axis=1)

    values, _ = fixed_point.iterate(bellman, np.zeros(mdp.n_states), g, tol,
                                    max_iter)
    return ValueFunction(values, "optimal")


def reward_std(chain):
    """max_x sqrt(Var_R(P_x^pi)), the one-step reward dispersion."""
    p, r = chain.p_pi, chain.r_pi
    variance = p @ (r ** 2) - (p @ r) ** 2
    return float(np.sqrt(np.max(np.clip(variance, 0.0, None))))


@dataclasses.dataclass(frozen=True)
class GarnetConfig:
    n_states: int
    n_actions: int
    branching: int
    reward_sigma_target: float
    seed: int
    gamma: float = 0.9

    def __post_init__(self):
        if self.n_states < 1 or self.n_actions < 1:
            raise ConfigError("n_states and n_actions must be positive")
        if not 1 <= self.branching <= self.n_states:
            raise ConfigError(
                f"branching {self.branching} outside [1, {self.n_states}]")
        if self.reward_sigma_target < 0:
            raise ConfigError("reward_sigma_target must be >= 0")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma out of [0,1): {self.gamma}")


def generate_garnet(config, policy=None):
    """Draws a Garnet MDP and rescales its rewards to a target dispersion.

    For every (x, a), `branching` distinct successors are chosen uniformly
    without replacement and weighted by normalized uniform(0, 1] draws.
    Rewards are uniform(-1, 1) per (x, a). The whole reward table is then
    multiplied so that max_x sqrt(Var_R(P_x^pi)) under `policy` (uniform by
    default) equals config.reward_sigma_target.

    Raises:
      DegenerateGarnetError: a positive target was requested but the drawn
        MDP has no reward dispersion at all.
    """
    n, k, b = config.n_states, config.n_actions, config.branching
    rng = make_rng(config.seed)
    transitions = np.zeros((n, k, n))
    for x in range(n):
        for a in range(k):
            successors = rng.choice(n, size=b, replace=False)
            weights = 1.0 - rng.random(b)
            transitions[x, a, successors] = weights / weights.sum()
    rewards = rng.uniform(-1.0, 1.0, size=(n, k))
    if policy is None:
        policy = Policy.uniform(n, k)
    unscaled = induce_chain(Mdp(transitions, rewards, config.gamma), policy)
    sigma = reward_std(unscaled)
    target = float(config.reward_sigma_target)
    if target == 0.0:
        rewards = np.zeros_like(rewards)
    elif sigma == 0.0:
        raise DegenerateGarnetError(
            "reward dispersion is exactly zero; cannot rescale to "
            f"sigma={target}")
    else:
        rewards = rewards * (target / sigma)
    return Mdp(transitions, rewards, config.gamma)


def mdp_from_dict(data):
    """Builds and validates an Mdp from the JSON schema."""
    try:
        n, k = int(data["n_states"]), int(data["n_actions"])
        transitions = np.asarray(data["transitions"], dtype=float)
        rewards = np.asarray(data["rewards"], dtype=float)
        gamma = float(data["gamma"])
    except (KeyError, TypeError, ValueError) as err:
        raise InvalidMdpError([f"malformed MDP document: {err}"]) from err
    if transitions.shape != (n, k, n) or rewards.shape != (n, k):
        raise InvalidMdpError([
            f"declared sizes ({n}, {k}) do not match arrays "
            f"{transitions.shape}, {rewards.shape}"])
    mdp = Mdp(transitions, rewards, gamma)
    report = validate_mdp(mdp)
    if not report:
        raise InvalidMdpError(report.violations)
    return mdp


def load_mdp(path):
    try:
        with open(path) as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as err:
        raise InvalidMdpError([f"{path}: {err}"]) from err
    if not isinstance(data, dict):
        raise InvalidMdpError([f"{path}: top level must be a JSON object"])
    return mdp_from_dict(data)


def save_mdp(mdp, path):
    with open(path, "w") as f:
        json.dump(mdp.to_dict(), f, indent=1)


def policy_from_spec(spec, n_states, n_actions):
    """Parses 'uniform', 'random:<seed>' or a JSON file holding a table."""
    if spec is None or spec == "uniform":
        return Policy.uniform(n_states, n_actions)
    try:
        if spec.startswith("random:"):
            return Policy.random(n_states, n_actions,
                                 int(spec.split(":", 1)[1]))
        with open(spec) as f:
            data = json.load(f)
        probs = data["probs"] if isinstance(data, dict) else data
        policy = Policy(probs)
    except (OSError, ValueError, KeyError, TypeError) as err:
        raise ConfigError(f"bad policy spec {spec!r}: {err}") from err
    report = validate_policy(policy, n_states, n_actions)
    if not report.ok:
        raise ConfigError("; ".join(report.violations))
    return policy


def bellman_residual(chain, values):
    """Sup-norm residual of V against the policy Bellman equation."""
    v = np.asarray(values)
    return float(np.max(np.abs(chain.r_pi + chain.gamma * chain.p_pi @ v - v)))


def value_bound(chain):
    """max|r| / (1 - gamma), the a-priori bound on |V|."""
    if chain.r_pi.size == 0:
        return 0.0
    return float(np.max(np.abs(chain.r_pi))) / (1.0 - chain.gamma)

