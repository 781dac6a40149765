"""Tabular semi-gradient learning of the KSMe kernel.

The kernel is parametrized as k(x, y) = <phi[x], phi[y]> and trained with
plain SGD on the squared error to a bootstrapped target computed from a
slowly refreshed copy phi_target. Immediate similarity uses the same
normalization as `metrics.immediate_similarity`, namely
1 - |r_x - r_y| / (2 s), so the learned squared distances times s
estimate d_ks at the raw reward scale.
"""

import collections
import dataclasses
import math

import numpy as np

from ksme.errors import ConfigError, DivergenceError
from ksme.mdp import make_rng

SPAN_FLOOR = 1e-12
ZERO_NORM = 1e-12


@dataclasses.dataclass
class LearnedEmbedding:
    phi: np.ndarray
    phi_target: np.ndarray

    @property
    def m(self):
        return self.phi.shape[1]

    def kernel(self):
        return self.phi @ self.phi.T

    def squared_distances(self):
        sq = np.sum(self.phi ** 2, axis=1)
        return np.clip(sq[:, None] + sq[None, :] - 2.0 * self.kernel(),
                       0.0, None)


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """SGD settings. m=None means: use the number of exact state classes."""
    m: int = None
    learning_rate: float = 0.02
    batch_size: int = 256
    target_update_period: int = 100
    total_steps: int = 20000
    seed: int = 0
    init_scale: float = 0.1
    buffer_size: int = None

    def __post_init__(self):
        for name in ("learning_rate", "init_scale"):
            if getattr(self, name) < 0 or not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite and >= 0")
        for name in ("batch_size", "target_update_period", "total_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.m is not None and self.m < 1:
            raise ConfigError("m must be >= 1")
        if self.buffer_size is not None and self.buffer_size < 1:
            raise ConfigError("buffer_size must be >= 1")

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**data)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class TransitionSample:
    x: int
    r: float
    x_next: int


def _scale(r_span):
    return max(r_span, SPAN_FLOOR) if r_span > 0 else 1.0


def ksme_target(sample_x, sample_y, emb, gamma, r_span):
    """1 - |r_x - r_y| / (2 s) + gamma * <phi_target[x'], phi_target[y']>."""
    immediate = 1.0 - abs(sample_x.r - sample_y.r) / (2.0 * _scale(r_span))
    bootstrap = float(emb.phi_target[sample_x.x_next] @
                      emb.phi_target[sample_y.x_next])
    return immediate + gamma * bootstrap


def _batch_targets(xs, rx, xn, ys, ry, yn, phi_target, gamma, r_span):
    immediate = 1.0 - np.abs(rx - ry) / (2.0 * _scale(r_span))
    bootstrap = np.einsum("bi,bi->b", phi_target[xn], phi_target[yn])
    return immediate + gamma * bootstrap


def _unpack(pairs):
    if len(pairs) == 0:
        raise ValueError("ksme_loss needs a nonempty batch")
    xs = np.array([a.x for a, _ in pairs])
    rx = np.array([a.r for a, _ in pairs], dtype=float)
    xn = np.array([a.x_next for a, _ in pairs])
    ys = np.array([b.x for _, b in pairs])
    ry = np.array([b.r for _, b in pairs], dtype=float)
    yn = np.array([b.x_next for _, b in pairs])
    return xs, rx, xn, ys, ry, yn


def ksme_loss(pairs, emb, gamma, r_span):
    """Mean of (target - <phi[x], phi[y]>)^2 over (sample_x, sample_y) pairs."""
    xs, rx, xn, ys, ry, yn = _unpack(pairs)
    targets = _batch_targets(xs, rx, xn, ys, ry, yn, emb.phi_target, gamma,
                             r_span)
    q = np.einsum("bi,bi->b", emb.phi[xs], emb.phi[ys])
    return float(np.mean((targets - q) ** 2))


def _semi_gradient(phi, xs, ys, targets):
    err = targets - np.einsum("bi,bi->b", phi[xs], phi[ys])
    coef = (-2.0 / len(xs)) * err[:, None]
    grad = np.zeros_like(phi)
    np.add.at(grad, xs, coef * phi[ys])
    np.add.at(grad, ys, coef * phi[xs])
    return grad, err


def ksme_loss_gradient(pairs, emb, gamma, r_span):
    """d ksme_loss / d phi with the target held fixed."""
    xs, rx, xn, ys, ry, yn = _unpack(pairs)
    targets = _batch_targets(xs, rx, xn, ys, ry, yn, emb.phi_target, gamma,
                             r_span)
    grad, _ = _semi_gradient(emb.phi, xs, ys, targets)
    return grad


def expected_loss(emb, chain):
    """Population ksme_loss: x, y uniform and x', y' drawn from P^pi.

    Uses E[(t - q)^2] = (E t - q)^2 + Var t per pair, so no sampling is
    involved.
    """
    p, gamma = chain.p_pi, chain.gamma
    immediate = 1.0 - chain.reward_gaps() / (2.0 * _scale(chain.r_span))
    k_bar = emb.phi_target @ emb.phi_target.T
    mean_t = immediate + gamma * (p @ k_bar @ p.T)
    second = p @ (k_bar * k_bar) @ p.T
    var_t = gamma ** 2 * np.clip(second - (p @ k_bar @ p.T) ** 2, 0.0, None)
    q = emb.phi @ emb.phi.T
    return float(np.mean((mean_t - q) ** 2 + var_t))


def initial_embedding(n_states, m, init_scale, rng):
    phi = init_scale * rng.standard_normal((n_states, m))
    return LearnedEmbedding(phi, phi.copy())


def _sample_next(cumulative, states, rng):
    u = rng.random(len(states))
    nxt = (cumulative[states] < u[:, None]).sum(axis=1)
    return np.minimum(nxt, cumulative.shape[1] - 1)


def train(chain, config, m=None, callback=None, trace="expected"):
    """Runs `config.total_steps` semi-gradient steps on `chain`.

    trace="expected" records the population loss before each step (see
    `expected_loss`); trace="batch" records the sampled minibatch loss.

    Returns:
      (LearnedEmbedding, loss trace as a float array of length total_steps)

    Raises:
      DivergenceError: as soon as any parameter becomes non-finite.
    """
    m = m or config.m
    if m is None:
        raise ConfigError("embedding dimension m is not set")
    if trace not in ("expected", "batch"):
        raise ConfigError(f"unknown trace kind {trace!r}")
    rng = make_rng(config.seed)
    n = chain.n_states
    emb = initial_embedding(n, m, config.init_scale, rng)
    r, gamma, r_span = chain.r_pi, chain.gamma, chain.r_span
    cumulative = np.cumsum(chain.p_pi, axis=1)
    buffer = (collections.deque(maxlen=config.buffer_size)
              if config.buffer_size else None)
    batch = config.batch_size
    losses = np.empty(config.total_steps)
    # overflow surfaces as DivergenceError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        for step in range(config.total_steps):
            if buffer is None:
                xs = rng.integers(n, size=batch)
                ys = rng.integers(n, size=batch)
                xn = _sample_next(cumulative, xs, rng)
                yn = _sample_next(cumulative, ys, rng)
            else:
                fresh = rng.integers(n, size=batch)
                nxt = _sample_next(cumulative, fresh, rng)
                buffer.extend(zip(fresh.tolist(), nxt.tolist()))
                stored = np.array(buffer)
                picks = rng.integers(len(stored), size=(2, batch))
                xs, xn = stored[picks[0], 0], stored[picks[0], 1]
                ys, yn = stored[picks[1], 0], stored[picks[1], 1]
            targets = _batch_targets(xs, r[xs], xn, ys, r[ys], yn,
                                     emb.phi_target, gamma, r_span)
            grad, err = _semi_gradient(emb.phi, xs, ys, targets)
            losses[step] = (expected_loss(emb, chain) if trace == "expected"
                            else float(np.mean(err ** 2)))
            emb.phi -= config.learning_rate * grad
            if not np.all(np.isfinite(emb.phi)):
                raise DivergenceError(step)
            if (step + 1) % config.target_update_period == 0:
                emb.phi_target = emb.phi.copy()
            if callback is not None:
                callback(step, emb)
    return emb, losses


def learned_distances(emb, r_span):
    """Learned estimate of d_ks at the raw reward scale."""
    return _scale(r_span) * emb.squared_distances()


def angular_distance(u, v):
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return 0.0
    return float(np.arccos(np.clip(u @ v / (nu * nv), -1.0, 1.0)))


def mico_parametrized_distance(emb, x, y, beta):
    if beta <= 0:
        raise ConfigError("beta must be > 0")
    u, v = emb.phi[x], emb.phi[y]
    return float(0.5 * (u @ u + v @ v) + beta * angular_distance(u, v))
