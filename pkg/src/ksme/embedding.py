"""Euclidean realizations of the KSMe distance.

`spectral_embed` turns the solved kernel into explicit features whose
squared Euclidean distances reproduce d_ks. `jl_project` compresses them
with a Gaussian random projection and `distortion_check` measures how far
the projection strays from the exact distances.
"""

import dataclasses
import math

import numpy as np
from scipy.cluster.hierarchy import DisjointSet

from ksme.errors import ConfigError, DimensionError, NotPSDError
from ksme.mdp import make_rng

MERGE_TOL = 1e-8
EIGEN_CLAMP = 1e-10
NEGATIVE_EIGEN_LIMIT = 1e-6
EMBEDDING_KINDS = ("spectral_exact", "jl_projected", "learned")


@dataclasses.dataclass(frozen=True)
class QuotientMap:
    class_of: tuple
    n_classes: int

    def members(self, c):
        return [x for x, k in enumerate(self.class_of) if k == c]

    def representatives(self):
        """Smallest state index of each class, in class order."""
        reps = [None] * self.n_classes
        for x, c in enumerate(self.class_of):
            if reps[c] is None:
                reps[c] = x
        return reps


@dataclasses.dataclass(frozen=True)
class FeatureEmbedding:
    features: np.ndarray
    class_of: tuple
    kind: str

    def __post_init__(self):
        if self.kind not in EMBEDDING_KINDS:
            raise ValueError(f"unknown embedding kind {self.kind!r}")

    @property
    def dim(self):
        return self.features.shape[1]

    def squared_distances(self):
        f = self.features
        sq = np.sum(f * f, axis=1)
        return np.clip(sq[:, None] + sq[None, :] - 2.0 * (f @ f.T), 0.0, None)


@dataclasses.dataclass(frozen=True)
class DistortionReport:
    epsilon_requested: float
    m: int
    max_over: float
    max_under: float

    @property
    def passed(self):
        return self.max_over <= self.epsilon_requested and \
            self.max_under <= self.epsilon_requested


def quotient_states(d, merge_tol=MERGE_TOL):
    """Classes are the connected components of {d(x, y) <= merge_tol}."""
    values = d.values if hasattr(d, "values") else np.asarray(d, dtype=float)
    n = values.shape[0]
    sets = DisjointSet(range(n))
    close_x, close_y = np.nonzero(np.triu(values <= merge_tol, 1))
    for x, y in zip(close_x.tolist(), close_y.tolist()):
        sets.merge(x, y)
    label, class_of = {}, []
    for x in range(n):
        root = sets[x]
        if root not in label:
            label[root] = len(label)
        class_of.append(label[root])
    return QuotientMap(tuple(class_of), len(label))


def spectral_embed(k, quotient=None):
    """Features f_c with ||f_i - f_j||^2 = d_ks between class representatives.

    A KernelMatrix that carries a reward scale s yields features of s * K,
    so distances come out at the raw reward scale.
    """
    values = k.values if hasattr(k, "values") else np.asarray(k, dtype=float)
    scale = getattr(k, "reward_scale", 1.0)
    n = values.shape[0]
    if quotient is None:
        quotient = QuotientMap(tuple(range(n)), n)
    if len(quotient.class_of) != n:
        raise DimensionError("quotient does not match the kernel size")
    reps = quotient.representatives()
    gram = scale * values[np.ix_(reps, reps)]
    eigvals, eigvecs = np.linalg.eigh(0.5 * (gram + gram.T))
    top = float(eigvals[-1]) if eigvals.size else 0.0
    if top <= 0.0:
        features = np.zeros((len(reps), 1))
        return FeatureEmbedding(features, quotient.class_of, "spectral_exact")
    if eigvals[0] < -NEGATIVE_EIGEN_LIMIT * top:
        raise NotPSDError(
            f"kernel eigenvalue {eigvals[0]:.3e} below "
            f"-{NEGATIVE_EIGEN_LIMIT:g} * lambda_max")
    keep = eigvals > EIGEN_CLAMP * top
    features = eigvecs[:, keep] * np.sqrt(eigvals[keep])
    return FeatureEmbedding(features[:, ::-1].copy(), quotient.class_of,
                            "spectral_exact")


def jl_dimension(n_classes, epsilon):
    if not 0.0 < epsilon < 1.0:
        raise ConfigError(f"epsilon must lie in (0, 1), got {epsilon}")
    if n_classes < 1:
        raise ConfigError("n_classes must be >= 1")
    return max(1, math.ceil(8.0 * math.log(n_classes) / epsilon ** 2))


def projection_matrix(m, dim, seed):
    """G / sqrt(m) with G an m x dim standard normal matrix."""
    return make_rng(seed).standard_normal((m, dim)) / math.sqrt(m)


def jl_project(emb, m, seed, projection=None):
    """Random linear projection of `emb` to `m` dimensions.

    `projection` overrides the seeded Gaussian map (test hook); it must be
    an (m, emb.dim) matrix and is applied without rescaling.
    """
    if m < 1:
        raise ConfigError("m must be >= 1")
    if projection is None:
        projection = projection_matrix(m, emb.dim, seed)
    projection = np.asarray(projection, dtype=float)
    if projection.shape != (m, emb.dim):
        raise DimensionError(
            f"projection has shape {projection.shape}, expected {(m, emb.dim)}")
    return FeatureEmbedding(emb.features @ projection.T, emb.class_of,
                            "jl_projected")


def distortion_check(original, projected, quotient, epsilon,
                     merge_tol=MERGE_TOL):
    d = original.values if hasattr(original, "values") else np.asarray(original)
    reps = quotient.representatives()
    exact = d[np.ix_(reps, reps)]
    approx = projected.squared_distances()
    iu, ju = np.triu_indices(len(reps), 1)
    exact, approx = exact[iu, ju], approx[iu, ju]
    usable = exact > merge_tol
    if not np.any(usable):
        return DistortionReport(epsilon, projected.dim, 0.0, 0.0)
    ratio = approx[usable] / exact[usable]
    return DistortionReport(epsilon, projected.dim,
                            float(np.max(ratio - 1.0)),
                            float(np.max(1.0 - ratio)))
