"""
Kernel mean embeddings (KME), kernel derivative Gramian embeddings (KDGE)
and the maximum mean discrepancy between embedded clouds.

Reductions over particles follow a fixed order: rows are summed left to
right inside blocks of BLOCK_SIZE particles, and block sums are combined
by a pairwise tree. For n <= BLOCK_SIZE this is a plain left to right sum.
"""

from dataclasses import dataclass

import numpy as np

from sobolev_descent.errors import ParameterError
from sobolev_descent.features import (
    check_points, phase, phi_batch, sample_feature_map
)

BLOCK_SIZE = 4096
MAX_FEATURES = 2048


@dataclass(eq=False)
class ParticleSet:
    """
    A cloud of n points in dimension d, one particle per row.

    :param points: array of shape (n, d)
    """
    points: np.ndarray

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64)
        if points.ndim == 1:
            points = points[:, None]
        if points.ndim != 2 or points.shape[0] < 1 or points.shape[1] < 1:
            raise ParameterError(
                f"A particle set needs shape (n, d) with n, d >= 1, got {points.shape}")
        if not np.all(np.isfinite(points)):
            raise ParameterError("Particle coordinates must be finite")
        self.points = points

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    def copy(self):
        return ParticleSet(self.points.copy())

    def __len__(self):
        return self.n

    def __repr__(self):
        return f"ParticleSet(n={self.n}, d={self.d})"


@dataclass(frozen=True, eq=False)
class KmeVec:
    """Kernel mean embedding mu(nu) = E phi(x), vector of length m."""
    mu: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.mu, dtype=dtype)

    def __len__(self):
        return len(self.mu)


@dataclass(frozen=True, eq=False)
class KdgeMat:
    """Kernel derivative Gramian embedding D(nu) = E J(x)^T J(x), (m, m)."""
    D: np.ndarray

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.D, dtype=dtype)

    @property
    def shape(self):
        return self.D.shape


def _points_of(fm, ps):
    points = ps.points if isinstance(ps, ParticleSet) else ps
    return check_points(fm, points)


def tree_sum(terms):
    """
    Pairwise sum of a list of equally shaped arrays.

    Adjacent terms are added level by level, so the order of the additions
    only depends on len(terms).
    """
    terms = list(terms)
    if not terms:
        raise ParameterError("Cannot sum an empty list of terms")
    while len(terms) > 1:
        paired = [terms[i] + terms[i + 1] for i in range(0, len(terms) - 1, 2)]
        if len(terms) % 2:
            paired.append(terms[-1])
        terms = paired
    return terms[0]


def block_reduce(block_fn, X, block_size=BLOCK_SIZE):
    """
    Sum block_fn over consecutive row blocks of X with the documented
    reduction tree.

    :param block_fn: callable mapping a (k, d) block to its summed
     contribution
    :param X: array of shape (n, d)
    """
    blocks = [block_fn(X[start:start + block_size])
              for start in range(0, X.shape[0], block_size)]
    return tree_sum(blocks)


def _row_sum(values):
    # np.add.reduce along axis 0 adds the rows one after the other
    return np.add.reduce(values, axis=0)


def kme(fm, ps):
    """
    Empirical kernel mean embedding (1/n) sum_i phi(x_i).

    :param fm: FeatureMap
    :param ps: ParticleSet or array of shape (n, d)
    :return: KmeVec
    """
    X = _points_of(fm, ps)
    total = block_reduce(lambda block: _row_sum(phi_batch(fm, block)), X)
    return KmeVec(total / X.shape[0])


def kdge(fm, ps, max_features=MAX_FEATURES):
    """
    Empirical kernel derivative Gramian embedding
    (1/n) sum_i J(x_i)^T J(x_i).

    Since J(x)[a, j] = -c sin(z_j) W[j, a] with z = W x + b,
    (J^T J)[j, k] = c^2 sin(z_j) sin(z_k) (W W^T)[j, k], the sum is
    computed as the Hadamard product of W W^T with the Gram matrix of the
    sines.

    :param fm: FeatureMap
    :param ps: ParticleSet or array of shape (n, d)
    :param max_features: largest m for which the dense (m, m) matrix is built
    :return: KdgeMat
    """
    if fm.dim_features > max_features:
        raise ParameterError(
            f"m={fm.dim_features} exceeds the dense KDGE cap of {max_features} features")
    X = _points_of(fm, ps)

    def sines_gram(block):
        s = np.sin(phase(fm, block))
        return s.T @ s

    gram = block_reduce(sines_gram, X) / X.shape[0]
    D = fm.scale**2 * (fm.W @ fm.W.T) * gram
    # exact symmetry, the two triangles come from different BLAS paths
    D = 0.5 * (D + D.T)
    return KdgeMat(D)


def mmd2(mu_p, mu_q):
    """
    Squared maximum mean discrepancy |mu_p - mu_q|^2.

    :param mu_p: KmeVec or vector
    :param mu_q: KmeVec or vector of the same length
    """
    mu_p = np.asarray(mu_p, dtype=np.float64)
    mu_q = np.asarray(mu_q, dtype=np.float64)
    if mu_p.shape != mu_q.shape or mu_p.ndim != 1:
        raise ParameterError(
            f"Embeddings must be vectors of equal length, got {mu_p.shape} and {mu_q.shape}")
    delta = mu_p - mu_q
    return float(np.dot(delta, delta))


def mmd2_particles(fm, ps_p, ps_q):
    """MMD^2 between two particle clouds under the feature map fm."""
    return mmd2(kme(fm, ps_p), kme(fm, ps_q))


def bandwidth_sweep(ps_p, ps_q, sigmas, m=300, seed=0):
    """
    MMD^2 between two clouds for a range of rbf bandwidths.

    Each bandwidth gets its own feature map drawn from the evaluation
    stream, independent from the features of any descent.

    :param sigmas: iterable of positive bandwidths
    :param m: number of random features of the evaluation kernel
    :param seed: seed of the evaluation stream
    :return: list of (sigma, mmd2) tuples
    """
    d = ps_p.d if isinstance(ps_p, ParticleSet) else np.shape(ps_p)[-1]
    results = []
    for sigma in sigmas:
        fm = sample_feature_map(d, m, sigma, seed, purpose="eval_features")
        results.append((float(sigma), mmd2_particles(fm, ps_p, ps_q)))
    return results
