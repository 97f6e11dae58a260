"""
Random Fourier features.

The finite dimensional RKHS used by the kernel descent is spanned by the
features

    phi_j(x) = c * cos(<w_j, x> + b_j),   j = 1 ... m

with w_j ~ N(0, I / sigma**2) and b_j ~ U[0, 2 pi). With c = sqrt(2 / m),
<phi(x), phi(y)> is an unbiased estimate of the Gaussian kernel
exp(-|x - y|**2 / (2 sigma**2)).
"""

from dataclasses import dataclass

import numpy as np

from sobolev_descent.errors import ParameterError
from sobolev_descent.streams import box_muller, make_stream


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """
    Frozen random Fourier feature parameters.

    :param W: frequencies, array of shape (m, d)
    :param b: phases, array of shape (m,)
    :param sigma: kernel bandwidth
    :param scale: output scaling constant c
    """
    W: np.ndarray
    b: np.ndarray
    sigma: float
    scale: float

    def __post_init__(self):
        W = np.array(self.W, dtype=np.float64, ndmin=2)
        b = np.array(self.b, dtype=np.float64, ndmin=1)

        if W.ndim != 2 or W.shape[0] < 1 or W.shape[1] < 1:
            raise ParameterError(f"W must be a non empty (m, d) matrix, got {W.shape}")
        if b.shape != (W.shape[0],):
            raise ParameterError(
                f"b must have length m={W.shape[0]}, got shape {b.shape}")
        if not self.sigma > 0:
            raise ParameterError(f"sigma must be > 0, got {self.sigma}")
        if not self.scale > 0:
            raise ParameterError(f"scale must be > 0, got {self.scale}")

        W.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "sigma", float(self.sigma))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim_features(self):
        return self.W.shape[0]

    @property
    def dim_input(self):
        return self.W.shape[1]

    def __repr__(self):
        return (
            f"FeatureMap(d={self.dim_input}, m={self.dim_features}, "
            f"sigma={self.sigma:g}, scale={self.scale:g})"
        )


def sample_feature_map(d, m, sigma, seed, normalize=True, purpose="features"):
    """
    Draw a feature map.

    :param d: input dimension
    :param m: number of features
    :param sigma: bandwidth, the frequencies have standard deviation 1/sigma
    :param seed: 64-bit seed
    :param normalize: True for c = sqrt(2/m), False for the raw
     convention c = 1
    :param purpose: random stream, "eval_features" for the independent
     evaluation kernel
    :return: FeatureMap
    """
    if int(d) != d or d < 1:
        raise ParameterError(f"d must be a positive integer, got {d}")
    if int(m) != m or m < 1:
        raise ParameterError(f"m must be a positive integer, got {m}")
    if not sigma > 0:
        raise ParameterError(f"sigma must be > 0, got {sigma}")
    d, m = int(d), int(m)

    rng = make_stream(seed, purpose)
    W = box_muller(rng, (m, d)) / sigma
    b = 2.0 * np.pi * rng.random(m)
    scale = np.sqrt(2.0 / m) if normalize else 1.0

    return FeatureMap(W=W, b=b, sigma=sigma, scale=scale)


def check_points(fm, X):
    """
    Return X as a float64 array of shape (n, d).

    A single point of shape (d,) is accepted and promoted to (1, d).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != fm.dim_input:
        raise ParameterError(
            f"Points must have dimension d={fm.dim_input}, got shape {X.shape}")
    return X


def _check_point(fm, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (fm.dim_input,):
        raise ParameterError(
            f"x must be a vector of length d={fm.dim_input}, got shape {x.shape}")
    return x


def phase(fm, X):
    """Arguments <w_j, x_i> + b_j, array of shape (n, m)."""
    return X @ fm.W.T + fm.b


def phi(fm, x):
    """
    Feature vector of a single point.

    :param fm: FeatureMap
    :param x: vector of length d
    :return: vector of length m, entries in [-c, c]
    """
    x = _check_point(fm, x)
    return fm.scale * np.cos(fm.W @ x + fm.b)


def phi_batch(fm, X):
    """Features of every row of X, array of shape (n, m)."""
    X = check_points(fm, X)
    return fm.scale * np.cos(phase(fm, X))


def jacobian(fm, x):
    """
    Jacobian of the feature map at x.

    Entry (a, j) is -c sin(<w_j, x> + b_j) W[j, a], so that the gradient of
    f(x) = <u, phi(x)> is jacobian(fm, x) @ u.

    :param fm: FeatureMap
    :param x: vector of length d
    :return: array of shape (d, m)
    """
    x = _check_point(fm, x)
    s = np.sin(fm.W @ x + fm.b)
    return -fm.scale * (fm.W * s[:, None]).T


def jacobian_batch(fm, X):
    """Jacobians of every row of X, array of shape (n, d, m)."""
    X = check_points(fm, X)
    s = np.sin(phase(fm, X))
    return -fm.scale * np.einsum("nj,ja->naj", s, fm.W)


def gradient_field(fm, u, X):
    """
    Gradients of f(x) = <u, phi(x)> at every row of X.

    Equivalent to jacobian_batch(fm, X) @ u without forming the Jacobians.

    :param u: coefficient vector of length m
    :return: array of shape (n, d)
    """
    X = check_points(fm, X)
    u = np.asarray(u, dtype=np.float64)
    if u.shape != (fm.dim_features,):
        raise ParameterError(
            f"u must have length m={fm.dim_features}, got shape {u.shape}")
    s = np.sin(phase(fm, X))
    return -fm.scale * ((s * u) @ fm.W)


def gaussian_kernel(x, y, sigma):
    """
    Exact Gaussian kernel exp(-|x - y|^2 / (2 sigma^2)).

    Used to check the random feature approximation.
    """
    diff = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(np.exp(-np.dot(diff, diff) / (2.0 * sigma**2)))
