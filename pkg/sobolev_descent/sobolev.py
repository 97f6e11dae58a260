"""
Regularized kernel Sobolev critic.

For a target embedding mu_p and a current cloud q with embeddings
mu_q and D = D(q), the critic coefficients solve

    (D + lam I) u = delta,   delta = mu_p - mu_q

and the regularized kernel Sobolev discrepancy is
rksd2 = <delta, u> = |(D + lam I)^(-1/2) delta|^2.
The eigendecomposition D = sum_j lam_j d_j d_j^T gives the principal
transport directions: u = sum_j <d_j, delta> / (lam_j + lam) d_j.
"""

from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy import linalg

from sobolev_descent.errors import NumericalError, ParameterError
from sobolev_descent.features import check_points, gradient_field, phi

JITTER_START = 1e-12
JITTER_ESCALATIONS = 3
EIGEN_CLAMP = 1e-12


@dataclass(frozen=True, eq=False)
class CriticCoeffs:
    """
    Coefficients of the Sobolev critic u(x) = <u, phi(x)>.

    :param u: coefficient vector of length m
    :param lam: Tikhonov regularization lambda > 0
    :param delta_norm2: |delta|^2, i.e. the MMD^2 the critic was built from
    :param jitter: diagonal shift added on top of lam to factorize, 0 when
     the first Cholesky attempt succeeded
    """
    u: np.ndarray
    lam: float
    delta_norm2: float
    jitter: float = 0.0


@dataclass(frozen=True, eq=False)
class SpectralReport:
    """
    Decomposition of the critic on the eigenvectors of D.

    :param eigvals: eigenvalues lam_j in descending order, clamped to 0
     below EIGEN_CLAMP * lam_max
    :param directions: eigenvectors, column j is d_j
    :param alignments: a_j = <d_j, delta>
    :param weights: 1 / (lam_j + lam)
    :param coefficients: a_j / (lam_j + lam)
    :param lam: regularization used for the weights
    """
    eigvals: np.ndarray
    directions: np.ndarray
    alignments: np.ndarray
    weights: np.ndarray
    coefficients: np.ndarray
    lam: float

    def reconstruct(self):
        """sum_j coefficients[j] d_j, equal to the critic coefficients u."""
        return self.directions @ self.coefficients

    def rksd2(self):
        """sum_j a_j^2 / (lam_j + lam)."""
        return float(np.sum(self.alignments**2 * self.weights))

    def to_frame(self):
        return pd.DataFrame({
            "j": np.arange(1, len(self.eigvals) + 1),
            "eigval": self.eigvals,
            "alignment": self.alignments,
            "weight": self.weights,
            "coefficient": self.coefficients,
        })

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.17g")


def _check_lambda(lam):
    if not np.isfinite(lam) or lam <= 0:
        raise ParameterError(
            f"lambda must be > 0, got {lam}. Use a tiny value such as 1e-8 "
            "for the unregularized regime."
        )
    return float(lam)


def _check_system(D, delta):
    D = np.asarray(D, dtype=np.float64)
    delta = np.asarray(delta, dtype=np.float64)
    if D.ndim != 2 or D.shape[0] != D.shape[1]:
        raise ParameterError(f"D must be a square matrix, got shape {D.shape}")
    if delta.shape != (D.shape[0],):
        raise ParameterError(
            f"delta must have length m={D.shape[0]}, got shape {delta.shape}")
    return D, delta


def solve_critic(D, mu_p, mu_q, lam):
    """
    Closed form Sobolev critic (D + lam I) u = mu_p - mu_q.

    The system is factorized by Cholesky. If the factorization fails, a
    jitter of 1e-12 * trace(D) / m is added to the diagonal and escalated
    by x10 up to JITTER_ESCALATIONS times before giving up. One step of
    iterative refinement is applied to the solution.

    :param D: KdgeMat or (m, m) array
    :param mu_p: target KmeVec
    :param mu_q: current KmeVec
    :param lam: regularization, > 0
    :return: CriticCoeffs
    """
    lam = _check_lambda(lam)
    delta = np.asarray(mu_p, dtype=np.float64) - np.asarray(mu_q, dtype=np.float64)
    D, delta = _check_system(D, delta)
    m = D.shape[0]

    base = JITTER_START * np.trace(D) / m
    if not base > 0:
        base = JITTER_START
    jitters = [0.0] + [base * 10**k for k in range(JITTER_ESCALATIONS + 1)]
    for jitter in jitters:
        A = D + (lam + jitter) * np.eye(m)
        try:
            factor = linalg.cho_factor(A, lower=True, check_finite=True)
            break
        except (linalg.LinAlgError, ValueError):
            continue
    else:
        raise NumericalError(
            f"Cholesky factorization of D + lambda I failed (m={m}, lambda={lam:g}) "
            f"after {JITTER_ESCALATIONS} jitter escalations"
        )

    u = linalg.cho_solve(factor, delta)
    residual = delta - (D @ u + lam * u)
    u = u + linalg.cho_solve(factor, residual)

    return CriticCoeffs(
        u=u,
        lam=lam,
        delta_norm2=float(np.dot(delta, delta)),
        jitter=jitter,
    )


def residual_norm(D, coeffs, delta):
    """Relative residual |(D + lam I) u - delta| / |delta|."""
    D, delta = _check_system(D, delta)
    norm = np.linalg.norm(delta)
    if norm == 0:
        return float(np.linalg.norm(coeffs.u))
    r = D @ coeffs.u + coeffs.lam * coeffs.u - delta
    return float(np.linalg.norm(r) / norm)


def rksd2(coeffs, delta):
    """
    Squared regularized kernel Sobolev discrepancy <delta, u>.

    :param coeffs: CriticCoeffs returned by solve_critic
    :param delta: mu_p - mu_q used to build coeffs
    """
    delta = np.asarray(delta, dtype=np.float64)
    if delta.shape != coeffs.u.shape:
        raise ParameterError(
            f"delta must have length {coeffs.u.shape[0]}, got shape {delta.shape}")
    return max(float(np.dot(delta, coeffs.u)), 0.0)


def critic_value(fm, coeffs, x):
    """Critic u(x) = <u, phi(x)> at a single point."""
    if coeffs.u.shape != (fm.dim_features,):
        raise ParameterError("Critic coefficients do not match the feature map")
    return float(np.dot(coeffs.u, phi(fm, x)))


def critic_grad(fm, coeffs, x):
    """
    Gradient of the critic, J(x) u.

    :param x: a point of shape (d,) or a batch of shape (n, d)
    :return: array of shape (d,) for a single point, (n, d) for a batch
    """
    x = np.asarray(x, dtype=np.float64)
    grads = gradient_field(fm, coeffs.u, x)
    return grads[0] if x.ndim == 1 else grads


def kinetic_energy(fm, coeffs, particles):
    """
    Primal objective (1/n) sum_i |grad u(x_i)|^2 + lam |u|^2.

    At the optimum, with particles the cloud D was built from, it equals
    rksd2 = <delta, u>.
    """
    X = check_points(fm, getattr(particles, "points", particles))
    grads = gradient_field(fm, coeffs.u, X)
    return float(np.mean(np.sum(grads**2, axis=1))
                 + coeffs.lam * np.dot(coeffs.u, coeffs.u))


def principal_directions(D, delta, lam):
    """
    Spectral decomposition of the critic on the eigenvectors of D.

    :param D: KdgeMat or symmetric positive semidefinite (m, m) array
    :param delta: mu_p - mu_q
    :param lam: regularization, > 0
    :return: SpectralReport
    """
    lam = _check_lambda(lam)
    D, delta = _check_system(D, delta)
    try:
        eigvals, vectors = linalg.eigh(D)
    except linalg.LinAlgError as e:
        raise NumericalError(f"Eigendecomposition of D did not converge: {e}")

    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    vectors = vectors[:, order]

    top = max(eigvals[0], 0.0)
    eigvals = np.where(eigvals < EIGEN_CLAMP * top, 0.0, eigvals)

    alignments = vectors.T @ delta
    weights = 1.0 / (eigvals + lam)
    return SpectralReport(
        eigvals=eigvals,
        directions=vectors,
        alignments=alignments,
        weights=weights,
        coefficients=alignments * weights,
        lam=lam,
    )


def null_alignment_test(D, delta, tol=1e-8):
    """
    Detect delta in Null(D), where the descent stalls.

    :param D: KdgeMat or (m, m) array
    :param delta: mu_p - mu_q, must not be zero
    :param tol: relative tolerance
    :return: True iff |D delta| <= tol |delta|
    """
    D, delta = _check_system(D, delta)
    norm = np.linalg.norm(delta)
    if norm == 0:
        raise ParameterError(
            "delta is zero, the distributions already match (converged)")
    return bool(np.linalg.norm(D @ delta) <= tol * norm)


def direction_fields(fm, report, grid, directions=None):
    """
    Gradient fields of the principal transport directions on a grid.

    For each selected j, returns grad d_j(x) = J(x) d_j and the filtered
    contribution coefficients[j] * grad d_j(x) to grad u(x).

    :param fm: FeatureMap the report was computed with
    :param report: SpectralReport
    :param grid: array of shape (k, d)
    :param directions: iterable of 1-based direction indices, default all
    :return: pd.DataFrame in long format with columns j, coordinates,
     grad_* and filtered_*
    """
    grid = check_points(fm, grid)
    d = fm.dim_input
    names = ["x", "y", "z"][:d] if d <= 3 else [f"x{a}" for a in range(d)]
    if directions is None:
        directions = range(1, len(report.eigvals) + 1)

    frames = []
    for j in directions:
        if not 1 <= j <= len(report.eigvals):
            raise ParameterError(f"Direction index {j} out of range")
        field = gradient_field(fm, report.directions[:, j - 1], grid)
        frame = pd.DataFrame(grid, columns=names)
        frame.insert(0, "j", j)
        for a, name in enumerate(names):
            frame[f"grad_{name}"] = field[:, a]
        for a, name in enumerate(names):
            frame[f"filtered_{name}"] = report.coefficients[j - 1] * field[:, a]
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
