"""Numerical primitives: kernels, Mercer truncation, structured correlations
and matrix-normal log densities.

Everything here is a pure function of its arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import NumericalDomainError, ParameterDomainError

LOG_2PI = float(np.log(2.0 * np.pi))
NEG_EIG_TOL = 1e-8


def time_grid(T0: int) -> np.ndarray:
    """Equally spaced time indices on [0, 1]: s_t = (t - 1) / (T0 - 1)."""
    if int(T0) < 2:
        raise ParameterDomainError(f"time grid needs T0 >= 2, got {T0}")
    return np.linspace(0.0, 1.0, int(T0))


@dataclass(frozen=True)
class KernelSpec:
    """Hyper-parameters of the gamma-exponential kernel.

    ``form="standard"`` is ``psi0 * exp(-(|d| / s0) ** gamma0)``, positive
    semi-definite for every ``gamma0`` in [0, 2).  ``form="squared"`` puts the
    squared distance inside the power, ``psi0 * exp(-(d**2 / s0) ** gamma0)``;
    that variant is only PSD for ``gamma0 <= 1``.
    """

    s0: float
    gamma0: float
    psi0: float = 1.0
    form: str = "standard"

    def __post_init__(self):
        if not np.isfinite(self.s0) or self.s0 <= 0:
            raise ParameterDomainError(f"kernel length-scale s0 must be > 0, got {self.s0}")
        if not (0.0 <= self.gamma0 < 2.0):
            raise ParameterDomainError(f"kernel exponent gamma0 must lie in [0, 2), got {self.gamma0}")
        if not np.isfinite(self.psi0) or self.psi0 <= 0:
            raise ParameterDomainError(f"kernel scale psi0 must be > 0, got {self.psi0}")
        if self.form not in ("standard", "squared"):
            raise ParameterDomainError(f"kernel form must be 'standard' or 'squared', got {self.form!r}")

    def to_dict(self):
        return {"s0": self.s0, "gamma0": self.gamma0, "psi0": self.psi0, "form": self.form}


def gamma_exp_kernel(grid, spec: KernelSpec) -> np.ndarray:
    r"""Gram matrix of the gamma-exponential kernel on ``grid``.

    Standard form :math:`\psi_0 \exp\{-(|s - s'| / s_0)^{\gamma_0}\}`; see
    :class:`KernelSpec` for the squared-distance variant.  Zero distance maps
    to ``psi0`` for every ``gamma0`` (including 0).
    """
    s = np.asarray(grid, dtype=float)
    if s.ndim != 1 or s.size < 2:
        raise ParameterDomainError("grid must be a 1-D array with at least two points")
    if np.any(np.diff(s) <= 0):
        raise ParameterDomainError("grid must be strictly increasing")
    d = np.abs(s[:, None] - s[None, :])
    K = np.full(d.shape, spec.psi0)
    off = d > 0
    base = d[off] / spec.s0 if spec.form == "standard" else d[off] ** 2 / spec.s0
    K[off] = spec.psi0 * np.exp(-(base ** spec.gamma0))
    return K


@dataclass(frozen=True)
class EigenBasis:
    """Truncated eigen-expansion of a kernel Gram matrix.

    ``Psi`` is ``L x T0`` with orthonormal rows; ``lam`` holds the matching
    eigenvalues in non-increasing order.
    """

    Psi: np.ndarray
    lam: np.ndarray
    L: int
    energy_fraction: float

    @property
    def T0(self) -> int:
        return self.Psi.shape[1]


def eigen_truncate(K, threshold: float = 0.95) -> EigenBasis:
    """Keep the smallest number of leading eigenpairs whose cumulative share of
    the eigenvalue total is at least ``threshold``.

    Eigenvalues in ``[-1e-8, 0)`` are treated as round-off and clamped to zero.
    """
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ParameterDomainError("K must be a square matrix")
    if not (0.0 < threshold <= 1.0):
        raise ParameterDomainError(f"threshold must lie in (0, 1], got {threshold}")
    Ks = 0.5 * (K + K.T)
    w, v = np.linalg.eigh(Ks)
    if w.min() < -NEG_EIG_TOL:
        raise NumericalDomainError(f"matrix is not PSD: smallest eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    total = w.sum()
    if total <= 0:
        raise NumericalDomainError("matrix has zero trace; nothing to expand")
    frac = np.cumsum(w) / total
    # tiny slack so that an exact boundary (e.g. 0.95 == 0.95) is not lost to round-off
    L = int(np.searchsorted(frac, threshold - 1e-12) + 1)
    L = min(L, w.size)
    while L > 1 and w[L - 1] <= 0:
        L -= 1
    Psi = v[:, :L].T.copy()
    # fix eigenvector signs so that results do not depend on the LAPACK build
    signs = np.sign(Psi[np.arange(L), np.argmax(np.abs(Psi), axis=1)])
    signs[signs == 0] = 1.0
    Psi *= signs[:, None]
    return EigenBasis(Psi=Psi, lam=w[:L].copy(), L=L, energy_fraction=float(frac[L - 1]))


def kernel_basis(T0: int, spec: KernelSpec, threshold: float = 0.95) -> EigenBasis:
    """Convenience: eigen basis of the kernel on the unit time grid."""
    return eigen_truncate(gamma_exp_kernel(time_grid(T0), spec), threshold)


# ---------------------------------------------------------------------------
# structured correlation matrices
# ---------------------------------------------------------------------------

def _check_unit(name, value, closed_low=True):
    ok = (0.0 <= value < 1.0) if closed_low else (0.0 < value < 1.0)
    if not np.isfinite(value) or not ok:
        raise ParameterDomainError(f"{name} must lie in [0, 1), got {value}")


def ar1_corr(rho: float, T: int) -> np.ndarray:
    """AR(1) / exponential-decay correlation, entry (i, j) = rho**|i - j|."""
    _check_unit("rho", rho)
    if int(T) < 1:
        raise ParameterDomainError(f"T must be >= 1, got {T}")
    idx = np.arange(int(T))
    return float(rho) ** np.abs(idx[:, None] - idx[None, :]).astype(float)


def ar1_inverse(rho: float, T: int) -> np.ndarray:
    """Tridiagonal closed-form inverse of :func:`ar1_corr`."""
    _check_unit("rho", rho)
    T = int(T)
    c = 1.0 / (1.0 - rho * rho)
    P = np.zeros((T, T))
    diag = np.full(T, 1.0 + rho * rho)
    diag[0] = diag[-1] = 1.0
    if T == 1:
        diag[0] = 1.0 - rho * rho
    P[np.arange(T), np.arange(T)] = diag
    if T > 1:
        k = np.arange(T - 1)
        P[k, k + 1] = P[k + 1, k] = -rho
    return c * P


def ar1_logdet(rho: float, T: int) -> float:
    return (int(T) - 1) * float(np.log1p(-rho * rho))


def cs_corr(eta: float, E: int) -> np.ndarray:
    """Compound-symmetry correlation: unit diagonal, ``eta`` elsewhere."""
    _check_unit("eta", eta)
    if int(E) < 1:
        raise ParameterDomainError(f"E must be >= 1, got {E}")
    R = np.full((int(E), int(E)), float(eta))
    np.fill_diagonal(R, 1.0)
    return R


def cs_logdet(eta, E: int):
    """log|R| = (E-1) log(1-eta) + log(1 + (E-1) eta); vectorised over eta."""
    eta = np.asarray(eta, dtype=float)
    return (E - 1) * np.log1p(-eta) + np.log1p((E - 1) * eta)


def cs_inverse(eta: float, E: int) -> np.ndarray:
    """Closed-form inverse of :func:`cs_corr`."""
    _check_unit("eta", eta)
    a = 1.0 / (1.0 - eta)
    b = eta / ((1.0 - eta) * (1.0 + (E - 1) * eta))
    return a * np.eye(E) - b * np.ones((E, E))


# ---------------------------------------------------------------------------
# matrix-normal density
# ---------------------------------------------------------------------------

def _chol(S, what):
    try:
        return linalg.cholesky(np.asarray(S, dtype=float), lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalDomainError(f"{what} is not positive definite") from exc


def matnorm_logpdf(X, M, U, Vt) -> float:
    """Log density of the matrix normal ``MN(M, U, Vt)`` at ``X``.

    ``U`` (E x E) is the row covariance and ``Vt`` (T x T) the column
    covariance, so that vec(X) (columns stacked) ~ N(vec(M), Vt kron U).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    M = np.atleast_2d(np.asarray(M, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Vt = np.atleast_2d(np.asarray(Vt, dtype=float))
    E, T = X.shape
    if M.shape != (E, T) or U.shape != (E, E) or Vt.shape != (T, T):
        raise ParameterDomainError(
            f"dimension mismatch: X{X.shape} M{M.shape} U{U.shape} Vt{Vt.shape}")
    Lu = _chol(U, "row covariance U")
    Lv = _chol(Vt, "column covariance Vt")
    D = X - M
    # Lu^{-1} D Lv^{-T}
    Z = linalg.solve_triangular(Lu, D, lower=True)
    Z = linalg.solve_triangular(Lv, Z.T, lower=True).T
    logdet_u = 2.0 * np.log(np.diag(Lu)).sum()
    logdet_v = 2.0 * np.log(np.diag(Lv)).sum()
    return float(-0.5 * (E * T * LOG_2PI + T * logdet_u + E * logdet_v + np.sum(Z * Z)))
