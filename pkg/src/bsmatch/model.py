"""Parameter containers, datasets, priors and likelihoods of the signal-matching
mixture model.

Epochs are stored channels x time (E x T0).  Every epoch is matrix normal
with row (spatial) covariance ``V R_s(eta) V`` and column (temporal)
correlation ``R_t(rho)``; the mean is ``psi1 * A1 @ Psi1`` for target
flashes and ``psi0 * A0 @ Psi0`` for non-target flashes.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import rcp
from .errors import ContractError, ParameterDomainError, ValidationError
from .numkernel import (LOG_2PI, EigenBasis, KernelSpec, ar1_corr, ar1_inverse, ar1_logdet,
                        cs_corr, cs_logdet, kernel_basis, matnorm_logpdf)

DEFAULT_GRID = tuple(np.round(np.arange(1, 20) * 0.05, 2).tolist())

HC_SCALE = 5.0


# ---------------------------------------------------------------------------
# priors
# ---------------------------------------------------------------------------

def lognormal_logpdf(x, mu=0.0, scale=1.0):
    """Log density of LN(mu, scale) (scale = sd of log x)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(x)
        out = -lx - np.log(scale) - 0.5 * LOG_2PI - 0.5 * ((lx - mu) / scale) ** 2
    return np.where(x > 0, out, -np.inf)


def halfcauchy_logpdf(x, scale=HC_SCALE):
    """Log density of the half-Cauchy HC(0, scale) on x >= 0."""
    x = np.asarray(x, dtype=float)
    out = np.log(2.0 / (np.pi * scale)) - np.log1p((x / scale) ** 2)
    return np.where(x >= 0, out, -np.inf)


def grid_index(value: float, grid, name: str) -> int:
    grid = np.asarray(grid, dtype=float)
    hit = np.flatnonzero(np.isclose(grid, value, rtol=0.0, atol=1e-9))
    if hit.size == 0:
        raise ParameterDomainError(f"{name}={value} is not on its candidate grid")
    return int(hit[0])


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StructuredCov:
    """Channel sds ``sigma``, compound-symmetry ``eta`` and AR(1) ``rho``."""

    sigma: np.ndarray
    eta: float
    rho: float

    def __post_init__(self):
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "sigma", sigma)
        if np.any(~np.isfinite(sigma)) or np.any(sigma <= 0):
            raise ParameterDomainError(f"all sigma must be > 0, got {sigma}")
        for name in ("eta", "rho"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ParameterDomainError(f"{name} must lie in [0, 1), got {v}")

    @property
    def E(self):
        return self.sigma.size

    def spatial(self) -> np.ndarray:
        return self.sigma[:, None] * cs_corr(self.eta, self.E) * self.sigma[None, :]

    def temporal(self, T: int) -> np.ndarray:
        return ar1_corr(self.rho, T)


@dataclass(frozen=True)
class ParticipantParams:
    """Parameter block of one participant.

    ``A0``/``psi0`` (the non-target block) exist for the new participant only.
    """

    A1: np.ndarray
    psi1: float
    sigma: np.ndarray
    rho: float
    eta: float
    A0: np.ndarray | None = None
    psi0: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "A1", np.atleast_2d(np.asarray(self.A1, dtype=float)))
        object.__setattr__(self, "sigma", np.atleast_1d(np.asarray(self.sigma, dtype=float)))
        if self.A0 is not None:
            object.__setattr__(self, "A0", np.atleast_2d(np.asarray(self.A0, dtype=float)))
        if not self.psi1 > 0:
            raise ParameterDomainError(f"psi1 must be > 0, got {self.psi1}")
        if self.psi0 is not None and not self.psi0 > 0:
            raise ParameterDomainError(f"psi0 must be > 0, got {self.psi0}")
        if (self.A0 is None) != (self.psi0 is None):
            raise ParameterDomainError("A0 and psi0 must be given together")
        if np.any(self.sigma <= 0):
            raise ParameterDomainError(f"all sigma must be > 0, got {self.sigma}")
        for name in ("rho", "eta"):
            v = getattr(self, name)
            if not (0.0 < v < 1.0):
                raise ParameterDomainError(f"{name} must lie in (0, 1), got {v}")
        if self.A1.shape[0] != self.sigma.size:
            raise ParameterDomainError("A1 rows must match the number of channels")

    @property
    def cov(self) -> StructuredCov:
        return StructuredCov(self.sigma, self.eta, self.rho)

    @property
    def has_nontarget(self) -> bool:
        return self.A0 is not None


@dataclass(frozen=True)
class MatchVector:
    Z: np.ndarray
    pi: float = 0.5

    def __post_init__(self):
        Z = np.asarray(self.Z, dtype=int)
        object.__setattr__(self, "Z", Z)
        if np.any((Z != 0) & (Z != 1)):
            raise ParameterDomainError("match indicators must be binary")
        if not (0.0 <= self.pi <= 1.0):
            raise ParameterDomainError(f"pi must lie in [0, 1], got {self.pi}")


@dataclass(frozen=True)
class ModelConfig:
    """Model hyper-parameters shared by all participants."""

    E: int
    T0: int
    target_kernel: KernelSpec = KernelSpec(0.2, 1.2)
    nontarget_kernel: KernelSpec = KernelSpec(0.3, 1.2)
    threshold: float = 0.95
    rho_grid: tuple = DEFAULT_GRID
    eta_grid: tuple = DEFAULT_GRID
    pi: float = 0.5
    delta_z: float = 0.5

    def __post_init__(self):
        for name in ("rho_grid", "eta_grid"):
            g = tuple(float(v) for v in getattr(self, name))
            object.__setattr__(self, name, g)
            if len(g) == 0 or any(not (0.0 < v < 1.0) for v in g):
                raise ParameterDomainError(f"{name} must be a non-empty subset of (0, 1)")
        if not (0.0 < self.delta_z < 1.0):
            raise ParameterDomainError(f"delta_z must lie in (0, 1), got {self.delta_z}")
        if not (0.0 <= self.pi <= 1.0):
            raise ParameterDomainError(f"pi must lie in [0, 1], got {self.pi}")
        if self.E < 1 or self.T0 < 2:
            raise ParameterDomainError("need E >= 1 and T0 >= 2")

    def bases(self) -> tuple[EigenBasis, EigenBasis]:
        """(target basis, non-target basis)."""
        return (kernel_basis(self.T0, self.target_kernel, self.threshold),
                kernel_basis(self.T0, self.nontarget_kernel, self.threshold))

    @classmethod
    def multi_channel(cls, E=2, T0=35, **kw):
        return cls(E=E, T0=T0, target_kernel=KernelSpec(0.2, 1.2),
                   nontarget_kernel=KernelSpec(0.3, 1.2), **kw)

    @classmethod
    def single_channel(cls, T0=35, **kw):
        return cls(E=1, T0=T0, target_kernel=KernelSpec(0.3, 1.2),
                   nontarget_kernel=KernelSpec(0.4, 1.2), **kw)

    def to_dict(self):
        return {
            "E": self.E, "T0": self.T0,
            "target_kernel": self.target_kernel.to_dict(),
            "nontarget_kernel": self.nontarget_kernel.to_dict(),
            "threshold": self.threshold,
            "rho_grid": list(self.rho_grid), "eta_grid": list(self.eta_grid),
            "pi": self.pi, "delta_z": self.delta_z,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("target_kernel", "nontarget_kernel"):
            if k in d and isinstance(d[k], dict):
                d[k] = KernelSpec(**d[k])
        for k in ("rho_grid", "eta_grid"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@dataclass
class ParticipantData:
    """All epochs of one participant, row-aligned arrays.

    ``X`` has shape (n_epochs, E, T0); ``char_idx``/``seq_idx``/``stim_idx``
    are 0-based, ``code`` is the stimulus code 1..12 and ``y`` the target flag.
    """

    X: np.ndarray
    y: np.ndarray
    char_idx: np.ndarray
    seq_idx: np.ndarray
    stim_idx: np.ndarray
    code: np.ndarray

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim != 3:
            raise ValidationError("X must have shape (n_epochs, E, T0)", rule="dimension")
        for name in ("y", "char_idx", "seq_idx", "stim_idx", "code"):
            arr = np.asarray(getattr(self, name), dtype=int)
            if arr.shape != (self.X.shape[0],):
                raise ValidationError(f"{name} must have one entry per epoch", rule="dimension")
            setattr(self, name, arr)

    def __len__(self):
        return self.X.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return self.X[self.y == 1]

    @property
    def nontargets(self) -> np.ndarray:
        return self.X[self.y == 0]

    def select(self, mask) -> "ParticipantData":
        mask = np.asarray(mask)
        return ParticipantData(self.X[mask], self.y[mask], self.char_idx[mask], self.seq_idx[mask],
                               self.stim_idx[mask], self.code[mask])

    def first_sequences(self, k: int) -> "ParticipantData":
        """Keep the first ``k`` sequences of every character."""
        return self.select(self.seq_idx < k)

    def sequences(self):
        """Yield (char_idx, seq_idx, ParticipantData) per sequence, sorted by stimulus order."""
        keys = sorted(set(zip(self.char_idx.tolist(), self.seq_idx.tolist())))
        for c, s in keys:
            m = np.flatnonzero((self.char_idx == c) & (self.seq_idx == s))
            m = m[np.argsort(self.stim_idx[m], kind="stable")]
            yield c, s, self.select(m)

    def validate(self, participant: int = 0):
        for c, s, seq in self.sequences():
            where = f"participant {participant}, char {c}, seq {s}"
            if len(set(seq.code.tolist())) != len(seq) or np.any((seq.code < 1) | (seq.code > 12)):
                raise ValidationError(f"{where}: stimulus codes are not distinct codes in 1..12",
                                      rule="permutation")
            ntar = int(seq.y.sum())
            if ntar > 2:
                raise ValidationError(f"{where}: {ntar} target stimuli in one sequence",
                                      rule="two-target rule")
            if len(seq) == rcp.N_CODES:
                rcp.validate_codes(seq.code)
                if ntar != 2:
                    raise ValidationError(f"{where}: complete sequence has {ntar} targets",
                                          rule="two-target rule")
                rows = seq.code[seq.y == 1]
                if not (rows.min() <= 6 < rows.max()):
                    raise ValidationError(f"{where}: targets must be one row and one column",
                                          rule="two-target rule")


@dataclass
class Dataset:
    """Participant 0 is the new participant; 1..N are sources."""

    participants: list = field(default_factory=list)

    def __post_init__(self):
        if not self.participants:
            raise ValidationError("dataset has no participants", rule="dimension")
        shapes = {p.X.shape[1:] for p in self.participants}
        if len(shapes) > 1:
            raise ValidationError(f"inconsistent epoch dimensions {sorted(shapes)}", rule="dimension")

    @property
    def N(self) -> int:
        return len(self.participants) - 1

    @property
    def E(self) -> int:
        return self.participants[0].X.shape[1]

    @property
    def T0(self) -> int:
        return self.participants[0].X.shape[2]

    def __getitem__(self, n) -> ParticipantData:
        return self.participants[n]

    def validate(self):
        for n, p in enumerate(self.participants):
            p.validate(n)
        return self

    def with_new_sequences(self, k: int | None) -> "Dataset":
        """Restrict the new participant to its first ``k`` sequences per character."""
        if k is None:
            return self
        return Dataset([self.participants[0].first_sequences(k)] + list(self.participants[1:]))

    def reference(self) -> "Dataset":
        """The new participant alone (N = 0)."""
        return Dataset([self.participants[0]])


# ---------------------------------------------------------------------------
# sufficient statistics
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    """Sufficient statistics of a set of epochs for AR(1) column covariance.

    With ``Rt^{-1}`` tridiagonal, ``sum_i X_i Rt^{-1} X_i^T`` only needs the
    lag-0 Gram, its interior-time part and the lag-1 cross Gram.
    """

    n: int
    sx: np.ndarray
    g0: np.ndarray
    gint: np.ndarray
    glag: np.ndarray

    @classmethod
    def from_epochs(cls, X, E=None, T=None) -> "EpochStats":
        X = np.asarray(X, dtype=float)
        if X.size == 0:
            if E is None or T is None:
                E, T = X.shape[1:] if X.ndim == 3 else (E, T)
            return cls.empty(E, T)
        g0 = np.einsum("iet,ift->ef", X, X)
        gint = np.einsum("iet,ift->ef", X[:, :, 1:-1], X[:, :, 1:-1])
        glag = np.einsum("iet,ift->ef", X[:, :, :-1], X[:, :, 1:])
        return cls(X.shape[0], X.sum(axis=0), g0, gint, glag)

    @classmethod
    def empty(cls, E, T) -> "EpochStats":
        z = np.zeros((E, E))
        return cls(0, np.zeros((E, T)), z, z.copy(), z.copy())

    def __add__(self, other: "EpochStats") -> "EpochStats":
        return EpochStats(self.n + other.n, self.sx + other.sx, self.g0 + other.g0,
                          self.gint + other.gint, self.glag + other.glag)

    @property
    def T(self):
        return self.sx.shape[1]

    def sxx(self, rho):
        """``sum_i X_i Rt(rho)^{-1} X_i^T``; ``rho`` may be an array (leading axis)."""
        rho = np.asarray(rho, dtype=float)
        if self.T == 1:
            return np.broadcast_to(self.g0, rho.shape + self.g0.shape).copy()
        r = rho[..., None, None]
        cross = self.glag + self.glag.T
        return (self.g0 + r * r * self.gint - r * cross) / (1.0 - r * r)


def row_cov_loglik(Q, ncols, sigma, eta, col_logdet, eta_logdet=None):
    """Matrix-normal log density collected on the row side.

    ``Q`` is ``sum_k (X_k - M_k) C^{-1} (X_k - M_k)^T`` (E x E) over ``k`` matrices
    with ``ncols`` columns in total and column log-determinant total
    ``col_logdet``; the row covariance is ``diag(sigma) R_cs(eta) diag(sigma)``.
    ``eta`` may be an array, in which case the result is vectorised over it.
    """
    sigma = np.asarray(sigma, dtype=float)
    E = sigma.size
    eta = np.asarray(eta, dtype=float)
    Qs = Q / np.outer(sigma, sigma)
    tr_diag = np.trace(Qs)
    tr_all = Qs.sum()
    a = 1.0 / (1.0 - eta)
    b = eta / ((1.0 - eta) * (1.0 + (E - 1) * eta))
    quad = a * tr_diag - b * tr_all
    if eta_logdet is None:
        eta_logdet = cs_logdet(eta, E)
    logdet_row = 2.0 * np.log(sigma).sum() + eta_logdet
    return -0.5 * (E * ncols * LOG_2PI + ncols * logdet_row + E * col_logdet + quad)


def stats_quad(st: EpochStats, M, rinv, rho):
    """``sum_i (X_i - M) Rt^{-1} (X_i - M)^T`` from sufficient statistics."""
    if st.n == 0:
        return np.zeros_like(st.g0)
    MR = M @ rinv
    C = MR @ st.sx.T
    return st.sxx(rho) - C - C.T + st.n * (MR @ M.T)


def stats_loglik(st: EpochStats, M, cov: StructuredCov) -> float:
    """Sum of epoch log-likelihoods sharing mean ``M``, from sufficient statistics."""
    if st.n == 0:
        return 0.0
    T = st.T
    Q = stats_quad(st, np.asarray(M, dtype=float), ar1_inverse(cov.rho, T), cov.rho)
    return float(row_cov_loglik(Q, st.n * T, cov.sigma, cov.eta, st.n * ar1_logdet(cov.rho, T)))


# ---------------------------------------------------------------------------
# mean functions and likelihoods
# ---------------------------------------------------------------------------

def assemble_mean(params: ParticipantParams, y: int, basis1: EigenBasis, basis0: EigenBasis | None):
    """ERP mean matrix (E x T0) for target (``y=1``) or non-target (``y=0``) flashes."""
    if y == 1:
        return params.psi1 * params.A1 @ basis1.Psi
    if y == 0:
        if not params.has_nontarget:
            raise ContractError("non-target means exist only for the new participant; "
                                "source non-target epochs are not modelled")
        return params.psi0 * params.A0 @ basis0.Psi
    raise ContractError(f"stimulus type must be 0 or 1, got {y}")


def epoch_loglik(X, mean, cov: StructuredCov) -> float:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return matnorm_logpdf(X, mean, cov.spatial(), cov.temporal(X.shape[1]))


def source_target_loglik(data: ParticipantData, params: ParticipantParams, basis1: EigenBasis) -> float:
    """Log-likelihood of a source participant's target epochs only."""
    X = data.targets
    if X.shape[0] == 0:
        return 0.0
    M = assemble_mean(params, 1, basis1, None)
    cov = params.cov
    return float(sum(epoch_loglik(x, M, cov) for x in X))


def log_priors(params: ParticipantParams, basis1: EigenBasis, basis0: EigenBasis | None,
               rho_grid, eta_grid) -> float:
    """Joint log prior density of one participant's parameter block."""
    ri = grid_index(params.rho, rho_grid, "rho")
    ei = grid_index(params.eta, eta_grid, "eta")
    del ri, ei
    lp = float(lognormal_logpdf(params.psi1))
    lp += float(np.sum(halfcauchy_logpdf(params.sigma)))
    lp -= np.log(len(rho_grid)) + np.log(len(eta_grid))
    Sig = params.cov.spatial()
    lp += matnorm_logpdf(params.A1, np.zeros_like(params.A1), Sig, np.diag(basis1.lam))
    if params.has_nontarget:
        lp += float(lognormal_logpdf(params.psi0))
        lp += matnorm_logpdf(params.A0, np.zeros_like(params.A0), Sig, np.diag(basis0.lam))
    return float(lp)


def with_params(params: ParticipantParams, **changes) -> ParticipantParams:
    return replace(params, **changes)
