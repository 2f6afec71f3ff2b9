"""Gibbs / Metropolis-Hastings sampler for the signal-matching mixture,
multi-chain execution and Gelman-Rubin diagnostics.

Cluster 0 is the new participant's parameter set.  Source ``n`` either
shares it (``Z_n = 1``) or carries its own "tilde" set.  All likelihood work
goes through per-group sufficient statistics precomputed on the rho grid,
so one sweep costs a handful of small dense operations per participant.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import linalg
from scipy.special import expit, logsumexp

from .errors import DiagnosticError, NumericalDomainError, ParameterDomainError, SamplerError
from .model import (Dataset, EpochStats, ModelConfig, ParticipantParams, halfcauchy_logpdf,
                    lognormal_logpdf)
from .numkernel import LOG_2PI, ar1_inverse, cs_corr, cs_logdet

PSEUDO_PRIOR_MODES = ("prior", "pilot")


@dataclass(frozen=True)
class McmcConfig:
    """Run lengths, proposal scales and seeding.

    ``psi_step``/``sigma_step`` are log-scale random-walk SDs.  ``scale_step``
    is the log-scale SD of two joint moves, ``(psi, A) -> (c psi, A / c)``
    which keeps the mean and ``(sigma, A) -> (c sigma, c A)`` which keeps the
    coefficient prior (0 disables both).  ``pseudo_prior`` selects how inactive
    source parameters are refreshed: ``"prior"`` draws them from their prior,
    ``"pilot"`` from a Gaussian fitted during the first ``n_pilot`` burn-in
    sweeps (run with all ``Z = 0``).
    """

    n_chains: int = 3
    n_burnin: int = 5000
    n_samples: int = 3000
    thin: int = 1
    psi_step: float = 0.1
    sigma_step: float = 0.1
    scale_step: float = 0.3
    seed: int = 0
    z_init: int = 0
    pseudo_prior: str = "prior"
    n_pilot: int = 0

    def __post_init__(self):
        for name in ("n_chains", "n_samples", "thin"):
            if int(getattr(self, name)) < 1:
                raise ParameterDomainError(f"{name} must be >= 1")
        if self.n_burnin < 0 or self.n_pilot < 0:
            raise ParameterDomainError("n_burnin and n_pilot must be >= 0")
        if self.psi_step < 0 or self.sigma_step < 0 or self.scale_step < 0:
            raise ParameterDomainError("proposal step sizes must be >= 0")
        if self.z_init not in (0, 1):
            raise ParameterDomainError("z_init must be 0 or 1")
        if self.pseudo_prior not in PSEUDO_PRIOR_MODES:
            raise ParameterDomainError(f"pseudo_prior must be one of {PSEUDO_PRIOR_MODES}")
        if self.pseudo_prior == "pilot" and not (0 < self.n_pilot <= self.n_burnin):
            raise ParameterDomainError("pilot mode needs 0 < n_pilot <= n_burnin")

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# precomputation
# ---------------------------------------------------------------------------

@dataclass
class _GroupStats:
    """Epoch statistics of one group evaluated on the whole rho grid."""

    n: int
    sxx: np.ndarray   # (G, E, E)   sum X Rinv X^T
    sxr: np.ndarray   # (G, E, L)   Sx Rinv Psi^T

    def __add__(self, other):
        return _GroupStats(self.n + other.n, self.sxx + other.sxx, self.sxr + other.sxr)


class SamplerData:
    """Read-only arrays shared by all chains of one fit."""

    def __init__(self, dataset: Dataset, mc: ModelConfig):
        if dataset.E != mc.E or dataset.T0 != mc.T0:
            raise ParameterDomainError(
                f"dataset epochs are {dataset.E}x{dataset.T0}, model expects {mc.E}x{mc.T0}")
        self.mc = mc
        self.E, self.T = mc.E, mc.T0
        self.N = dataset.N
        self.basis1, self.basis0 = mc.bases()
        self.L1, self.L0 = self.basis1.L, self.basis0.L
        self.lam1, self.lam0 = self.basis1.lam, self.basis0.lam
        self.rho_grid = np.asarray(mc.rho_grid)
        self.eta_grid = np.asarray(mc.eta_grid)

        rinv = np.stack([ar1_inverse(r, self.T) for r in self.rho_grid])
        self.ld_t = (self.T - 1) * np.log1p(-self.rho_grid ** 2)
        P1, P0 = self.basis1.Psi, self.basis0.Psi
        self.pr = {1: np.einsum("lt,gts,ms->glm", P1, rinv, P1),
                   0: np.einsum("lt,gts,ms->glm", P0, rinv, P0)}
        r1 = np.einsum("gts,ls->gtl", rinv, P1)
        r0 = np.einsum("gts,ls->gtl", rinv, P0)
        self.lam = {1: self.lam1, 0: self.lam0}

        E = self.E
        self.cs_chol = np.stack([np.linalg.cholesky(cs_corr(e, E)) for e in self.eta_grid])
        self.cs_ld = cs_logdet(self.eta_grid, E)
        self.cs_a = 1.0 / (1.0 - self.eta_grid)
        self.cs_b = self.eta_grid / ((1.0 - self.eta_grid) * (1.0 + (E - 1) * self.eta_grid))

        self._r = {1: r1, 0: r0}
        self.load(dataset)

    def _group(self, X, kind):
        st = EpochStats.from_epochs(X, self.E, self.T)
        return _GroupStats(st.n, st.sxx(self.rho_grid), np.einsum("et,gtl->gel", st.sx, self._r[kind]))

    def load(self, dataset: Dataset):
        """(Re)compute the per-participant statistics; grids and bases are kept."""
        if dataset.N != self.N:
            raise ParameterDomainError("reloaded dataset must keep the number of sources")
        p0 = dataset[0]
        self.new_target = self._group(p0.targets, 1)
        self.new_nontarget = self._group(p0.nontargets, 0)
        self.sources = [self._group(dataset[n].targets, 1) for n in range(1, self.N + 1)]
        # rough data scale per channel, used only for initial values
        self.init_sd = []
        for n in range(self.N + 1):
            X = dataset[n].X if n == 0 else dataset[n].targets
            sd = X.std(axis=(0, 2)) if X.size else np.ones(self.E)
            self.init_sd.append(np.where(sd > 0, sd, 1.0))


# ---------------------------------------------------------------------------
# blocks of parameters
# ---------------------------------------------------------------------------

@dataclass
class _Comp:
    """One mean component: coefficients, scale, basis kind (1 target, 0 non-target) and data."""

    A: np.ndarray
    psi: float
    kind: int
    stats: _GroupStats | None = None


@dataclass
class _Block:
    """Parameters sharing one covariance: sigma, rho index, eta index."""

    sigma: np.ndarray
    ri: int
    ei: int
    comps: list = field(default_factory=list)

    @property
    def n_epochs(self):
        return sum(c.stats.n for c in self.comps)


@dataclass
class ChainState:
    """Current values of every parameter in one chain."""

    new: _Block
    tilde: list
    Z: np.ndarray
    iteration: int = 0

    def params(self, n: int, grids) -> ParticipantParams:
        """Participant view: cluster 0 for ``n = 0`` or matched sources, tilde otherwise."""
        rho_grid, eta_grid = grids
        if n == 0 or self.Z[n - 1] == 1:
            b = self.new
            c1 = b.comps[0]
            extra = {}
            if n == 0:
                extra = {"A0": b.comps[1].A.copy(), "psi0": b.comps[1].psi}
            return ParticipantParams(c1.A.copy(), c1.psi, b.sigma.copy(), rho_grid[b.ri],
                                     eta_grid[b.ei], **extra)
        b = self.tilde[n - 1]
        return ParticipantParams(b.comps[0].A.copy(), b.comps[0].psi, b.sigma.copy(),
                                 rho_grid[b.ri], eta_grid[b.ei])


def conjugate_A(sxr, n, pr, psi, lam):
    """Posterior of the coefficients under ``A ~ MN(0, S, diag(lam))``.

    Parameters
    ----------
    sxr : ndarray (E, L)
        ``Sx Rt^{-1} Psi^T`` of the pooled epochs.
    n : int
        Number of pooled epochs.
    pr : ndarray (L, L)
        ``Psi Rt^{-1} Psi^T``.
    psi : float
    lam : ndarray (L,)

    Returns
    -------
    M : ndarray (E, L)
        Posterior mean.
    Lp : ndarray (L, L)
        Lower Cholesky factor of the posterior column precision ``P``; the
        posterior is ``MN(M, S, P^{-1})``.
    """
    P = (psi * psi * n) * pr + np.diag(1.0 / lam)
    try:
        Lp = linalg.cholesky(P, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalDomainError("posterior column precision is not positive definite") from exc
    if n == 0:
        return np.zeros_like(sxr), Lp
    M = psi * linalg.cho_solve((Lp, True), sxr.T).T
    return M, Lp


def sample_conjugate_A(M, Lp, row_chol, rng):
    """Draw ``A = M + C Z Lp^{-1}`` with ``C C^T`` the row covariance."""
    Zm = rng.standard_normal(M.shape)
    W = linalg.solve_triangular(Lp, Zm.T, lower=True, trans="T").T
    return M + row_chol @ W


def match_probability(loglik_cluster0, loglik_own, pi, log_q=0.0, log_p=0.0):
    """``P(Z_n = 1)`` from log-likelihoods; pseudo-prior terms enter as ``log_q - log_p``."""
    if pi <= 0.0:
        return 0.0
    if pi >= 1.0:
        return 1.0
    logit = (np.log(pi) - np.log1p(-pi) + loglik_cluster0 + log_q - loglik_own - log_p)
    return float(expit(logit))


# ---------------------------------------------------------------------------
# trace
# ---------------------------------------------------------------------------

TRACE_ARRAYS = ("A1", "A0", "psi1", "psi0", "sigma", "rho", "eta", "Z",
                "tilde_psi", "tilde_sigma", "tilde_rho", "tilde_eta")


@dataclass
class ChainTrace:
    """Retained draws of one chain plus MH acceptance counters."""

    A1: np.ndarray
    A0: np.ndarray
    psi1: np.ndarray
    psi0: np.ndarray
    sigma: np.ndarray
    rho: np.ndarray
    eta: np.ndarray
    Z: np.ndarray
    tilde_psi: np.ndarray
    tilde_sigma: np.ndarray
    tilde_rho: np.ndarray
    tilde_eta: np.ndarray
    accepted: dict = field(default_factory=dict)
    rejected: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.psi1.shape[0]

    @property
    def N(self) -> int:
        return self.Z.shape[1]

    def proposals(self, block: str) -> int:
        return self.accepted[block] + self.rejected[block]

    def acceptance_rate(self, block: str) -> float:
        n = self.proposals(block)
        return self.accepted[block] / n if n else float("nan")

    def match_means(self) -> np.ndarray:
        return self.Z.mean(axis=0) if self.N else np.zeros(0)

    def scalars(self) -> dict:
        """Scalar new-participant parameters keyed by name."""
        out = {"psi1": self.psi1, "psi0": self.psi0, "rho": self.rho, "eta": self.eta}
        for e in range(self.sigma.shape[1]):
            out[f"sigma[{e + 1}]"] = self.sigma[:, e]
        return out

    def params(self, i: int, grids=None) -> ParticipantParams:
        return ParticipantParams(self.A1[i], self.psi1[i], self.sigma[i], self.rho[i], self.eta[i],
                                 self.A0[i], self.psi0[i])

    def to_dict(self):
        d = {k: getattr(self, k).tolist() for k in TRACE_ARRAYS}
        d["shape"] = {k: list(getattr(self, k).shape) for k in TRACE_ARRAYS}
        d.update(accepted=dict(self.accepted), rejected=dict(self.rejected), meta=self.meta)
        return d

    @classmethod
    def from_dict(cls, d):
        arrays = {k: np.asarray(d[k], dtype=int if k == "Z" else float).reshape(d["shape"][k])
                  for k in TRACE_ARRAYS}
        return cls(**arrays, accepted=dict(d.get("accepted", {})),
                   rejected=dict(d.get("rejected", {})), meta=dict(d.get("meta", {})))


# ---------------------------------------------------------------------------
# sampler
# ---------------------------------------------------------------------------

MH_BLOCKS = ("psi", "psi_scale", "sigma", "sigma_scale",
             "tilde_psi", "tilde_psi_scale", "tilde_sigma", "tilde_sigma_scale")


class GibbsSampler:
    """One Markov chain over the full mixture posterior."""

    def __init__(self, data: SamplerData, config: McmcConfig, rng: np.random.Generator):
        self.d = data
        self.cfg = config
        self.rng = rng
        self.pi = data.mc.pi
        self.accepted = {k: 0 for k in MH_BLOCKS}
        self.rejected = {k: 0 for k in MH_BLOCKS}
        self.pseudo = None
        self._pilot = None
        self.state = self._initial_state()
        self._pool()

    # -- setup --------------------------------------------------------------

    def _init_block(self, sd, kinds):
        d, rng = self.d, self.rng
        sigma = sd * np.exp(0.2 * rng.standard_normal(d.E))
        ri = int(rng.integers(len(d.rho_grid)))
        ei = int(rng.integers(len(d.eta_grid)))
        comps = []
        for k in kinds:
            L = d.L1 if k == 1 else d.L0
            comps.append(_Comp(np.zeros((d.E, L)), float(np.exp(0.3 * rng.standard_normal())), k))
        return _Block(sigma, ri, ei, comps)

    def _initial_state(self):
        d = self.d
        new = self._init_block(d.init_sd[0], (1, 0))
        new.comps[1].stats = d.new_nontarget
        tilde = []
        for n in range(d.N):
            b = self._init_block(d.init_sd[n + 1], (1,))
            b.comps[0].stats = d.sources[n]
            tilde.append(b)
        Z = np.full(d.N, self.cfg.z_init, dtype=int)
        state = ChainState(new, tilde, Z)
        # start every coefficient matrix at its conditional posterior mean
        for b in [new] + tilde:
            for c in b.comps:
                st = c.stats if c.stats is not None else d.new_target
                M, _ = conjugate_A(st.sxr[b.ri], st.n, d.pr[c.kind][b.ri], c.psi, d.lam[c.kind])
                c.A = M
        return state

    def reload(self):
        """Point every block at the current statistics of ``self.d`` (after ``SamplerData.load``)."""
        self.state.new.comps[1].stats = self.d.new_nontarget
        for n, b in enumerate(self.state.tilde):
            b.comps[0].stats = self.d.sources[n]
        self._pool()

    def _pool(self):
        """Recompute cluster 0's pooled target statistics from the current Z."""
        st = self.d.new_target
        for n in np.flatnonzero(self.state.Z == 1):
            st = st + self.d.sources[n]
        self.state.new.comps[0].stats = st

    # -- likelihood pieces --------------------------------------------------

    def _quad_tr(self, Q, sigma, ei):
        """tr(Sigma_s^{-1} Q); ``Q`` may carry a leading grid axis."""
        Qs = Q / np.outer(sigma, sigma)
        return self.d.cs_a[ei] * np.trace(Qs, axis1=-2, axis2=-1) - self.d.cs_b[ei] * Qs.sum(axis=(-2, -1))

    def _comp_Q(self, c: _Comp, ri=None, stats=None):
        st = c.stats if stats is None else stats
        pr = self.d.pr[c.kind]
        if ri is None:
            AS = np.einsum("el,gfl->gef", c.A, st.sxr)
            C1 = AS + AS.transpose(0, 2, 1)
            C2 = np.einsum("el,glm,fm->gef", c.A, pr, c.A)
            return st.sxx - c.psi * C1 + (st.n * c.psi * c.psi) * C2
        AS = c.A @ st.sxr[ri].T
        return st.sxx[ri] - c.psi * (AS + AS.T) + (st.n * c.psi * c.psi) * (c.A @ pr[ri] @ c.A.T)

    def _block_QA(self, b: _Block):
        Q = np.zeros((self.d.E, self.d.E))
        ncols = 0
        for c in b.comps:
            Q += (c.A / self.d.lam[c.kind]) @ c.A.T
            ncols += c.A.shape[1]
        return Q, ncols

    def _data_loglik(self, stats: _GroupStats, A, psi, kind, sigma, ri, ei):
        """Full log-likelihood of a group of epochs under one parameter set."""
        if stats.n == 0:
            return 0.0
        d = self.d
        Q = self._comp_Q(_Comp(A, psi, kind, stats), ri)
        n, E, T = stats.n, d.E, d.T
        return float(-0.5 * (n * E * T * LOG_2PI + n * T * (2.0 * np.log(sigma).sum() + d.cs_ld[ei])
                             + n * E * d.ld_t[ri] + self._quad_tr(Q, sigma, ei)))

    def _log_prior_tilde(self, b: _Block):
        """Prior density of a tilde block in (A, log psi, log sigma, grid index) coordinates."""
        d = self.d
        c = b.comps[0]
        QA, L = self._block_QA(b)
        lp = -0.5 * (d.E * L * LOG_2PI + L * (2.0 * np.log(b.sigma).sum() + d.cs_ld[b.ei])
                     + d.E * np.log(d.lam1).sum() + self._quad_tr(QA, b.sigma, b.ei))
        lp += float(lognormal_logpdf(c.psi)) + np.log(c.psi)
        lp += float(np.sum(halfcauchy_logpdf(b.sigma) + np.log(b.sigma)))
        lp -= np.log(len(d.rho_grid)) + np.log(len(d.eta_grid))
        return float(lp)

    # -- Gibbs blocks -------------------------------------------------------

    def _row_chol(self, b: _Block):
        return b.sigma[:, None] * self.d.cs_chol[b.ei]

    def _update_A_block(self, b: _Block):
        d = self.d
        C = self._row_chol(b)
        for c in b.comps:
            st = c.stats
            M, Lp = conjugate_A(st.sxr[b.ri], st.n, d.pr[c.kind][b.ri], c.psi, d.lam[c.kind])
            c.A = sample_conjugate_A(M, Lp, C, self.rng)

    def update_A(self):
        """Conjugate draws of all coefficient matrices; matched sources' tilde sets are refreshed."""
        self._update_A_block(self.state.new)
        for n, b in enumerate(self.state.tilde):
            if self.state.Z[n] == 0:
                self._update_A_block(b)
            else:
                self._refresh_tilde(n)

    def _refresh_tilde(self, n):
        if self.pseudo is not None:
            self.pseudo[n].draw_into(self.state.tilde[n], self)
        else:
            self._draw_prior_into(self.state.tilde[n])

    def _draw_prior_into(self, b: _Block):
        d, rng = self.d, self.rng
        b.sigma = np.abs(5.0 * rng.standard_cauchy(d.E))
        b.sigma = np.maximum(b.sigma, 1e-300)
        b.ei = int(rng.integers(len(d.eta_grid)))
        b.ri = int(rng.integers(len(d.rho_grid)))
        c = b.comps[0]
        c.psi = float(np.exp(rng.standard_normal()))
        c.A = self._row_chol(b) @ rng.standard_normal((d.E, d.L1)) * np.sqrt(d.lam1)[None, :]

    def _mh(self, key, log_ratio):
        if np.log(self.rng.random()) < log_ratio:
            self.accepted[key] += 1
            return True
        self.rejected[key] += 1
        return False

    def _update_psi_block(self, b: _Block, tag):
        rng = self.rng
        for c in b.comps:
            st = c.stats
            if self.cfg.psi_step > 0:
                if st.n:
                    AS = c.A @ st.sxr[b.ri].T
                    t1 = self._quad_tr(AS + AS.T, b.sigma, b.ei)
                    t2 = st.n * self._quad_tr(c.A @ self.d.pr[c.kind][b.ri] @ c.A.T, b.sigma, b.ei)
                else:
                    t1 = t2 = 0.0

                def logt(p):
                    return 0.5 * (p * t1 - p * p * t2) + float(lognormal_logpdf(p)) + np.log(p)

                prop = c.psi * np.exp(self.cfg.psi_step * rng.standard_normal())
                if self._mh(tag + "psi", logt(prop) - logt(c.psi)):
                    c.psi = float(prop)
            if self.cfg.scale_step > 0:
                # (psi, A) -> (k psi, A / k): mean unchanged, only priors move
                k = np.exp(self.cfg.scale_step * rng.standard_normal())
                qa = self._quad_tr((c.A / self.d.lam[c.kind]) @ c.A.T, b.sigma, b.ei)
                new_psi = c.psi * k
                lr = (-0.5 * qa * (1.0 / (k * k) - 1.0)
                      + float(lognormal_logpdf(new_psi)) - float(lognormal_logpdf(c.psi))
                      + (1 - c.A.size) * np.log(k))
                if self._mh(tag + "psi_scale", lr):
                    c.psi = float(new_psi)
                    c.A = c.A / k

    def update_psi(self):
        self._update_psi_block(self.state.new, "")
        for n, b in enumerate(self.state.tilde):
            if self.state.Z[n] == 0:
                self._update_psi_block(b, "tilde_")

    def _sigma_target(self, b: _Block):
        d = self.d
        Q = sum(self._comp_Q(c, b.ri) for c in b.comps)
        QA, LA = self._block_QA(b)
        Q = Q + QA
        ncols = b.n_epochs * d.T + LA

        def logt(sig):
            return float(-0.5 * (2.0 * ncols * np.log(sig).sum() + self._quad_tr(Q, sig, b.ei))
                         + np.sum(halfcauchy_logpdf(sig) + np.log(sig)))
        return Q, ncols, logt

    def _update_sigma_block(self, b: _Block, tag):
        if self.cfg.sigma_step > 0:
            _, _, logt = self._sigma_target(b)
            cur = logt(b.sigma)
            for e in range(self.d.E):
                prop = b.sigma.copy()
                prop[e] *= np.exp(self.cfg.sigma_step * self.rng.standard_normal())
                new = logt(prop)
                if self._mh(tag + "sigma", new - cur):
                    b.sigma, cur = prop, new
        if self.cfg.scale_step > 0:
            self._sigma_scale_move(b, tag)

    def _sigma_scale_move(self, b: _Block, tag):
        """(sigma, A) -> (k sigma, k A): the coefficient prior moves with sigma, so
        only the likelihood and the scale prior enter the ratio."""
        d = self.d
        k = np.exp(self.cfg.scale_step * self.rng.standard_normal())
        lk = np.log(k)
        lr = np.sum(halfcauchy_logpdf(k * b.sigma) - halfcauchy_logpdf(b.sigma)) + d.E * lk
        if b.n_epochs:
            q_old = sum(self._comp_Q(c, b.ri) for c in b.comps)
            q_new = sum(self._comp_Q(_Comp(c.A * k, c.psi, c.kind, c.stats), b.ri) for c in b.comps)
            lr += (-b.n_epochs * d.T * d.E * lk
                   - 0.5 * (self._quad_tr(q_new, b.sigma, b.ei) / (k * k)
                            - self._quad_tr(q_old, b.sigma, b.ei)))
        if self._mh(tag + "sigma_scale", lr):
            b.sigma = b.sigma * k
            for c in b.comps:
                c.A = c.A * k

    def update_sigma(self):
        self._update_sigma_block(self.state.new, "")
        for n, b in enumerate(self.state.tilde):
            if self.state.Z[n] == 0:
                self._update_sigma_block(b, "tilde_")

    def _categorical(self, logw):
        w = np.exp(logw - logsumexp(logw))
        cw = np.cumsum(w)
        return int(min(np.searchsorted(cw, self.rng.random() * cw[-1], side="right"), len(w) - 1))

    def _update_corr_block(self, b: _Block):
        d = self.d
        # rho: A-prior term does not depend on rho
        Qg = sum(self._comp_Q(c) for c in b.comps)
        lw = -0.5 * (b.n_epochs * d.E * d.ld_t + self._quad_tr(Qg, b.sigma, b.ei))
        b.ri = self._categorical(lw)
        # eta: the coefficient prior shares the spatial covariance
        Q = Qg[b.ri]
        QA, LA = self._block_QA(b)
        Q = Q + QA
        ncols = b.n_epochs * d.T + LA
        Qs = Q / np.outer(b.sigma, b.sigma)
        lw = -0.5 * (ncols * d.cs_ld + d.cs_a * np.trace(Qs) - d.cs_b * Qs.sum())
        b.ei = self._categorical(lw)

    def update_corr(self):
        self._update_corr_block(self.state.new)
        for n, b in enumerate(self.state.tilde):
            if self.state.Z[n] == 0:
                self._update_corr_block(b)

    def match_loglik(self, n):
        """(log L under cluster 0, log L under tilde set) for source ``n`` (0-based)."""
        d = self.d
        st = d.sources[n]
        new, b = self.state.new, self.state.tilde[n]
        c0, cn = new.comps[0], b.comps[0]
        l0 = self._data_loglik(st, c0.A, c0.psi, 1, new.sigma, new.ri, new.ei)
        ln = self._data_loglik(st, cn.A, cn.psi, 1, b.sigma, b.ri, b.ei)
        return l0, ln

    def match_probabilities(self):
        p = np.zeros(self.d.N)
        for n in range(self.d.N):
            l0, ln = self.match_loglik(n)
            lq = lp = 0.0
            if self.pseudo is not None:
                b = self.state.tilde[n]
                lq = self.pseudo[n].logpdf(b, self)
                lp = self._log_prior_tilde(b)
            p[n] = match_probability(l0, ln, self.pi, lq, lp)
        return p

    def update_Z(self):
        if self.d.N == 0 or self._pilot is not None:
            return
        p = self.match_probabilities()
        u = self.rng.random(self.d.N)
        self.state.Z = (u < p).astype(int)
        self._pool()

    def sweep(self):
        it = self.state.iteration
        for name, fn in (("A", self.update_A), ("psi", self.update_psi), ("sigma", self.update_sigma),
                         ("corr", self.update_corr), ("Z", self.update_Z)):
            try:
                with np.errstate(over="ignore", under="ignore"):
                    fn()
            except (NumericalDomainError, np.linalg.LinAlgError, FloatingPointError) as exc:
                raise SamplerError(str(exc), iteration=it, block=name) from exc
        self.state.iteration += 1

    # -- pilot pseudo-prior ---------------------------------------------------

    def begin_pilot(self):
        self.state.Z[:] = 0
        self._pool()
        self._pilot = [[] for _ in range(self.d.N)]

    def record_pilot(self):
        for n, b in enumerate(self.state.tilde):
            self._pilot[n].append((b.comps[0].A * b.comps[0].psi, b.comps[0].psi,
                                   b.sigma.copy(), b.ri, b.ei))

    def end_pilot(self):
        self.pseudo = [_PseudoPrior.fit(rec, self.d) for rec in self._pilot]
        self._pilot = None


class _PseudoPrior:
    """Gaussian on (vec(psi A), log psi, log sigma) with smoothed categoricals on the grids."""

    def __init__(self, mean, chol, pr, pe, E, L):
        self.mean, self.chol, self.pr, self.pe = mean, chol, pr, pe
        self.E, self.L = E, L
        self._logdet = 2.0 * np.log(np.diag(chol)).sum()

    @classmethod
    def fit(cls, records, d: SamplerData):
        U = np.array([np.concatenate([B.ravel(), [np.log(p)], np.log(s)]) for B, p, s, _, _ in records])
        mean = U.mean(axis=0)
        cov = np.cov(U, rowvar=False) if len(U) > 1 else np.eye(U.shape[1])
        cov = 1.5 * np.atleast_2d(cov) + 1e-8 * np.eye(U.shape[1])
        chol = np.linalg.cholesky(cov)
        ri = np.bincount([r[3] for r in records], minlength=len(d.rho_grid)) + 0.5
        ei = np.bincount([r[4] for r in records], minlength=len(d.eta_grid)) + 0.5
        return cls(mean, chol, ri / ri.sum(), ei / ei.sum(), d.E, d.L1)

    def _split(self, u):
        EL = self.E * self.L
        return u[:EL].reshape(self.E, self.L), np.exp(u[EL]), np.exp(u[EL + 1:])

    def draw_into(self, b: _Block, sampler: GibbsSampler):
        rng = sampler.rng
        u = self.mean + self.chol @ rng.standard_normal(self.mean.size)
        B, psi, sigma = self._split(u)
        c = b.comps[0]
        c.psi, c.A, b.sigma = float(psi), B / psi, sigma
        b.ri = sampler._categorical(np.log(self.pr))
        b.ei = sampler._categorical(np.log(self.pe))

    def logpdf(self, b: _Block, sampler: GibbsSampler):
        """Density in (A, log psi, log sigma, grid index) coordinates."""
        c = b.comps[0]
        u = np.concatenate([(c.A * c.psi).ravel(), [np.log(c.psi)], np.log(b.sigma)])
        z = linalg.solve_triangular(self.chol, u - self.mean, lower=True)
        lq = -0.5 * (u.size * LOG_2PI + self._logdet + z @ z)
        lq += self.E * self.L * np.log(c.psi)   # d(psi A) / dA
        return float(lq + np.log(self.pr[b.ri]) + np.log(self.pe[b.ei]))


# ---------------------------------------------------------------------------
# running chains
# ---------------------------------------------------------------------------

def _chain_rng(chain_seed):
    return np.random.default_rng(chain_seed)


def run_chain(config: McmcConfig, dataset: Dataset, model_config: ModelConfig, chain_seed,
              data: SamplerData | None = None) -> ChainTrace:
    """Run one chain: burn-in, then ``n_samples`` draws kept every ``thin`` sweeps."""
    d = data if data is not None else SamplerData(dataset, model_config)
    sampler = GibbsSampler(d, config, _chain_rng(chain_seed))
    S, E, N = config.n_samples, d.E, d.N
    out = {
        "A1": np.empty((S, E, d.L1)), "A0": np.empty((S, E, d.L0)),
        "psi1": np.empty(S), "psi0": np.empty(S), "sigma": np.empty((S, E)),
        "rho": np.empty(S), "eta": np.empty(S), "Z": np.empty((S, N), dtype=int),
        "tilde_psi": np.empty((S, N)), "tilde_sigma": np.empty((S, N, E)),
        "tilde_rho": np.empty((S, N)), "tilde_eta": np.empty((S, N)),
    }
    pilot = config.pseudo_prior == "pilot" and N > 0
    if pilot:
        sampler.begin_pilot()
    for it in range(config.n_burnin):
        sampler.sweep()
        if pilot and it < config.n_pilot:
            sampler.record_pilot()
            if it == config.n_pilot - 1:
                sampler.end_pilot()
    st = sampler.state
    for s in range(S):
        for _ in range(config.thin):
            sampler.sweep()
        new = st.new
        out["A1"][s] = new.comps[0].A
        out["A0"][s] = new.comps[1].A
        out["psi1"][s] = new.comps[0].psi
        out["psi0"][s] = new.comps[1].psi
        out["sigma"][s] = new.sigma
        out["rho"][s] = d.rho_grid[new.ri]
        out["eta"][s] = d.eta_grid[new.ei]
        out["Z"][s] = st.Z
        for n, b in enumerate(st.tilde):
            out["tilde_psi"][s, n] = b.comps[0].psi
            out["tilde_sigma"][s, n] = b.sigma
            out["tilde_rho"][s, n] = d.rho_grid[b.ri]
            out["tilde_eta"][s, n] = d.eta_grid[b.ei]
    seed = chain_seed if isinstance(chain_seed, int) else list(np.atleast_1d(chain_seed).tolist())
    meta = {"chain_seed": seed, "mcmc": config.to_dict(), "L1": d.L1, "L0": d.L0}
    return ChainTrace(**out, accepted=dict(sampler.accepted), rejected=dict(sampler.rejected), meta=meta)


def _run_chain_job(args):
    return run_chain(*args)


def chain_seeds(config: McmcConfig):
    return [(int(config.seed), k) for k in range(config.n_chains)]


def run_chains(config: McmcConfig, dataset: Dataset, model_config: ModelConfig,
               max_workers: int | None = None) -> list:
    """Run ``config.n_chains`` independent chains.

    Parallelism is capped by ``max_workers`` or the ``BSM_THREADS`` environment
    variable; output never depends on scheduling.
    """
    if max_workers is None:
        env = os.environ.get("BSM_THREADS")
        max_workers = int(env) if env else config.n_chains
    max_workers = max(1, min(int(max_workers), config.n_chains))
    seeds = chain_seeds(config)
    if max_workers == 1:
        d = SamplerData(dataset, model_config)
        return [run_chain(config, dataset, model_config, s, data=d) for s in seeds]
    with ProcessPoolExecutor(max_workers=max_workers) as ex:
        return list(ex.map(_run_chain_job, [(config, dataset, model_config, s) for s in seeds]))


# ---------------------------------------------------------------------------
# diagnostics
# ---------------------------------------------------------------------------

def psrf(chains) -> float:
    """Potential scale reduction factor of an (m chains x n draws) array."""
    x = np.asarray(chains, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DiagnosticError("PSRF needs at least two chains")
    m, n = x.shape
    if n < 10:
        raise DiagnosticError(f"PSRF needs at least 10 draws per chain, got {n}")
    W = x.var(axis=1, ddof=1).mean()
    if not W > 0:
        raise DiagnosticError("zero within-chain variance (degenerate chain)")
    B = n * x.mean(axis=1).var(ddof=1)
    V = (n - 1) / n * W + B / n
    return float(np.sqrt(V / W))


def gelman_rubin(traces, select=None, on_degenerate="raise") -> dict:
    """PSRF for every scalar new-participant parameter (or those named in ``select``).

    With ``on_degenerate="nan"`` a zero within-chain variance yields NaN
    instead of raising.
    """
    if len(traces) < 2:
        raise DiagnosticError("PSRF needs at least two chains")
    lengths = {t.n_draws for t in traces}
    if len(lengths) != 1:
        raise DiagnosticError(f"chains have unequal lengths {sorted(lengths)}")
    names = list(traces[0].scalars()) if select is None else list(select)
    out = {}
    for name in names:
        x = np.stack([t.scalars()[name] for t in traces])
        try:
            out[name] = psrf(x)
        except DiagnosticError:
            if on_degenerate == "nan" and x.shape[1] >= 10:
                out[name] = float("nan")
            else:
                raise
    return out
