"""Shared builders for sampler tests: tiny datasets and the joint-consistency
(Geweke) harness."""
import numpy as np

from bsmatch import rcp
from bsmatch.mcmc import GibbsSampler, McmcConfig, SamplerData
from bsmatch.model import Dataset, ModelConfig, ParticipantData
from bsmatch.numkernel import KernelSpec, ar1_corr, cs_corr


def tiny_config(E=1, T0=5, pi=0.5, **kw):
    return ModelConfig(E=E, T0=T0, target_kernel=KernelSpec(0.3, 1.2),
                       nontarget_kernel=KernelSpec(0.4, 1.2), pi=pi, **kw)


def skeleton(rng, n_seqs, char="T"):
    """Stimulus layout of ``n_seqs`` sequences: (y, char_idx, seq_idx, stim_idx, code)."""
    codes, y = [], []
    for _ in range(n_seqs):
        W = rcp.random_sequence(rng)
        codes.append(W)
        y.append(rcp.stimulus_type(W, char))
    n = 12 * n_seqs
    return (np.concatenate(y), np.zeros(n, int), np.repeat(np.arange(n_seqs), 12),
            np.tile(np.arange(12), n_seqs), np.concatenate(codes))


def epochs(rng, y, M1, M0, sigma, eta, rho):
    E, T = M1.shape
    S = sigma[:, None] * cs_corr(eta, E) * sigma[None, :]
    Ls, Lt = np.linalg.cholesky(S), np.linalg.cholesky(ar1_corr(rho, T))
    noise = Ls @ rng.standard_normal((len(y), E, T)) @ Lt.T
    return np.where(np.asarray(y)[:, None, None] == 1, M1, M0) + noise


def make_dataset(rng, layouts, means, covs):
    """``layouts[n]`` from :func:`skeleton`; ``means[n] = (M1, M0)``; ``covs[n] = (sigma, eta, rho)``."""
    parts = []
    for lay, (M1, M0), (s, e, r) in zip(layouts, means, covs):
        X = epochs(rng, lay[0], M1, M0, np.asarray(s, float), e, r)
        parts.append(ParticipantData(X, *lay))
    return Dataset(parts)


def null_dataset(E, T0, N=0):
    """Dataset without any epochs (prior-only runs)."""
    empty = lambda: ParticipantData(np.zeros((0, E, T0)), [], [], [], [], [])
    return Dataset([empty() for _ in range(N + 1)])


# ---------------------------------------------------------------------------
# joint-consistency harness
# ---------------------------------------------------------------------------

def draw_prior_block(rng, d, kinds):
    sigma = np.abs(5.0 * rng.standard_cauchy(d.E))
    ri, ei = int(rng.integers(len(d.rho_grid))), int(rng.integers(len(d.eta_grid)))
    C = sigma[:, None] * d.cs_chol[ei]
    comps = []
    for k in kinds:
        lam = d.lam[k]
        A = C @ rng.standard_normal((d.E, lam.size)) * np.sqrt(lam)[None, :]
        comps.append((A, float(np.exp(rng.standard_normal()))))
    return sigma, ri, ei, comps


def forward_params(rng, d, pi):
    new = draw_prior_block(rng, d, (1, 0))
    tilde = [draw_prior_block(rng, d, (1,)) for _ in range(d.N)]
    Z = (rng.random(d.N) < pi).astype(int)
    return new, tilde, Z


def generate(rng, d, layouts, new, tilde, Z):
    """Data given parameters; source targets follow cluster 0 when matched."""
    def means(block):
        sigma, ri, ei, comps = block
        out = [psi * A @ (d.basis1.Psi if i == 0 else d.basis0.Psi) for i, (A, psi) in enumerate(comps)]
        return out
    m_new = means(new)
    parts = [ParticipantData(epochs(rng, layouts[0][0], m_new[0], m_new[1], new[0],
                                    d.eta_grid[new[2]], d.rho_grid[new[1]]), *layouts[0])]
    for n in range(d.N):
        blk = new if Z[n] == 1 else tilde[n]
        M1 = means(blk)[0]
        parts.append(ParticipantData(epochs(rng, layouts[n + 1][0], M1, 0 * M1, blk[0],
                                            d.eta_grid[blk[2]], d.rho_grid[blk[1]]), *layouts[n + 1]))
    return Dataset(parts)


def set_state(sampler, new, tilde, Z):
    st = sampler.state
    st.new.sigma, st.new.ri, st.new.ei = new[0].copy(), new[1], new[2]
    for c, (A, psi) in zip(st.new.comps, new[3]):
        c.A, c.psi = A.copy(), psi
    for b, t in zip(st.tilde, tilde):
        b.sigma, b.ri, b.ei = t[0].copy(), t[1], t[2]
        b.comps[0].A, b.comps[0].psi = t[3][0][0].copy(), t[3][0][1]
    st.Z = np.asarray(Z, int).copy()
    sampler.reload()


def state_tuple(sampler):
    st = sampler.state
    new = (st.new.sigma.copy(), st.new.ri, st.new.ei, [(c.A.copy(), c.psi) for c in st.new.comps])
    tilde = [(b.sigma.copy(), b.ri, b.ei, [(b.comps[0].A.copy(), b.comps[0].psi)]) for b in st.tilde]
    return new, tilde, st.Z.copy()


def summaries(new, Z):
    return np.array([np.log(new[3][0][1]), np.log(new[0][0]), Z[0] if len(Z) else 0.0])


def geweke(n_forward, n_chain, seed=0, T0=5, n_seqs=1, mcmc=None):
    """Forward vs successive-conditional draws of (log psi_{0,1}, log sigma_{0,1}, Z_1)."""
    rng = np.random.default_rng(seed)
    mc = tiny_config(T0=T0)
    layouts = [skeleton(rng, n_seqs), skeleton(rng, n_seqs)]
    mcmc = mcmc or McmcConfig(n_burnin=0, n_samples=1, psi_step=0.5, sigma_step=0.5, scale_step=0.5)
    # forward
    d0 = SamplerData(null_dataset(1, T0, N=1), mc)
    fwd = np.array([summaries(*forward_params(rng, d0, mc.pi)[0::2]) for _ in range(n_forward)])
    # successive conditional
    new, tilde, Z = forward_params(rng, d0, mc.pi)
    ds = generate(rng, d0, layouts, new, tilde, Z)
    d = SamplerData(ds, mc)
    sampler = GibbsSampler(d, mcmc, np.random.default_rng([seed, 1]))
    set_state(sampler, new, tilde, Z)
    sc = np.empty((n_chain, 3))
    for i in range(n_chain):
        sampler.sweep()
        new, tilde, Z = state_tuple(sampler)
        d.load(generate(rng, d, layouts, new, tilde, Z))
        sampler.reload()
        sc[i] = summaries(new, Z)
    return fwd, sc


def batch_means_se(x, n_batches=25):
    x = np.asarray(x, float)
    b = len(x) // n_batches
    means = x[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return means.std(ddof=1) / np.sqrt(n_batches)
