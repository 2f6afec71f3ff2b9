"""Character-level prediction under the row-and-column paradigm, model
selection between the borrowing fit and the reference fit, and accuracy
curves.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import rcp
from .errors import ContractError, ValidationError
from .mcmc import ChainTrace
from .numkernel import EigenBasis, ar1_inverse, cs_inverse

MODE_BSM = "BSM"
MODE_REFERENCE = "BSM-Reference"


@dataclass(frozen=True)
class CharPosterior:
    """Probabilities over the 36 grid cells in row-major order."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (rcp.N_CHARS,) or np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
            raise ValidationError("character posterior must be 36 non-negative values summing to 1",
                                  rule="probability")
        object.__setattr__(self, "probs", p)

    def prob(self, c: str) -> float:
        return float(self.probs[rcp.char_index(c)])

    def as_dict(self):
        return {c: float(p) for c, p in zip(rcp.CHARACTERS, self.probs)}


@dataclass(frozen=True)
class SelectionDecision:
    mode: str
    match_means: np.ndarray
    delta_z: float

    def to_dict(self):
        return {"mode": self.mode, "match_means": [round(float(v), 6) for v in self.match_means],
                "delta_z": self.delta_z}


def _as_traces(traces):
    if isinstance(traces, ChainTrace):
        return [traces]
    return list(traces)


def select_model(traces, delta_z: float) -> SelectionDecision:
    """Use the borrowing fit iff some source has posterior match mean >= ``delta_z``."""
    traces = _as_traces(traces)
    if not traces or any(t.n_draws == 0 for t in traces):
        raise ContractError("cannot select a model from an empty trace")
    Z = np.concatenate([t.Z for t in traces], axis=0)
    means = Z.mean(axis=0) if Z.shape[1] else np.zeros(0)
    mode = MODE_BSM if means.size and means.max() >= delta_z else MODE_REFERENCE
    return SelectionDecision(mode, means, float(delta_z))


class PosteriorDraws:
    """New-participant draws reduced to per-draw linear discriminants.

    For one epoch ``X`` the log-likelihood difference between target and
    non-target is ``<W_d, X> - c_d`` for draw ``d``.
    """

    def __init__(self, traces, basis1: EigenBasis, basis0: EigenBasis, thin: int = 1):
        traces = _as_traces(traces)
        if not traces:
            raise ContractError("no draws supplied")
        cat = {k: np.concatenate([getattr(t, k)[::thin] for t in traces])
               for k in ("A1", "A0", "psi1", "psi0", "sigma", "rho", "eta")}
        if cat["psi1"].size == 0:
            raise ContractError("no draws supplied")
        self.basis1, self.basis0 = basis1, basis0
        self.M1 = cat["psi1"][:, None, None] * np.einsum("del,lt->det", cat["A1"], basis1.Psi)
        self.M0 = cat["psi0"][:, None, None] * np.einsum("del,lt->det", cat["A0"], basis0.Psi)
        D, E, T = self.M1.shape
        self.W = np.empty((D, E, T))
        self.c = np.empty(D)
        for d in range(D):
            sig = cat["sigma"][d]
            Sinv = cs_inverse(cat["eta"][d], E) / np.outer(sig, sig)
            Rinv = ar1_inverse(cat["rho"][d], T)
            G1 = Sinv @ self.M1[d] @ Rinv
            G0 = Sinv @ self.M0[d] @ Rinv
            self.W[d] = G1 - G0
            self.c[d] = 0.5 * (np.sum(G1 * self.M1[d]) - np.sum(G0 * self.M0[d]))

    @classmethod
    def from_params(cls, params_list, basis1, basis0):
        """Build from a list of ParticipantParams (new-participant blocks)."""
        t = ChainTrace(
            A1=np.stack([p.A1 for p in params_list]), A0=np.stack([p.A0 for p in params_list]),
            psi1=np.array([p.psi1 for p in params_list]), psi0=np.array([p.psi0 for p in params_list]),
            sigma=np.stack([p.sigma for p in params_list]), rho=np.array([p.rho for p in params_list]),
            eta=np.array([p.eta for p in params_list]), Z=np.zeros((len(params_list), 0), dtype=int),
            tilde_psi=np.zeros((len(params_list), 0)), tilde_sigma=np.zeros((len(params_list), 0, 1)),
            tilde_rho=np.zeros((len(params_list), 0)), tilde_eta=np.zeros((len(params_list), 0)))
        return cls([t], basis1, basis0)

    @property
    def n_draws(self):
        return self.c.size

    def discriminant(self, X) -> np.ndarray:
        """(draws, epochs) log-likelihood ratio target vs non-target."""
        X = np.asarray(X, dtype=float)
        return np.einsum("det,net->dn", self.W, X) - self.c[:, None]

    def erp_summary(self, level=0.95):
        """Posterior mean and equal-tailed band of the target and non-target curves."""
        lo, hi = 50 * (1 - level), 50 * (1 + level)
        out = {}
        for name, M in (("target", self.M1), ("nontarget", self.M0)):
            out[name] = (M.mean(axis=0), np.percentile(M, lo, axis=0), np.percentile(M, hi, axis=0))
        return out


def _code_scores(seqs, draws: PosteriorDraws) -> np.ndarray:
    """Sum over sequences of the discriminant arranged by stimulus code: (draws, 12)."""
    acc = np.zeros((draws.n_draws, rcp.N_CODES))
    for X, W in seqs:
        W = rcp.validate_codes(W)
        X = np.asarray(X, dtype=float)
        if X.shape[0] != rcp.N_CODES:
            raise ValidationError(f"a sequence needs 12 epochs, got {X.shape[0]}", rule="permutation")
        acc[:, W - 1] += draws.discriminant(X)
    return acc


def _posterior_from_codes(acc) -> CharPosterior:
    score = acc[:, rcp.CHAR_CODES[:, 0] - 1] + acc[:, rcp.CHAR_CODES[:, 1] - 1] + np.log(1.0 / rcp.N_CHARS)
    logp = score - logsumexp(score, axis=1, keepdims=True)
    probs = np.exp(logp).mean(axis=0)
    return CharPosterior(probs / probs.sum())


def char_log_posterior(seqs, draws: PosteriorDraws) -> CharPosterior:
    """Posterior over characters given one or more test sequences.

    Parameters
    ----------
    seqs : iterable of (X, W)
        ``X`` is (12, E, T0) epochs in presentation order, ``W`` the codes.
    draws : PosteriorDraws
        New-participant posterior draws.
    """
    return _posterior_from_codes(_code_scores(list(seqs), draws))


def classify(post: CharPosterior) -> str:
    """Most probable character; ``argmax`` returns the first maximum (row-major)."""
    return rcp.CHARACTERS[int(np.argmax(post.probs))]


def split_characters(test):
    """Group a participant's test epochs as [(true char, [(X, W), ...]), ...]."""
    chars = {}
    for c, s, seq in test.sequences():
        chars.setdefault(c, []).append((s, seq))
    out = []
    for c in sorted(chars):
        seqs = [seq for _, seq in sorted(chars[c], key=lambda v: v[0])]
        truth = rcp.char_from_types(seqs[0].code, seqs[0].y)
        out.append((truth, [(q.X, q.code) for q in seqs]))
    return out


def accuracy_curve(test, draws: PosteriorDraws, max_seqs: int, return_posteriors=False):
    """Fraction of characters classified correctly using the first 1..max_seqs sequences."""
    groups = split_characters(test)
    hits = np.zeros(max_seqs)
    posts = []
    for truth, seqs in groups:
        acc = np.zeros((draws.n_draws, rcp.N_CODES))
        row = []
        for s in range(max_seqs):
            if s < len(seqs):
                acc += _code_scores([seqs[s]], draws)
            post = _posterior_from_codes(acc)
            hits[s] += classify(post) == truth
            row.append(post)
        posts.append((truth, row))
    curve = hits / max(len(groups), 1)
    return (curve, posts) if return_posteriors else curve
