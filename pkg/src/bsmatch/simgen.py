"""Synthetic speller data: canonical ERP shapes, scenario presets, epoch
generation with matrix-normal or multivariate-t noise, and JSON parameter
files for participant-specific ("real-data-style") scenarios.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rcp
from .errors import ParameterDomainError, ValidationError
from .model import Dataset, ModelConfig, ParticipantData
from .numkernel import ar1_corr, cs_corr

TARGET_AMP = 6.0
NONTARGET_AMP = 1.0
BUMP_WIDTH = 3.0
TARGET_PEAK = 10
NONTARGET_PEAK = 12

PRESETS = ("single_case_s1", "single_case_s2", "multi_case_1", "multi_case_2",
           "real_style_normal", "real_style_t")

# (rho, eta, sigma_1, sigma_2) of the three naive multi-channel groups
MULTI_GROUP_PARAMS = ((0.7, 0.6, 8.0, 8.0), (0.7, 0.4, 8.0, 6.0), (0.5, 0.4, 2.0, 2.0))
# (rho, sigma) of the three single-channel groups
SINGLE_GROUP_PARAMS = ((0.6, 3.0), (0.6, 4.0), (0.7, 3.0))


@dataclass(frozen=True)
class GroupSpec:
    """Generating parameters of one group (or one participant)."""

    target_shape: np.ndarray
    nontarget_shape: np.ndarray
    sigma: np.ndarray
    rho: float
    eta: float
    noise_kind: str = "normal"
    df: float | None = None

    def __post_init__(self):
        for name in ("target_shape", "nontarget_shape"):
            a = np.atleast_2d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(a)):
                raise ParameterDomainError(f"{name} must be finite")
            object.__setattr__(self, name, a)
        sigma = np.atleast_1d(np.asarray(self.sigma, dtype=float))
        object.__setattr__(self, "sigma", sigma)
        if np.any(sigma <= 0):
            raise ParameterDomainError("sigma must be > 0")
        if self.target_shape.shape != self.nontarget_shape.shape:
            raise ParameterDomainError("target and non-target shapes differ in size")
        if self.target_shape.shape[0] != sigma.size:
            raise ParameterDomainError("one sigma per channel is required")
        if not (0 <= self.rho < 1 and 0 <= self.eta < 1):
            raise ParameterDomainError("rho and eta must lie in [0, 1)")
        if self.noise_kind not in ("normal", "student_t"):
            raise ParameterDomainError(f"unknown noise kind {self.noise_kind!r}")
        if self.noise_kind == "student_t" and not (self.df is not None and self.df > 2):
            raise ParameterDomainError("student-t noise needs df > 2")

    @property
    def E(self):
        return self.target_shape.shape[0]

    @property
    def T0(self):
        return self.target_shape.shape[1]

    def spatial(self):
        return self.sigma[:, None] * cs_corr(self.eta, self.E) * self.sigma[None, :]

    def with_noise(self, kind, df=None, variance_multiplier=1.0):
        return GroupSpec(self.target_shape, self.nontarget_shape,
                         self.sigma * np.sqrt(variance_multiplier), self.rho, self.eta, kind, df)

    def to_dict(self):
        return {"target_shape": self.target_shape.tolist(),
                "nontarget_shape": self.nontarget_shape.tolist(),
                "sigma": self.sigma.tolist(), "rho": self.rho, "eta": self.eta,
                "noise_kind": self.noise_kind, "df": self.df}


@dataclass(frozen=True)
class ScenarioSpec:
    """Who belongs to which group and what each participant spells.

    ``labels`` gives the group of sources 1..N; the new participant uses
    ``new_group``.  With ``per_participant`` the groups list is indexed by
    participant instead of by label.
    """

    labels: tuple
    train_chars: str = "TTT"
    train_seqs: int = 10
    test_chars: str = "THE_QUICK_BROWN_FOX"
    test_seqs: int = 10
    new_group: int = 0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple(int(v) for v in self.labels))
        for c in self.train_chars + self.test_chars:
            rcp.grid_lookup(c)
        if self.train_seqs < 1 or self.test_seqs < 1:
            raise ParameterDomainError("sequence counts must be >= 1")


def bump(T0, peak, amp, width=BUMP_WIDTH):
    """Gaussian bump; ``peak`` is a 1-based time index."""
    t = np.arange(1, T0 + 1, dtype=float)
    return amp * np.exp(-0.5 * ((t - peak) / width) ** 2)


def canonical_shapes(scenario_id: str, T0: int = 35, E: int | None = None):
    """Group mean functions as a list of (target, non-target) arrays of shape (E, T0).

    ``scenario_id`` is ``"single"`` (E = 1) or ``"naive_multi"`` (E = 2).
    """
    tgt = bump(T0, TARGET_PEAK, TARGET_AMP)
    ntg = bump(T0, NONTARGET_PEAK, NONTARGET_AMP)
    if scenario_id == "single":
        if E not in (None, 1):
            raise ParameterDomainError("the single-channel scenario has E = 1")
        g0 = (tgt[None], ntg[None])
        g1 = (-tgt[None], -ntg[None])
        g2 = (bump(T0, 25, TARGET_AMP)[None], ntg[None])
        return [g0, g1, g2]
    if scenario_id == "naive_multi":
        if E not in (None, 2):
            raise ParameterDomainError("the naive multi-channel scenario has E = 2")
        g0 = (np.stack([tgt, -tgt]), np.stack([ntg, -ntg]))
        g1 = (np.stack([tgt, -0.5 * tgt]), np.stack([ntg, -0.5 * ntg]))
        g2 = (np.stack([0.5 * tgt, -0.5 * tgt]), np.stack([0.5 * ntg, -0.5 * ntg]))
        return [g0, g1, g2]
    raise ParameterDomainError(f"unknown scenario {scenario_id!r}; use 'single' or 'naive_multi'")


def multi_groups(T0=35, noise_kind="normal", df=None):
    shapes = canonical_shapes("naive_multi", T0)
    return [GroupSpec(t, n, [s1, s2], rho, eta, noise_kind, df)
            for (t, n), (rho, eta, s1, s2) in zip(shapes, MULTI_GROUP_PARAMS)]


def single_groups(T0=35, noise_kind="normal", df=None):
    shapes = canonical_shapes("single", T0)
    # eta is irrelevant with one channel
    return [GroupSpec(t, n, [s], rho, 0.0, noise_kind, df)
            for (t, n), (rho, s) in zip(shapes, SINGLE_GROUP_PARAMS)]


# ---------------------------------------------------------------------------
# noise and epochs
# ---------------------------------------------------------------------------

def noise(rng, n, spatial, temporal, kind="normal", df=None):
    """``n`` draws of E x T noise with covariance ``temporal kron spatial`` (vec by columns).

    For ``kind="student_t"`` the scale matrix is the covariance times
    ``(df - 2) / df`` so that the covariance itself is matched.
    """
    Ls = np.linalg.cholesky(spatial)
    Lt = np.linalg.cholesky(temporal)
    Zm = rng.standard_normal((n, spatial.shape[0], temporal.shape[0]))
    X = Ls @ Zm @ Lt.T
    if kind == "student_t":
        w = rng.chisquare(df, size=n) / df
        X = X * np.sqrt((df - 2.0) / df / w)[:, None, None]
    return X


def _spell(rng, g: GroupSpec, chars, n_seqs):
    """All epochs for one participant spelling ``chars`` with ``n_seqs`` sequences each."""
    E, T0 = g.E, g.T0
    n = len(chars) * n_seqs * rcp.N_CODES
    codes = np.empty(n, dtype=int)
    y = np.empty(n, dtype=int)
    ci = np.repeat(np.arange(len(chars)), n_seqs * rcp.N_CODES)
    si = np.tile(np.repeat(np.arange(n_seqs), rcp.N_CODES), len(chars))
    ji = np.tile(np.arange(rcp.N_CODES), len(chars) * n_seqs)
    k = 0
    for c in chars:
        for _ in range(n_seqs):
            W = rcp.random_sequence(rng)
            codes[k:k + 12] = W
            y[k:k + 12] = rcp.stimulus_type(W, c)
            k += 12
    means = np.where(y[:, None, None] == 1, g.target_shape[None], g.nontarget_shape[None])
    X = means + noise(rng, n, g.spatial(), ar1_corr(g.rho, T0), g.noise_kind, g.df)
    return ParticipantData(X.reshape(n, E, T0), y, ci, si, ji, codes)


def participant_rng(seed, participant, part):
    """Stream for one participant; ``part`` 0 is training, 1 is testing."""
    return np.random.default_rng([int(seed), int(participant), int(part)])


def gen_dataset(scenario: ScenarioSpec, groups, seed: int | None = None):
    """Generate (training Dataset, new-participant test data).

    ``groups`` is indexed by group label (or by participant when its length
    is N + 1 and ``labels`` is ``range(1, N + 1)``).
    """
    seed = scenario.seed if seed is None else seed
    labels = (scenario.new_group,) + scenario.labels
    for lab in labels:
        if not (0 <= lab < len(groups)):
            raise ParameterDomainError(f"group label {lab} is not defined")
    parts = []
    for n, lab in enumerate(labels):
        parts.append(_spell(participant_rng(seed, n, 0), groups[lab], scenario.train_chars,
                            scenario.train_seqs))
    test = _spell(participant_rng(seed, 0, 1), groups[labels[0]], scenario.test_chars,
                  scenario.test_seqs)
    return Dataset(parts), test


# ---------------------------------------------------------------------------
# presets
# ---------------------------------------------------------------------------

@dataclass
class Preset:
    name: str
    scenario: ScenarioSpec
    groups: list
    model: ModelConfig
    notes: dict = field(default_factory=dict)


def real_style_params(seed: int = 20240101, n_sources: int = 23, T0: int = 25):
    """Built-in participant-specific parameters for the real-data-style presets.

    Participant 0 and two sources share one parameter set; the other sources
    get perturbed shapes, scales and correlations.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(1, T0 + 1, dtype=float)

    def shapes(shift, amp1, amp2):
        c1 = amp1 * (np.exp(-0.5 * ((t - 7 - shift) / 2.0) ** 2)
                     - 0.6 * np.exp(-0.5 * ((t - 13 - shift) / 3.0) ** 2))
        c2 = amp2 * np.exp(-0.5 * ((t - 9 - shift) / 2.5) ** 2)
        nt = 0.15 * np.stack([c1, c2])
        return np.stack([c1, c2]), nt

    base_t, base_n = shapes(0.0, 3.0, 2.0)
    out = [GroupSpec(base_t, base_n, [2.0, 1.5], 0.6, 0.3)]
    for n in range(1, n_sources + 1):
        if n in (1, 2):
            out.append(GroupSpec(base_t, base_n, [2.0, 1.5], 0.6, 0.3))
            continue
        tt, nn = shapes(rng.uniform(-3, 3), rng.uniform(1.0, 4.0) * rng.choice([-1, 1]),
                        rng.uniform(0.5, 3.0))
        sig = np.round(rng.uniform(1.0, 3.0, size=2), 3)
        rho = float(np.round(rng.choice(np.arange(1, 20) * 0.05), 2))
        eta = float(np.round(rng.choice(np.arange(1, 20) * 0.05), 2))
        out.append(GroupSpec(tt, nn, sig, rho, eta))
    return out


def make_preset(name: str, seed: int = 0, train_seqs: int | None = None) -> Preset:
    if name in ("single_case_s1", "single_case_s2"):
        labels = (1, 1, 1, 2, 2, 2) if name == "single_case_s1" else (0, 0, 1, 1, 2, 2)
        sc = ScenarioSpec(labels, "TTT", train_seqs or 10, seed=seed)
        return Preset(name, sc, single_groups(), ModelConfig.single_channel(T0=35, pi=0.5, delta_z=0.5))
    if name in ("multi_case_1", "multi_case_2"):
        labels = (1, 1, 1, 2, 2, 2) if name == "multi_case_1" else (0, 0, 1, 1, 2, 2)
        sc = ScenarioSpec(labels, "TTT", train_seqs or 10, seed=seed)
        return Preset(name, sc, multi_groups(), ModelConfig.multi_channel(E=2, T0=35, pi=0.5,
                                                                           delta_z=0.5))
    if name in ("real_style_normal", "real_style_t"):
        params = real_style_params()
        kind, df = ("normal", None) if name == "real_style_normal" else ("student_t", 5.0)
        groups = [g.with_noise(kind, df, variance_multiplier=2.0) for g in params]
        sc = ScenarioSpec(tuple(range(1, len(params))), "T" * 8, train_seqs or 10, seed=seed)
        mc = ModelConfig.multi_channel(E=2, T0=25, pi=2 / 24, delta_z=0.1)
        return Preset(name, sc, groups, mc, {"variance_multiplier": 2.0})
    raise ParameterDomainError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")


# ---------------------------------------------------------------------------
# parameter files
# ---------------------------------------------------------------------------

def save_param_file(path, groups, variance_multiplier=1.0):
    doc = {"variance_multiplier": float(variance_multiplier),
           "participants": [g.to_dict() for g in groups]}
    Path(path).write_text(json.dumps(doc, indent=1))


def _field(d, key, where):
    if key not in d:
        raise ValidationError(f"{where}.{key}: required field is missing", rule="schema")
    return d[key]


def load_param_file(path):
    """Read participant-specific generating parameters from JSON.

    The variance multiplier is applied to ``sigma**2``.  Returns the list of
    GroupSpec (one per participant, participant 0 first).
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})", rule="schema") from None
    mult = float(doc.get("variance_multiplier", 1.0))
    if mult <= 0:
        raise ValidationError("variance_multiplier: must be > 0", rule="schema")
    parts = _field(doc, "participants", "$")
    if not isinstance(parts, list) or not parts:
        raise ValidationError("$.participants: must be a non-empty list", rule="schema")
    out = []
    for i, p in enumerate(parts):
        where = f"$.participants[{i}]"
        try:
            g = GroupSpec(np.asarray(_field(p, "target_shape", where), dtype=float),
                          np.asarray(_field(p, "nontarget_shape", where), dtype=float),
                          np.asarray(_field(p, "sigma", where), dtype=float),
                          float(_field(p, "rho", where)), float(_field(p, "eta", where)),
                          p.get("noise_kind", "normal"), p.get("df"))
        except (ParameterDomainError, TypeError, ValueError) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"{where}: {exc}", rule="schema") from None
        out.append(g.with_noise(g.noise_kind, g.df, mult) if mult != 1.0 else g)
    return out
