import json

import numpy as np
import pytest
from scipy import stats

from bsmatch import rcp
from bsmatch.errors import ParameterDomainError, ValidationError
from bsmatch.numkernel import ar1_corr
from bsmatch.simgen import (MULTI_GROUP_PARAMS, PRESETS, GroupSpec, ScenarioSpec, bump,
                            canonical_shapes, gen_dataset, load_param_file, make_preset,
                            multi_groups, noise, save_param_file, single_groups)


class TestShapes:
    def test_peaks_and_amplitudes(self):
        for sid in ("single", "naive_multi"):
            (t0, n0) = canonical_shapes(sid, 35)[0]
            assert np.argmax(t0[0]) + 1 == 10 and t0[0].max() == pytest.approx(6.0)
            assert np.argmax(n0[0]) + 1 == 12 and n0[0].max() == pytest.approx(1.0)

    def test_single_channel_groups(self):
        g0, g1, g2 = canonical_shapes("single", 35)
        np.testing.assert_array_equal(g1[0], -g0[0])
        assert np.argmax(g2[0][0]) + 1 == 25

    def test_naive_multi_groups(self):
        g0, g1, g2 = canonical_shapes("naive_multi", 35)
        np.testing.assert_array_equal(g0[0][1], -g0[0][0])
        np.testing.assert_array_equal(g1[0][0], g0[0][0])
        assert np.abs(g1[0][1]).max() == pytest.approx(0.5 * np.abs(g0[0][1]).max())
        assert g2[0][0].max() == pytest.approx(0.5 * g0[0][0].max())

    def test_unknown_scenario(self):
        with pytest.raises(ParameterDomainError):
            canonical_shapes("triple")

    def test_group_constants(self):
        assert MULTI_GROUP_PARAMS == ((0.7, 0.6, 8, 8), (0.7, 0.4, 8, 6), (0.5, 0.4, 2, 2))
        for g, (rho, eta, s1, s2) in zip(multi_groups(), MULTI_GROUP_PARAMS):
            assert (g.rho, g.eta) == (rho, eta) and g.sigma.tolist() == [s1, s2]


class TestSpecs:
    def test_group_invariants(self):
        t = np.zeros((1, 5))
        with pytest.raises(ParameterDomainError):
            GroupSpec(t, t, [0.0], 0.5, 0.0)
        with pytest.raises(ParameterDomainError):
            GroupSpec(t, t, [1.0], 0.5, 0.0, "student_t", 2.0)
        with pytest.raises(ParameterDomainError):
            GroupSpec(t + np.nan, t, [1.0], 0.5, 0.0)

    def test_scenario_labels_checked(self):
        sc = ScenarioSpec((0, 5), "T", 1)
        with pytest.raises(ParameterDomainError):
            gen_dataset(sc, single_groups())
        with pytest.raises(Exception):
            ScenarioSpec((0,), "T#", 1)

    def test_presets(self):
        for name in PRESETS:
            p = make_preset(name)
            assert p.model.E == p.groups[0].E and p.model.T0 == p.groups[0].T0
        assert make_preset("multi_case_2").scenario.labels == (0, 0, 1, 1, 2, 2)
        assert make_preset("multi_case_1").scenario.labels == (1, 1, 1, 2, 2, 2)
        p = make_preset("multi_case_2")
        assert len(p.scenario.test_chars) == 19 and p.scenario.test_seqs == 10
        with pytest.raises(ParameterDomainError):
            make_preset("nope")


class TestGeneration:
    def test_rcp_structure(self):
        p = make_preset("multi_case_2", train_seqs=3)
        train, test = gen_dataset(p.scenario, p.groups, seed=4)
        train.validate()
        assert train.N == 6 and len(train[0]) == 3 * 3 * 12
        for part in list(train.participants) + [test]:
            for _, _, seq in part.sequences():
                assert seq.y.sum() == 2 and sorted(seq.code) == list(range(1, 13))
        truth = [rcp.char_from_types(seq.code, seq.y) for c, s, seq in test.sequences() if s == 0]
        assert "".join(truth) == "THE_QUICK_BROWN_FOX"

    def test_deterministic(self):
        p = make_preset("single_case_s2", train_seqs=2)
        a, ta = gen_dataset(p.scenario, p.groups, seed=11)
        b, tb = gen_dataset(p.scenario, p.groups, seed=11)
        c, _ = gen_dataset(p.scenario, p.groups, seed=12)
        for pa, pb in zip(a.participants, b.participants):
            assert np.array_equal(pa.X, pb.X) and np.array_equal(pa.code, pb.code)
        assert np.array_equal(ta.X, tb.X)
        assert not np.array_equal(a[0].X, c[0].X)

    def test_normal_covariance(self, rng):
        g = GroupSpec(np.zeros((2, 4)), np.zeros((2, 4)), [2.0, 0.5], 0.6, 0.4)
        X = noise(rng, 10000, g.spatial(), ar1_corr(0.6, 4))
        vec = X.transpose(0, 2, 1).reshape(10000, -1)       # column stacking
        target = np.kron(ar1_corr(0.6, 4), g.spatial())
        err = np.linalg.norm(np.cov(vec, rowvar=False) - target) / np.linalg.norm(target)
        assert err < 0.05

    def test_student_t_covariance_and_tails(self, rng):
        g = GroupSpec(np.zeros((2, 4)), np.zeros((2, 4)), [2.0, 0.5], 0.6, 0.4, "student_t", 5.0)
        X = noise(rng, 40000, g.spatial(), ar1_corr(0.6, 4), "student_t", 5.0)
        vec = X.transpose(0, 2, 1).reshape(len(X), -1)
        target = np.kron(ar1_corr(0.6, 4), g.spatial())
        err = np.linalg.norm(np.cov(vec, rowvar=False) - target) / np.linalg.norm(target)
        assert err < 0.05
        assert np.all(stats.kurtosis(vec, axis=0) > 0)        # excess kurtosis

    def test_group0_sources_match_new(self):
        p = make_preset("multi_case_2", train_seqs=100)
        train, _ = gen_dataset(p.scenario, p.groups, seed=3)
        new, src, other = train[0].targets, train[1].targets, train[5].targets
        se = np.sqrt(new.var(axis=0) / len(new) + src.var(axis=0) / len(src))
        z = (new.mean(axis=0) - src.mean(axis=0)) / se
        assert np.mean(np.abs(z) < 3) > 0.95
        z_other = (new.mean(axis=0) - other.mean(axis=0)) / se
        assert np.mean(np.abs(z_other) > 3) > 0.2


class TestParamFiles:
    def test_round_trip(self, tmp_path):
        groups = multi_groups()
        save_param_file(tmp_path / "p.json", groups)
        back = load_param_file(tmp_path / "p.json")
        for a, b in zip(groups, back):
            np.testing.assert_array_equal(a.target_shape, b.target_shape)
            np.testing.assert_array_equal(a.sigma, b.sigma)
            assert (a.rho, a.eta, a.noise_kind) == (b.rho, b.eta, b.noise_kind)

    def test_variance_multiplier(self, tmp_path):
        groups = single_groups()
        save_param_file(tmp_path / "p.json", groups, variance_multiplier=2.0)
        back = load_param_file(tmp_path / "p.json")
        np.testing.assert_allclose(back[0].sigma ** 2, 2.0 * groups[0].sigma ** 2)

    def test_missing_sigma(self, tmp_path):
        save_param_file(tmp_path / "p.json", single_groups())
        doc = json.loads((tmp_path / "p.json").read_text())
        del doc["participants"][1]["sigma"]
        (tmp_path / "p.json").write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match=r"participants\[1\]\.sigma"):
            load_param_file(tmp_path / "p.json")

    def test_bad_values(self, tmp_path):
        save_param_file(tmp_path / "p.json", single_groups())
        doc = json.loads((tmp_path / "p.json").read_text())
        doc["participants"][0]["sigma"] = [-1.0]
        (tmp_path / "p.json").write_text(json.dumps(doc))
        with pytest.raises(ValidationError, match=r"participants\[0\]"):
            load_param_file(tmp_path / "p.json")
        (tmp_path / "p.json").write_text("{not json")
        with pytest.raises(ValidationError):
            load_param_file(tmp_path / "p.json")


def test_bump():
    b = bump(20, 7, 2.0)
    assert np.argmax(b) == 6 and b.max() == 2.0
