import numpy as np
import pytest
from hypothesis import given, strategies as st

from bsmatch import rcp
from bsmatch.errors import LookupKeyError, ValidationError


class TestGrid:
    def test_lookup(self):
        assert rcp.grid_lookup("T") == (4, 2)
        assert rcp.grid_lookup("A") == (1, 1)
        assert rcp.grid_lookup("_") == (6, 6)
        assert rcp.grid_lookup(" ") == (6, 6)
        assert rcp.grid_lookup("t") == (4, 2)

    def test_unknown_character(self):
        with pytest.raises(LookupKeyError):
            rcp.grid_lookup("!")
        with pytest.raises(LookupKeyError):
            rcp.char_at(7, 1)

    def test_codes(self):
        assert rcp.target_codes("T") == (4, 8)
        assert rcp.CHAR_CODES.shape == (36, 2)
        assert rcp.CHARACTERS[rcp.char_index("T")] == "T"

    @given(st.sampled_from(list(rcp.CHARACTERS)))
    def test_roundtrip(self, c):
        r, k = rcp.grid_lookup(c)
        assert rcp.char_at(r, k) == c


class TestStimulusTypes:
    W = (7, 9, 10, 5, 1, 2, 8, 11, 6, 4, 3, 12)

    def test_worked_example(self):
        y = rcp.stimulus_type(self.W, "T")
        np.testing.assert_array_equal(y, [0, 0, 0, 0, 0, 0, 1, 0, 0, 1, 0, 0])

    def test_inverse(self):
        y = rcp.stimulus_type(self.W, "T")
        assert rcp.char_from_types(self.W, y) == "T"

    @given(st.permutations(list(range(1, 13))), st.sampled_from(list(rcp.CHARACTERS)))
    def test_two_targets_always(self, W, c):
        y = rcp.stimulus_type(W, c)
        assert y.sum() == 2
        assert rcp.char_from_types(W, y) == c

    def test_bad_permutation(self):
        with pytest.raises(ValidationError) as e:
            rcp.stimulus_type([1] * 12, "A")
        assert e.value.rule == "permutation"

    def test_bad_types(self):
        with pytest.raises(ValidationError) as e:
            rcp.char_from_types(self.W, [1, 1, 1] + [0] * 9)
        assert e.value.rule == "two-target rule"

    def test_random_sequence(self):
        rng = np.random.default_rng(3)
        W = rcp.random_sequence(rng)
        assert sorted(W.tolist()) == list(range(1, 13))
        # every code lands in every position about equally often
        counts = np.zeros((12, 12))
        for _ in range(6000):
            W = rcp.random_sequence(rng)
            counts[np.arange(12), W - 1] += 1
        assert counts.min() > 350 and counts.max() < 650
