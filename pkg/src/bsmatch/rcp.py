"""Row-and-column paradigm (RCP) mechanics for the 6 x 6 speller grid.

Stimulus codes 1-6 flash rows top to bottom, 7-12 flash columns left to
right.  Rows/columns are reported 1-based throughout.
"""
from __future__ import annotations

import numpy as np

from .errors import LookupKeyError, ValidationError

GRID_ROWS = ("ABCDEF", "GHIJKL", "MNOPQR", "STUVWX", "YZ1234", "56789_")
CHARACTERS = "".join(GRID_ROWS)
N_CHARS = 36
N_CODES = 12

_POS = {c: (r + 1, k + 1) for r, row in enumerate(GRID_ROWS) for k, c in enumerate(row)}

# target code pair of every character, in row-major order: shape (36, 2)
CHAR_CODES = np.array([[_POS[c][0], 6 + _POS[c][1]] for c in CHARACTERS], dtype=int)


def normalize_char(c: str) -> str:
    """Upper-case letters and map a space to the underscore key."""
    if c == " ":
        return "_"
    return c.upper()


def grid_lookup(c: str) -> tuple[int, int]:
    """1-based (row, col) of character ``c``."""
    try:
        return _POS[normalize_char(c)]
    except (KeyError, AttributeError):
        raise LookupKeyError(f"character {c!r} is not on the speller grid") from None


def char_at(row: int, col: int) -> str:
    if not (1 <= row <= 6 and 1 <= col <= 6):
        raise LookupKeyError(f"cell ({row}, {col}) is outside the 6x6 grid")
    return GRID_ROWS[row - 1][col - 1]


def char_index(c: str) -> int:
    """Row-major index 0..35 of ``c``."""
    r, k = grid_lookup(c)
    return 6 * (r - 1) + (k - 1)


def target_codes(c: str) -> tuple[int, int]:
    """Row code (1..6) and column code (7..12) that contain ``c``."""
    r, k = grid_lookup(c)
    return r, 6 + k


def validate_codes(W) -> np.ndarray:
    W = np.asarray(W)
    if W.shape != (N_CODES,) or sorted(W.tolist()) != list(range(1, N_CODES + 1)):
        raise ValidationError(f"stimulus codes must be a permutation of 1..12, got {W.tolist()}",
                              rule="permutation")
    return W.astype(int)


def stimulus_type(W, c: str) -> np.ndarray:
    """Binary target flags aligned with the stimulus code sequence ``W``."""
    W = validate_codes(W)
    r, k = target_codes(c)
    return ((W == r) | (W == k)).astype(int)


def char_from_types(codes, types) -> str:
    """Recover the attended character from codes flagged as targets."""
    codes = np.asarray(codes)
    flagged = set(codes[np.asarray(types) == 1].tolist())
    rows = [x for x in flagged if 1 <= x <= 6]
    cols = [x for x in flagged if 7 <= x <= 12]
    if len(rows) != 1 or len(cols) != 1:
        raise ValidationError(f"cannot identify a target cell from target codes {sorted(flagged)}",
                              rule="two-target rule")
    return char_at(rows[0], cols[0] - 6)


def random_sequence(rng: np.random.Generator) -> np.ndarray:
    """Uniformly random permutation of the codes 1..12."""
    return rng.permutation(N_CODES) + 1
