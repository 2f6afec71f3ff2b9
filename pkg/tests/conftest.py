import numpy as np
import pytest


def vec_mvn_logpdf(X, M, U, Vt):
    """Independent oracle: MVN log density of column-stacked vec(X) with covariance Vt kron U."""
    x = np.asarray(X, dtype=float).reshape(-1, order="F")
    m = np.asarray(M, dtype=float).reshape(-1, order="F")
    C = np.kron(Vt, U)
    sign, logdet = np.linalg.slogdet(C)
    assert sign > 0
    d = x - m
    return float(-0.5 * (x.size * np.log(2 * np.pi) + logdet + d @ np.linalg.solve(C, d)))


def random_spd(rng, n, jitter=0.5):
    A = rng.standard_normal((n, n))
    return A @ A.T + jitter * np.eye(n)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {text}")
