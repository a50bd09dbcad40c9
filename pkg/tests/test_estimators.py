import math

import numpy as np
import pytest

from cwgap import oracle
from cwgap.errors import UsageError
from cwgap.estimators import (CSV_COLUMNS, DegenerateFitError, autocovariance, batch_means_variance,
                              ess, gap_fit, summarize)
from cwgap.rng import derive_stream

N = 10 ** 6


@pytest.fixture(scope="module")
def iid():
    return derive_stream(100, 0).normals(N)


@pytest.fixture(scope="module")
def two_state():
    K = oracle.two_state_kernel(0.75)
    path = oracle.simulate_discrete(K, N, derive_stream(100, 1))
    return K, (path == 1).astype(float)


def test_autocovariance_basics(iid):
    assert np.all(autocovariance(np.full(50, 3.0), 10) == 0)
    x = iid[:1000]
    assert autocovariance(x, 0)[0] == pytest.approx(np.var(x), rel=1e-12)
    lag1 = np.mean((x[:-1] - x.mean()) * (x[1:] - x.mean())) * 999 / 1000
    assert autocovariance(x, 3)[1] == pytest.approx(lag1, rel=1e-10)
    assert abs(autocovariance(iid, 1)[1]) <= 4 / math.sqrt(N)


def test_batch_means_iid(iid):
    est = batch_means_variance(iid)
    assert abs(est.sigma2_hat - 1) <= 0.1
    assert est.batch_count == 1000 and est.batch_count * est.batch_length <= N


def test_batch_means_antithetic():
    x = np.tile([1.0, -1.0], N // 2)
    assert batch_means_variance(x).sigma2_hat <= 0.05


def test_batch_means_two_state_chain(two_state):
    K, f = two_state
    exact = oracle.asymptotic_variance_exact(K, np.array([0.0, 1.0]))
    assert exact == pytest.approx(0.75, rel=1e-12)
    assert abs(batch_means_variance(f).sigma2_hat - exact) <= 0.15 * exact


def test_batch_means_shift_invariant(iid):
    x = iid[:10000]
    a = batch_means_variance(x).sigma2_hat
    b = batch_means_variance(x + 1234.5).sigma2_hat
    assert abs(a - b) <= 1e-10 * a + 1e-12


def test_batch_means_needs_samples():
    with pytest.raises(UsageError):
        batch_means_variance(np.ones(50))


def test_ess_iid(iid):
    assert abs(ess(iid) / N - 1) <= 0.1


def test_gap_fit_two_state(two_state):
    _, f = two_state
    g = gap_fit(autocovariance(f, 50))
    assert g.applicable and g.heuristic
    assert abs(g.value - 0.5) <= 0.1 * 0.5


def test_gap_fit_degenerate():
    with pytest.raises(DegenerateFitError):
        gap_fit(autocovariance(np.ones(200), 5))
    assert not gap_fit(np.array([1.0, 0.01, 0.0])).applicable


def test_summarize_row(iid):
    row = summarize("x0", iid[:10000])
    assert set(CSV_COLUMNS) <= set(row)
    assert "gap_fit_heuristic" in row["flags"]
    const = summarize("c", np.ones(400))
    assert const["ess"] is None and "constant_sequence" in const["flags"]
