"""Output analysis for scalar chain sequences: autocovariance, batch means,
effective sample size and a heuristic decay-rate fit."""

import math
from dataclasses import dataclass

import numpy as np

from .errors import InapplicableError, UsageError

CSV_COLUMNS = ("functional_id", "n", "sigma2_hat", "se", "ess", "gap_fit", "flags")


class DegenerateFitError(InapplicableError):
    """No variation to fit (e.g. a constant sequence)."""


@dataclass(frozen=True)
class VarianceEstimate:
    sigma2_hat: float
    batch_count: int
    batch_length: int
    se: float


@dataclass(frozen=True)
class GapFit:
    value: float
    lags_used: int
    applicable: bool
    heuristic: bool = True


def _as_1d(samples):
    x = np.asarray(samples, dtype=float).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise UsageError("samples contain non-finite values")
    return x


def autocovariance(samples, max_lag):
    """Autocovariances at lags 0..max_lag, normalised by n (biased)."""
    x = _as_1d(samples)
    n = x.size
    max_lag = int(max_lag)
    if not (0 <= max_lag < n):
        raise UsageError(f"need 0 <= max_lag < n, got {max_lag} with n={n}")
    xc = x - x.mean()
    size = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(xc, size)
    acov = np.fft.irfft(f * np.conj(f), size)[: max_lag + 1] / n
    return acov


def batch_means_variance(samples, batch_count=None):
    """Non-overlapping batch means with floor(sqrt(n)) batches by default.

    The tail that does not fill a whole batch is dropped. The standard error
    uses the chi-square approximation se = sigma2 * sqrt(2 / (a - 1)).
    """
    x = _as_1d(samples)
    n = x.size
    if n < 100:
        raise UsageError(f"batch means needs at least 100 samples, got {n}")
    a = int(math.isqrt(n)) if batch_count is None else int(batch_count)
    if not (2 <= a <= n):
        raise UsageError(f"invalid batch count {a}")
    b = n // a
    means = x[: a * b].reshape(a, b).mean(axis=1)
    s2 = b * float(np.var(means, ddof=1))
    return VarianceEstimate(s2, a, b, s2 * math.sqrt(2.0 / (a - 1)))


def ess(samples, sigma2=None):
    """Effective sample size n * gamma_0 / sigma2_hat."""
    x = _as_1d(samples)
    g0 = float(np.var(x))
    if not g0 > 0:
        raise UsageError("ESS needs positive sample variance")
    if sigma2 is None:
        sigma2 = batch_means_variance(x).sigma2_hat
    if sigma2 <= 0:
        return math.inf
    return x.size * g0 / sigma2


def gap_fit(acov, threshold=0.05):
    """Heuristic gap proxy 1 - exp(slope) from a least-squares line through
    log autocorrelation, over the leading lags whose autocorrelation exceeds
    ``threshold``. Not an operator quantity: it sees one functional only."""
    acov = np.asarray(acov, dtype=float)
    if acov.size == 0 or not acov[0] > 0:
        raise DegenerateFitError("autocovariance at lag 0 is not positive")
    rho = acov / acov[0]
    k = 0
    while k < rho.size and rho[k] > threshold:
        k += 1
    if k < 2:
        return GapFit(math.nan, k, False)
    lags = np.arange(k)
    slope = np.polyfit(lags, np.log(rho[:k]), 1)[0]
    return GapFit(1.0 - math.exp(slope), k, True)


def summarize(functional_id, samples, max_lag=None):
    """One CSV row dict with the columns in CSV_COLUMNS. Undefined entries
    (gap fit with too few lags, ESS of a constant) are None and flagged."""
    x = _as_1d(samples)
    n = x.size
    flags = ["gap_fit_heuristic"]
    est = batch_means_variance(x)
    g0 = float(np.var(x))
    if g0 > 0:
        e = ess(x, est.sigma2_hat)
        lag = min(n - 1, max_lag if max_lag is not None else max(10, min(n // 10, 2000)))
        gf = gap_fit(autocovariance(x, lag))
        if not gf.applicable:
            flags.append("gap_fit_inapplicable")
        gap = gf.value if gf.applicable else None
    else:
        e, gap = None, None
        flags.append("constant_sequence")
    return {"functional_id": functional_id, "n": n, "sigma2_hat": est.sigma2_hat,
            "se": est.se, "ess": e, "gap_fit": gap, "flags": ";".join(flags)}
