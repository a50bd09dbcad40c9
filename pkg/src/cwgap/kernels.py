"""Single-block transition kernels and their density views.

Every step consumes randomness in a fixed order: proposal noise first,
then (for Metropolis-Hastings kernels) one acceptance uniform. A proposal
is accepted when ``log(U) < log_ratio``.
"""

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import linalg
from .errors import ConfigError, NotSPDError, UnsupportedError, UsageError
from .gaussian_target import log_density_unnormalized

_LOG_2PI = math.log(2 * math.pi)


@dataclass(frozen=True)
class MalaConfig:
    """Per-block MALA step sizes h_j. Any h_j > 0 is accepted here; the
    bounds module reports whether the contraction bound applies."""

    step_sizes: tuple

    def __post_init__(self):
        h = tuple(float(v) for v in np.atleast_1d(self.step_sizes))
        if not all(v > 0 and math.isfinite(v) for v in h):
            raise ConfigError(f"step sizes must be positive, got {h}")
        object.__setattr__(self, "step_sizes", h)

    def delta(self, t, j):
        """Matrix step Delta_j = h_j Q_jj of the standardised kernel."""
        return self.step_sizes[j] * t.cache[j].Qjj

    def check_target(self, t):
        if len(self.step_sizes) != t.d:
            raise ConfigError(f"{len(self.step_sizes)} step sizes for {t.d} blocks")


@dataclass
class AcceptanceStats:
    proposed: np.ndarray
    accepted: np.ndarray

    @classmethod
    def zeros(cls, d):
        return cls(np.zeros(d, dtype=np.int64), np.zeros(d, dtype=np.int64))

    def record(self, j, accepted):
        self.proposed[j] += 1
        self.accepted[j] += bool(accepted)

    def rates(self):
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(self.proposed > 0, self.accepted / np.maximum(self.proposed, 1), np.nan)


def _accept(log_ratio, rng):
    u = rng.next_uniform()
    return u == 0.0 or math.log(u) < log_ratio


# --- Gibbs ---------------------------------------------------------------

def gibbs_block_step(t, j, x, rng):
    """Exact draw of block j from its conditional law; returns a new state."""
    c = t.cache[j]
    sl = t.blocks.slice(j)
    m = t.conditional_mean(j, x)
    y = np.array(x, dtype=float)
    if sl.stop - sl.start == 1:
        y[sl.start] = m[0] + c.chol_inv_t[0, 0] * rng.next_std_normal()
    else:
        y[sl] = m + c.chol_inv_t @ rng.normals(sl.stop - sl.start)
    return y


# --- block MALA -------------------------------------------------------------

def _mala_log_q(x_from, y_to, grad_from, h):
    r = y_to - x_from - h * grad_from
    return -float(r @ r) / (4.0 * h)


def mala_log_ratio(t, cfg, j, x, y_block):
    """Log Metropolis-Hastings ratio for moving block j of x to y_block."""
    sl = t.blocks.slice(j)
    h = cfg.step_sizes[j]
    Qjj = t.cache[j].Qjj
    m = t.conditional_mean(j, x)
    xj = np.asarray(x[sl], dtype=float)
    yj = np.asarray(y_block, dtype=float).reshape(xj.shape)
    y = np.array(x, dtype=float)
    y[sl] = yj
    gx = -(Qjj @ (xj - m))
    gy = -(Qjj @ (yj - m))
    return (log_density_unnormalized(t, y) - log_density_unnormalized(t, x)
            + _mala_log_q(yj, xj, gy, h) - _mala_log_q(xj, yj, gx, h))


def mala_block_step(t, cfg, j, x, rng):
    """One MALA update of block j. Returns (new state, accepted).

    The target part of the log ratio uses the conditional quadratic form
    -(1/2)(y-m)'Q_jj(y-m), which differs from the full log density only by
    terms that cancel between x and y (see ``mala_log_ratio``).
    """
    c = t.cache[j]
    sl = t.blocks.slice(j)
    h = cfg.step_sizes[j]
    m = t.conditional_mean(j, x)
    if sl.stop - sl.start == 1:
        q = float(c.Qjj[0, 0])
        mm = float(m[0])
        xj = float(x[sl.start]) - mm
        yj = xj - h * q * xj + math.sqrt(2.0 * h) * rng.next_std_normal()
        r_fwd = yj - xj + h * q * xj
        r_bwd = xj - yj + h * q * yj
        lr = -0.5 * q * (yj * yj - xj * xj) - (r_bwd * r_bwd - r_fwd * r_fwd) / (4.0 * h)
        y = np.array(x, dtype=float)
        if _accept(lr, rng):
            y[sl.start] = yj + mm
            return y, True
        return y, False
    Qjj = c.Qjj
    xj = x[sl] - m
    z = rng.normals(sl.stop - sl.start)
    yj = xj - h * (Qjj @ xj) + math.sqrt(2.0 * h) * z
    gx = -(Qjj @ xj)
    gy = -(Qjj @ yj)
    lr = (-0.5 * float(yj @ Qjj @ yj - xj @ Qjj @ xj)
          + _mala_log_q(yj, xj, gy, h) - _mala_log_q(xj, yj, gx, h))
    y = np.array(x, dtype=float)
    if _accept(lr, rng):
        y[sl] = yj + m
        return y, True
    return y, False


# --- standardised MALA M_Delta -----------------------------------------------

@lru_cache(maxsize=256)
def _sqrt_cached(key, n):
    D = np.frombuffer(key).reshape(n, n)
    return linalg.sym_sqrt(D)


def _as_delta(Delta):
    D = np.atleast_2d(np.asarray(Delta, dtype=float))
    D = linalg.check_symmetric(D, "Delta")
    try:
        linalg.cholesky_spd(D)
    except NotSPDError:
        raise UsageError("Delta must be positive definite") from None
    return D


def delta_sqrt(Delta):
    """Symmetric square root of Delta, cached by value."""
    D = _as_delta(Delta)
    return _sqrt_cached(D.tobytes(), D.shape[0])


def std_mala_log_alpha(Delta, X, Y):
    """Log acceptance probability of M_Delta: min(0, (X'DX - Y'DY) / 4)."""
    D = np.atleast_2d(np.asarray(Delta, dtype=float))
    X = np.atleast_1d(np.asarray(X, dtype=float))
    Y = np.atleast_1d(np.asarray(Y, dtype=float))
    return min(0.0, 0.25 * float(X @ D @ X - Y @ D @ Y))


def standardized_mala_step(Delta, X, rng):
    """Y = (I - Delta) X + sqrt(2) Delta^{1/2} z, accepted with the closed-form
    probability. Returns (new X, accepted). Scalar in, scalar out."""
    scalar = np.ndim(X) == 0
    if scalar and np.size(Delta) == 1:
        d = float(np.squeeze(Delta))
        if not d > 0:
            raise UsageError("Delta must be positive definite")
        x = float(X)
        y = x - d * x + math.sqrt(2.0 * d) * rng.next_std_normal()
        if _accept(min(0.0, 0.25 * d * (x * x - y * y)), rng):
            return y, True
        return x, False
    D = _as_delta(Delta)
    S = delta_sqrt(D)
    Xv = np.atleast_1d(np.asarray(X, dtype=float))
    z = rng.normals(Xv.shape[0])
    Y = Xv - D @ Xv + math.sqrt(2.0) * (S @ z)
    acc = _accept(std_mala_log_alpha(D, Xv, Y), rng)
    out = Y if acc else Xv.copy()
    return (float(out[0]) if scalar else out), acc


# --- hybrid random-walk Metropolis (counterexample kernel) -------------------

def hybrid_rwm_log_alpha(x, z):
    return min(0.0, 0.5 * (x * x - z * z))


def hybrid_rwm_step(coord, state, rng):
    """RWM on coordinate ``coord`` (0 or 1) of a 2-D state, targeting N(0,1),
    with proposal variance 1 + (other coordinate)^2. Returns a new state."""
    if coord not in (0, 1) or np.shape(state) != (2,):
        raise UsageError("hybrid RWM acts on coordinate 0 or 1 of a 2-vector")
    s = np.array(state, dtype=float)
    x, y = s[coord], s[1 - coord]
    z = x + math.sqrt(1.0 + y * y) * rng.next_std_normal()
    if _accept(hybrid_rwm_log_alpha(x, z), rng):
        s[coord] = z
    return s


# --- kernel objects used by the scan drivers ---------------------------------

class GibbsKernel:
    kind = "gibbs"

    def step(self, t, j, x, rng):
        return gibbs_block_step(t, j, x, rng), True


class MalaKernel:
    kind = "mala"

    def __init__(self, cfg):
        self.cfg = cfg if isinstance(cfg, MalaConfig) else MalaConfig(cfg)

    def step(self, t, j, x, rng):
        return mala_block_step(t, self.cfg, j, x, rng)


class StdMalaKernel:
    """M_Delta with Delta = delta_j I applied in the whitened coordinates
    X = Q_jj^{1/2}(x_j - m_j) of block j's conditional law."""

    kind = "std_mala"

    def __init__(self, deltas):
        self.deltas = tuple(float(v) for v in np.atleast_1d(deltas))
        if not all(v > 0 for v in self.deltas):
            raise ConfigError("std_mala step sizes must be positive")
        self._roots = {}

    def _root(self, t, j):
        if j not in self._roots:
            Qjj = t.cache[j].Qjj
            self._roots[j] = (linalg.sym_sqrt(Qjj), linalg.sym_sqrt(Qjj, inverse=True))
        return self._roots[j]

    def step(self, t, j, x, rng):
        sl = t.blocks.slice(j)
        half, inv_half = self._root(t, j)
        m = t.conditional_mean(j, x)
        X = half @ (x[sl] - m)
        Delta = self.deltas[j] * np.eye(X.shape[0])
        X2, acc = standardized_mala_step(Delta, X, rng)
        y = np.array(x, dtype=float)
        if acc:
            y[sl] = m + inv_half @ X2
        return y, acc


class HybridRWMKernel:
    kind = "hybrid_rwm"

    def step(self, t, j, x, rng):
        y = hybrid_rwm_step(j, x, rng)
        return y, bool(y[j] != x[j])


def kernels_from_spec(spec, t):
    """Per-block kernel list from {"kind": ..., "step_sizes": [...]}."""
    kind = spec.get("kind")
    steps = spec.get("step_sizes")
    if kind == "gibbs":
        k = GibbsKernel()
    elif kind in ("mala", "std_mala"):
        if steps is None:
            raise ConfigError(f"kernel kind {kind!r} needs step_sizes")
        if isinstance(steps, str) or any(isinstance(v, str) for v in np.atleast_1d(steps).tolist()):
            raise ConfigError(f"kernel kind {kind!r} needs numeric step_sizes, got {steps!r}")
        steps = list(np.atleast_1d(steps))
        if len(steps) == 1:
            steps = steps * t.d
        if len(steps) != t.d:
            raise ConfigError(f"{len(steps)} step sizes for {t.d} blocks")
        k = MalaKernel(MalaConfig(tuple(steps))) if kind == "mala" else StdMalaKernel(steps)
    elif kind == "hybrid_rwm":
        if t.blocks.sizes != (1, 1):
            raise ConfigError("hybrid_rwm needs a 2-D target with two scalar blocks")
        k = HybridRWMKernel()
    else:
        raise ConfigError(f"unknown kernel kind {kind!r}")
    return [k] * t.d


# --- density views -----------------------------------------------------------

@dataclass(frozen=True)
class KernelView:
    """Log proposal density, log acceptance and log target density of a
    one-block Metropolis-Hastings kernel, vectorised over leading axes.

    For dim == 1 points are plain arrays; for dim == 2 the last axis has
    length 2. ``log_q(x, y)`` is the density of moving from x to y.
    """

    dim: int
    log_q: object
    log_alpha: object
    log_target: object
    name: str = ""
    params: dict = field(default_factory=dict)

    def q(self, x, y):
        return np.exp(self.log_q(x, y))

    def alpha(self, x, y):
        return np.exp(self.log_alpha(x, y))

    def target(self, x):
        return np.exp(self.log_target(x))


def _gauss_logpdf(y, mean, prec, dim):
    """log N(y; mean, prec^{-1}) with matrix prec (dim x dim), broadcast."""
    r = y - mean
    if dim == 1:
        p = float(np.squeeze(prec))
        return -0.5 * p * r * r + 0.5 * math.log(p) - 0.5 * _LOG_2PI
    quad = np.einsum("...i,ij,...j->...", r, prec, r)
    return -0.5 * quad + 0.5 * math.log(np.linalg.det(prec)) - 0.5 * dim * _LOG_2PI


def _quad(x, M, dim):
    if dim == 1:
        return float(np.squeeze(M)) * x * x
    return np.einsum("...i,ij,...j->...", x, M, x)


def _matvec(M, x, dim):
    if dim == 1:
        return float(np.squeeze(M)) * x
    return np.einsum("ij,...j->...i", M, x)


def density_view(kind, target=None, j=0, x=None, h=None, delta=None, other=None):
    """Density view of one block kernel.

    gibbs / mala: block j of ``target`` conditioned on the rest of state x.
    std_mala: M_Delta for scalar or matrix ``delta``.
    hybrid_rwm: RWM on N(0,1) with the other coordinate fixed at ``other``.
    """
    if kind in ("gibbs", "mala"):
        target.blocks.check_index(j)
        dim = target.blocks.sizes[j]
        if dim > 2:
            raise UnsupportedError(f"density views support block dimension <= 2, got {dim}")
        xs = np.zeros(target.N) if x is None else np.asarray(x, dtype=float)
        m = target.conditional_mean(j, xs)
        m = float(m[0]) if dim == 1 else m
        Qjj = target.cache[j].Qjj
        log_t = lambda u: _gauss_logpdf(u, m, Qjj, dim)
        if kind == "gibbs":
            return KernelView(dim, lambda a, b: log_t(b), lambda a, b: 0.0 * (log_t(a) + log_t(b)),
                              log_t, "gibbs", {"j": j, "mean": m})
        if h is None or not h > 0:
            raise UsageError("mala view needs a positive step size h")

        def log_q(a, b):
            drift = a - h * _matvec(Qjj, a - m, dim)
            r = b - drift
            return -_quad(r, np.eye(dim), dim) / (4 * h) - 0.5 * dim * math.log(4 * math.pi * h)

        def log_alpha(a, b):
            lr = log_t(b) - log_t(a) + log_q(b, a) - log_q(a, b)
            return np.minimum(0.0, lr)

        return KernelView(dim, log_q, log_alpha, log_t, "mala", {"j": j, "h": h, "mean": m})

    if kind == "std_mala":
        D = np.atleast_2d(np.asarray(delta, dtype=float))
        dim = D.shape[0]
        if dim > 2:
            raise UnsupportedError(f"density views support dimension <= 2, got {dim}")
        D = _as_delta(D)
        I = np.eye(dim)
        prop_prec = np.linalg.inv(2 * D)

        def log_q(a, b):
            return _gauss_logpdf(b, _matvec(I - D, a, dim), prop_prec, dim)

        def log_alpha(a, b):
            return np.minimum(0.0, 0.25 * (_quad(a, D, dim) - _quad(b, D, dim)))

        return KernelView(dim, log_q, log_alpha, lambda u: _gauss_logpdf(u, 0.0, I, dim),
                          "std_mala", {"delta": D.tolist()})

    if kind == "hybrid_rwm":
        y = float(other if other is not None else 0.0)
        var = 1.0 + y * y
        return KernelView(
            1,
            lambda a, b: -0.5 * (b - a) ** 2 / var - 0.5 * math.log(2 * math.pi * var),
            lambda a, b: np.minimum(0.0, 0.5 * (a * a - b * b)),
            lambda u: -0.5 * u * u - 0.5 * _LOG_2PI,
            "hybrid_rwm", {"other": y})
    raise UsageError(f"unknown kernel kind {kind!r}")


def density_view_1d(kind, **kwargs):
    """Alias of density_view; kept for the common scalar-block case."""
    return density_view(kind, **kwargs)
