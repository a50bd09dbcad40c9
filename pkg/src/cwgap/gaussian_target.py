"""Gaussian targets N(mu, Q^{-1}) with a block partition of the coordinates.

The precision Q is the stored object. Block indices are 0-based.
"""

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ConfigError, NotSPDError, UsageError


class BlockStructure:
    """Partition of N coordinates into consecutive blocks of given sizes."""

    def __init__(self, sizes):
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 1 or any(s < 1 for s in sizes):
            raise ConfigError(f"block sizes must be positive, got {sizes}")
        self.sizes = sizes
        self.offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)]))
        self.N = self.offsets[-1]
        self.d = len(sizes)

    def __repr__(self):
        return f"BlockStructure({list(self.sizes)})"

    def __eq__(self, other):
        return isinstance(other, BlockStructure) and self.sizes == other.sizes

    def slice(self, j):
        self.check_index(j)
        return slice(self.offsets[j], self.offsets[j + 1])

    def check_index(self, j):
        if not (0 <= j < self.d):
            raise UsageError(f"block index {j} out of range for d={self.d}")

    @property
    def equal_size(self):
        return len(set(self.sizes)) == 1

    @classmethod
    def equal(cls, N, s):
        if s < 1 or N % s:
            raise ConfigError(f"block size s={s} must divide N={N}")
        return cls([s] * (N // s))


@dataclass(frozen=True)
class BlockCache:
    Qjj: np.ndarray
    chol: np.ndarray        # lower factor of Q_jj
    chol_inv_t: np.ndarray  # L^{-T}, so m + L^{-T} z ~ N(m, Q_jj^{-1})
    inv: np.ndarray         # Q_jj^{-1}
    psi_min: float
    psi_max: float
    trace_sq: float         # tr(Q_jj^2)
    coupling: np.ndarray    # Q_jj^{-1} Q_{j,-j}
    others: np.ndarray      # indices of the complement


@dataclass(frozen=True)
class ConditionalGaussian:
    mean: np.ndarray
    precision: np.ndarray

    @property
    def covariance(self):
        return np.linalg.inv(self.precision)


class GaussianTarget:
    """N(mu, Q^{-1}) with per-block caches computed at construction."""

    def __init__(self, mu, Q, blocks):
        Q = linalg.check_symmetric(Q, "precision")
        N = Q.shape[0]
        mu = np.zeros(N) if mu is None else np.asarray(mu, dtype=float).reshape(-1)
        if mu.shape != (N,) or not np.all(np.isfinite(mu)):
            raise ConfigError(f"mean must be a finite vector of length {N}")
        if not isinstance(blocks, BlockStructure):
            blocks = BlockStructure(blocks)
        if blocks.N != N:
            raise ConfigError(f"blocks cover {blocks.N} coordinates but Q is {N}x{N}")
        try:
            self.chol = linalg.cholesky_spd(Q)
        except NotSPDError as e:
            raise ConfigError(f"precision matrix is not SPD: {e}") from None
        self.mu = mu
        self.Q = Q
        self.blocks = blocks
        self.N = N
        self.d = blocks.d
        caches = []
        D = np.zeros_like(Q)
        for j in range(blocks.d):
            sl = blocks.slice(j)
            Qjj = Q[sl, sl].copy()
            L = linalg.cholesky_spd(Qjj)
            inv = linalg.cho_inverse(L)
            w = linalg.eigen_sym(Qjj).values
            others = np.r_[0:sl.start, sl.stop:N]
            caches.append(BlockCache(
                Qjj=Qjj, chol=L, chol_inv_t=linalg.solve_upper(L.T, np.eye(L.shape[0])), inv=inv, psi_min=float(w[-1]), psi_max=float(w[0]),
                trace_sq=float(np.sum(Qjj * Qjj)), coupling=inv @ Q[sl, others], others=others))
            D[sl, sl] = inv
        self.cache = tuple(caches)
        self.D = D
        for a in (self.mu, self.Q, self.D, self.chol):
            a.setflags(write=False)

    def __repr__(self):
        return f"GaussianTarget(N={self.N}, blocks={list(self.blocks.sizes)})"

    def covariance(self):
        return linalg.cho_inverse(self.chol)

    def conditional_mean(self, j, x):
        c = self.cache[j]
        sl = self.blocks.slice(j)
        if c.others.size == 0:
            return self.mu[sl].copy()
        return self.mu[sl] - c.coupling @ (x[c.others] - self.mu[c.others])

    def sample(self, rng):
        """Exact draw mu + L^{-T} z with Q = L L^T."""
        z = rng.normals(self.N)
        return self.mu + linalg.solve_upper(self.chol.T, z)


def conditional(t, j, x):
    """Law of block j given the rest: N(m_j, Q_jj^{-1})."""
    t.blocks.check_index(j)
    x = np.asarray(x, dtype=float)
    if x.shape != (t.N,) or not np.all(np.isfinite(x)):
        raise UsageError(f"state must be a finite vector of length {t.N}")
    return ConditionalGaussian(t.conditional_mean(j, x), t.cache[j].Qjj)


def grad_log_density(t, x):
    return -(t.Q @ (np.asarray(x, dtype=float) - t.mu))


def log_density_unnormalized(t, x):
    r = np.asarray(x, dtype=float) - t.mu
    return -0.5 * float(r @ t.Q @ r)


def cs_precision(N, zeta):
    """Closed-form inverse of (1-zeta) I + zeta 11^T."""
    return np.eye(N) / (1 - zeta) - zeta / ((1 - zeta) * (1 + (N - 1) * zeta)) * np.ones((N, N))


def cs_covariance(N, zeta):
    return (1 - zeta) * np.eye(N) + zeta * np.ones((N, N))


def ar1_precision(N, phi):
    """Tridiagonal inverse of the AR(1) correlation matrix phi^|i-j|."""
    main = np.full(N, 1 + phi * phi)
    main[0] = main[-1] = 1.0
    if N == 1:
        main[0] = 1 - phi * phi
    Q = np.diag(main) - phi * (np.eye(N, k=1) + np.eye(N, k=-1))
    return Q / (1 - phi * phi)


def ar1_covariance(N, phi):
    idx = np.arange(N)
    return phi ** np.abs(idx[:, None] - idx[None, :])


def cs_target(N, s, zeta, mu=None):
    """Compound-symmetry target, equal blocks of size s."""
    if not (0 <= zeta < 1):
        raise ConfigError(f"zeta must lie in [0, 1), got {zeta}")
    blocks = BlockStructure.equal(int(N), int(s))
    return GaussianTarget(mu, cs_precision(int(N), float(zeta)), blocks)


def ar1_target(N, phi, s=1, mu=None):
    """Stationary AR(1) target with unit marginal variance, equal blocks of size s."""
    if not (abs(phi) < 1):
        raise ConfigError(f"|phi| must be < 1, got {phi}")
    blocks = BlockStructure.equal(int(N), int(s))
    return GaussianTarget(mu, ar1_precision(int(N), float(phi)), blocks)


def correlated_pair(rho):
    """2-D unit-variance target with correlation rho, two scalar blocks."""
    if not (abs(rho) < 1):
        raise ConfigError(f"|rho| must be < 1, got {rho}")
    Q = np.array([[1.0, -rho], [-rho, 1.0]]) / (1 - rho * rho)
    return GaussianTarget(None, Q, [1, 1])


def target_from_spec(spec):
    """Build a target from a JSON-style dict (kind cs | ar1 | explicit)."""
    kind = spec.get("kind")
    mu = spec.get("mu")
    if kind == "cs":
        return cs_target(spec["N"], spec.get("s", 1), spec["zeta"], mu=mu)
    if kind == "ar1":
        return ar1_target(spec["N"], spec["phi"], spec.get("s", 1), mu=mu)
    if kind == "explicit":
        Q = np.asarray(spec["Q"], dtype=float)
        if "blocks" in spec:
            blocks = spec["blocks"]
        else:
            blocks = BlockStructure.equal(Q.shape[0], spec.get("s", 1))
        try:
            return GaussianTarget(mu, Q, blocks)
        except Exception as e:  # malformed matrix in a config is a config problem
            raise ConfigError(str(e)) from None
    raise ConfigError(f"unknown target kind {kind!r}")
