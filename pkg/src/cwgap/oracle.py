"""Grid oracles: finite-state versions of the block kernels, pi-weighted
operator norms, exact Gaussian sweep rates and exact asymptotic variances.

Dense matrices are used up to ``linalg.MAX_DIM`` states. 2-D product grids
beyond that stay matrix-free: a block update is stored as one small matrix
per fiber (the line of grid points along the updated axis) and norms come
from ARPACK on the corresponding linear operator.
"""

import bisect
import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh, svds

from . import linalg
from .errors import ConfigError, InapplicableError, NumericalFailure, UnsupportedError, UsageError
from .kernels import density_view

PI_TOL = 1e-8
SYM_TOL = 1e-10
ARPACK_TOL = 1e-13


@dataclass(frozen=True)
class Grid:
    """Uniform grid, 1-D or 2-D, center +/- half_width with n points per axis."""

    half_width: tuple
    n: tuple
    center: tuple

    def __post_init__(self):
        hw = tuple(float(v) for v in np.atleast_1d(self.half_width))
        n = tuple(int(v) for v in np.atleast_1d(self.n))
        c = tuple(float(v) for v in np.atleast_1d(self.center))
        dims = max(len(hw), len(n), len(c))
        if dims > 2:
            raise UnsupportedError("grids support at most 2 dimensions")
        hw, n, c = (x * dims if len(x) == 1 else x for x in (hw, n, c))
        if not (len(hw) == len(n) == len(c) == dims):
            raise UsageError("inconsistent grid dimensions")
        if any(v < 3 or v % 2 == 0 for v in n):
            raise UsageError(f"grid point counts must be odd and >= 3, got {n}")
        if any(not v > 0 for v in hw):
            raise UsageError("grid half-width must be positive")
        object.__setattr__(self, "half_width", hw)
        object.__setattr__(self, "n", n)
        object.__setattr__(self, "center", c)

    @classmethod
    def line(cls, half_width, n=801, center=0.0):
        return cls((half_width,), (n,), (center,))

    @classmethod
    def square(cls, half_width, n=101, center=0.0):
        two = lambda v: tuple(np.broadcast_to(np.atleast_1d(v), (2,)).tolist())
        return cls(two(half_width), two(n), two(center))

    @property
    def dims(self):
        return len(self.n)

    @property
    def axes(self):
        return [c + np.linspace(-h, h, k) for c, h, k in zip(self.center, self.half_width, self.n)]

    @property
    def dx(self):
        return tuple(2 * h / (k - 1) for h, k in zip(self.half_width, self.n))

    @property
    def n_states(self):
        return int(np.prod(self.n))

    @property
    def states(self):
        """Flattened state list, shape (n_states, dims); last axis varies fastest."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)


def _normalize_log(logw):
    logw = np.asarray(logw, dtype=float)
    w = np.exp(logw - logw.max())
    return w / w.sum()


# --- dense kernels -------------------------------------------------------------

class DiscreteKernel:
    """Row-stochastic matrix P with stationary weights pi."""

    def __init__(self, P, pi, check=True):
        P = np.asarray(P, dtype=float)
        pi = np.asarray(pi, dtype=float).reshape(-1)
        n = pi.size
        if P.shape != (n, n):
            raise UsageError(f"P has shape {P.shape}, pi has {n} entries")
        if n > linalg.MAX_DIM:
            raise ConfigError(f"{n} states exceed the dense cap {linalg.MAX_DIM}")
        if check:
            if not np.all(np.isfinite(P)) or P.min() < 0:
                raise NumericalFailure("transition matrix has negative or non-finite entries")
            if np.max(np.abs(P.sum(axis=1) - 1)) > 1e-10:
                raise NumericalFailure("transition matrix rows do not sum to 1")
            if pi.min() <= 0 or abs(pi.sum() - 1) > 1e-10:
                raise UsageError("pi must be positive and sum to 1")
        self.P = P
        self.pi = pi
        self._rev = None

    @property
    def n_states(self):
        return self.pi.size

    def matvec(self, f):
        return self.P @ f

    def rmatvec(self, v):
        return self.P.T @ v

    def to_dense(self):
        return self

    def weighted_matrix(self):
        """D^{1/2} (P - 1 pi^T) D^{-1/2}."""
        s = np.sqrt(self.pi)
        return s[:, None] * (self.P - self.pi[None, :]) / s[None, :]

    @property
    def reversible(self):
        if self._rev is None:
            s = np.sqrt(self.pi)
            A = s[:, None] * self.P / s[None, :]
            self._rev = bool(np.max(np.abs(A - A.T)) <= SYM_TOL)
        return self._rev

    def detailed_balance_residual(self):
        F = self.pi[:, None] * self.P
        return float(np.max(np.abs(F - F.T)))

    def stationarity_residual(self):
        return float(np.sum(np.abs(self.pi @ self.P - self.pi)))


def iid_kernel(pi):
    pi = np.asarray(pi, dtype=float)
    return DiscreteKernel(np.tile(pi, (pi.size, 1)), pi)


def two_state_kernel(p):
    """Symmetric two-state chain that holds with probability p."""
    return DiscreteKernel([[p, 1 - p], [1 - p, p]], [0.5, 0.5])


def _mh_matrix(view, pts, cell):
    if view.dim == 1:
        X, Y = pts[:, None], pts[None, :]
    else:
        X, Y = pts[:, None, :], pts[None, :, :]
    with np.errstate(under="ignore"):
        P = np.exp(view.log_q(X, Y) + view.log_alpha(X, Y)) * cell
    np.fill_diagonal(P, 0.0)
    diag = 1.0 - P.sum(axis=1)
    if diag.min() < -1e-12:
        raise NumericalFailure(
            "negative rejection mass on the grid (min %.3e): use a finer grid" % diag.min())
    P[np.diag_indices_from(P)] = np.maximum(diag, 0.0)
    return P


def discretize_mh(view, grid):
    """Off-diagonal q * alpha * cell volume; the diagonal takes the rest."""
    if grid.dims != view.dim:
        raise UsageError(f"{view.dim}-D view on a {grid.dims}-D grid")
    pts = grid.axes[0] if grid.dims == 1 else grid.states
    P = _mh_matrix(view, pts, float(np.prod(grid.dx)))
    return DiscreteKernel(P, _normalize_log(view.log_target(pts)))


def discretize_mh_1d(view, grid):
    if grid.dims != 1:
        raise UsageError("discretize_mh_1d needs a 1-D grid")
    return discretize_mh(view, grid)


# --- 2-D product-grid block kernels ------------------------------------------

class FiberKernel:
    """Update of one axis of a 2-D product grid; the other index is frozen.

    ``fibers[b]`` is the transition matrix along ``axis`` when the other
    coordinate sits at grid index b. States are flattened row-major over
    (i0, i1).
    """

    reversible = True

    def __init__(self, fibers, pi2, axis):
        self.fibers = np.asarray(fibers, dtype=float)
        self.pi2 = np.asarray(pi2, dtype=float)
        self.axis = int(axis)
        n0, n1 = self.pi2.shape
        n_ax, n_oth = (n0, n1) if axis == 0 else (n1, n0)
        if self.fibers.shape != (n_oth, n_ax, n_ax):
            raise UsageError("fiber stack shape does not match the grid")
        self.pi = self.pi2.reshape(-1)
        self.shape = (n0, n1)

    @property
    def n_states(self):
        return self.pi.size

    def matvec(self, f):
        F = np.asarray(f).reshape(self.shape)
        if self.axis == 0:
            G = np.einsum("bik,kb->ib", self.fibers, F)
        else:
            G = np.einsum("aik,ak->ai", self.fibers, F)
        return G.reshape(-1)

    def rmatvec(self, v):
        V = np.asarray(v).reshape(self.shape)
        if self.axis == 0:
            G = np.einsum("bik,ib->kb", self.fibers, V)
        else:
            G = np.einsum("aik,ai->ak", self.fibers, V)
        return G.reshape(-1)

    def fiber_pi(self, b):
        w = self.pi2[:, b] if self.axis == 0 else self.pi2[b, :]
        return w / w.sum()

    def to_dense(self):
        n0, n1 = self.shape
        P = np.zeros((n0, n1, n0, n1))
        if self.axis == 0:
            for b in range(n1):
                P[:, b, :, b] = self.fibers[b]
        else:
            for a in range(n0):
                P[a, :, a, :] = self.fibers[a]
        return DiscreteKernel(P.reshape(n0 * n1, n0 * n1), self.pi)

    def deviation_norm(self):
        """||K - P|| where P is the exact projection onto the frozen
        coordinate: the max over fibers of each fiber's pi-weighted norm."""
        return max(pi_operator_norm(DiscreteKernel(self.fibers[b], self.fiber_pi(b), check=False))
                   for b in range(self.fibers.shape[0]))


def projection_fibers(pi2, axis):
    """Exact grid Gibbs update (conditional projection) along ``axis``."""
    pi2 = np.asarray(pi2, dtype=float)
    W = pi2.T if axis == 0 else pi2
    W = W / W.sum(axis=1, keepdims=True)
    fibers = np.repeat(W[:, None, :], W.shape[1], axis=1)
    return FiberKernel(fibers, pi2, axis)


def gaussian_grid_blocks(t, grid, kind="gibbs", step_sizes=None):
    """Block kernels for a 2-D target with two scalar blocks on a 2-D grid.

    Returns (kernels, projections, pi2). Each fiber kernel is the 1-D
    discretisation of the block's conditional kernel at that grid value
    of the other coordinate.
    """
    if t.blocks.sizes != (1, 1):
        raise UnsupportedError("grid block kernels need a 2-D target with scalar blocks")
    if grid.dims != 2:
        raise UsageError("need a 2-D grid")
    X = grid.states
    r = X - t.mu
    logp = -0.5 * np.einsum("ni,ij,nj->n", r, t.Q, r)
    pi2 = _normalize_log(logp).reshape(grid.n)
    axes = grid.axes
    kernels, projs = [], []
    for axis in (0, 1):
        other = axes[1 - axis]
        fibers = []
        for b in other:
            x = np.zeros(2)
            x[1 - axis] = b
            if kind == "gibbs":
                view = density_view("gibbs", target=t, j=axis, x=x)
            elif kind == "mala":
                view = density_view("mala", target=t, j=axis, x=x, h=step_sizes[axis])
            else:
                raise UnsupportedError(f"grid blocks for kernel kind {kind!r}")
            fibers.append(_mh_matrix(view, axes[axis], grid.dx[axis]))
        kernels.append(FiberKernel(np.array(fibers), pi2, axis))
        projs.append(projection_fibers(pi2, axis))
    return kernels, projs, pi2


# --- lazy combinations -------------------------------------------------------------

class LazyKernel:
    """Matrix-free product or mixture of kernels sharing one pi."""

    def __init__(self, kind, parts, weights=None):
        self.kind = kind
        self.parts = list(parts)
        self.weights = None if weights is None else [float(w) for w in weights]
        self.pi = self.parts[0].pi
        self.reversible = kind == "mixture" and all(p.reversible for p in self.parts)

    @property
    def n_states(self):
        return self.pi.size

    def matvec(self, f):
        if self.kind == "compose":
            v = f
            for K in reversed(self.parts):
                v = K.matvec(v)
            return v
        return sum(w * K.matvec(f) for w, K in zip(self.weights, self.parts))

    def rmatvec(self, v):
        if self.kind == "compose":
            for K in self.parts:
                v = K.rmatvec(v)
            return v
        return sum(w * K.rmatvec(v) for w, K in zip(self.weights, self.parts))

    def to_dense(self):
        dense = [K.to_dense() for K in self.parts]
        return compose(dense) if self.kind == "compose" else mixture(dense, self.weights)


def _check_same_pi(kernels):
    pi = kernels[0].pi
    for K in kernels[1:]:
        if K.pi.shape != pi.shape or np.max(np.abs(K.pi - pi)) > PI_TOL:
            raise UsageError("kernels do not share a stationary distribution")


def compose(kernels):
    """Kernel of applying kernels[0], then kernels[1], ... (matrix P0 P1 ...)."""
    kernels = list(kernels)
    if not kernels:
        raise UsageError("compose needs at least one kernel")
    _check_same_pi(kernels)
    if all(isinstance(K, DiscreteKernel) for K in kernels):
        P = kernels[0].P
        for K in kernels[1:]:
            P = P @ K.P
        return DiscreteKernel(P, kernels[0].pi, check=False)
    return LazyKernel("compose", kernels)


def mixture(kernels, weights):
    kernels = list(kernels)
    w = np.asarray(weights, dtype=float)
    if len(w) != len(kernels) or w.min() < 0 or abs(w.sum() - 1) > 1e-12:
        raise UsageError("mixture weights must be nonnegative and sum to 1")
    _check_same_pi(kernels)
    if all(isinstance(K, DiscreteKernel) for K in kernels):
        P = sum(wi * K.P for wi, K in zip(w, kernels))
        return DiscreteKernel(P, kernels[0].pi, check=False)
    return LazyKernel("mixture", kernels, w)


def power(K, m):
    return compose([K] * int(m))


# --- operator norms --------------------------------------------------------------

def _weighted_operator(K):
    s = np.sqrt(K.pi)
    n = s.size

    def mv(v):
        v = np.asarray(v).reshape(-1)
        u = v / s
        return s * (K.matvec(u) - (K.pi @ u))

    def rmv(v):
        v = np.asarray(v).reshape(-1)
        w = s * v
        return K.rmatvec(w) / s - s * w.sum()

    return LinearOperator((n, n), matvec=mv, rmatvec=rmv, dtype=float)


def pi_operator_norm(K):
    """||K - Pi|| in L^2(pi): largest singular value of D^{1/2}(P - 1 pi^T)D^{-1/2}.

    Reversible kernels use the symmetric eigenproblem, others singular
    values. Matrix-free kernels go through ARPACK.
    """
    if isinstance(K, DiscreteKernel):
        A = K.weighted_matrix()
        if K.reversible:
            w = linalg.eigen_sym(0.5 * (A + A.T)).values
            return float(max(abs(w[0]), abs(w[-1])))
        if A.shape[0] <= linalg.JACOBI_MAX_DIM:
            return linalg.two_norm(A)
        return float(np.linalg.norm(A, 2))
    op = _weighted_operator(K)
    if K.reversible:
        w = eigsh(op, k=2, which="LM", tol=ARPACK_TOL, return_eigenvectors=False)
        return float(np.max(np.abs(w)))
    s = svds(op, k=1, tol=ARPACK_TOL, return_singular_vectors=False)
    return float(s[0])


def spectral_gap(K):
    return 1.0 - pi_operator_norm(K)


# --- Gaussian sweep rate -----------------------------------------------------------

def sweep_matrix(t, sigma):
    """Linear part of one Gibbs sweep x -> B x + c (block sigma[0] first)."""
    B = np.eye(t.N)
    for j in sigma:
        U = np.eye(t.N)
        c = t.cache[j]
        sl = t.blocks.slice(j)
        U[sl, :] = 0.0
        U[sl, c.others] = -c.coupling
        B = U @ B
    return B


def dsg_gaussian_rate(t, sigma, max_squarings=80, tol=1e-14):
    """Spectral radius of the sweep matrix, as lim ||B^k||^{1/k} evaluated
    by repeated squaring with renormalisation (k = 2^m)."""
    if sorted(sigma) != list(range(t.d)):
        raise UsageError("sigma must be a permutation of the blocks")
    M = sweep_matrix(t, sigma)
    log_scale = 0.0
    est = None
    for m in range(max_squarings):
        s = np.linalg.norm(M)
        if s == 0.0:
            return 0.0
        M = M / s
        log_scale += math.log(s)
        new = math.exp(log_scale / 2 ** m)
        if est is not None and abs(new - est) <= tol * max(new, 1e-300):
            return new
        est = new
        M = M @ M
        log_scale *= 2.0
    raise NumericalFailure("sweep spectral radius did not converge")


# --- asymptotic variance --------------------------------------------------------------

def pi_inner(f, g, pi):
    return float(np.sum(pi * f * g))


def asymptotic_variance_exact(K, f, gap=None):
    """sigma^2(f) = 2 <fbar, g> - pi(fbar^2) with (I - P) g = fbar, pi(g) = 0."""
    if not isinstance(K, DiscreteKernel):
        K = K.to_dense()
    if gap is None:
        gap = spectral_gap(K)
    if gap <= 1e-8:
        raise InapplicableError(f"spectral gap {gap:.3e} too small for the variance series")
    f = np.asarray(f, dtype=float).reshape(-1)
    fbar = f - K.pi @ f
    n = K.n_states
    A = np.eye(n) - K.P + K.pi[None, :]
    g = np.linalg.solve(A, fbar)
    return 2.0 * pi_inner(fbar, g, K.pi) - pi_inner(fbar, fbar, K.pi)


# --- inequality checks on grid kernels ----------------------------------------------

def residual_lower_slack(K, lam, f):
    """||Kf - f||^2 + (1 - lam) <f, Kf - f>; nonnegative when K's spectrum
    lies in [-lam, lam] U {1}."""
    Kf = K.matvec(f)
    r = Kf - f
    return pi_inner(r, r, K.pi) + (1.0 - lam) * pi_inner(f, r, K.pi)


def telescoping_slacks(kernels, lam0, f):
    """For blocks in sweep order, bound - lhs of
    ||K_j f - f||^2 <= 4 j (1+l0)/(1-l0) (||f - Pi f||^2 - ||u_j||^2)."""
    pi = kernels[0].pi
    u = f - pi @ f
    n0 = pi_inner(u, u, pi)
    c = (1.0 + lam0) / (1.0 - lam0)
    out = []
    for j, K in enumerate(kernels, start=1):
        u = K.matvec(u)
        r = K.matvec(f) - f
        out.append(4.0 * j * c * (n0 - pi_inner(u, u, pi)) - pi_inner(r, r, pi))
    return out


# --- simulation of grid chains ------------------------------------------------------

def _cum_rows(M):
    C = np.cumsum(M, axis=-1)
    C[..., -1] = 1.0
    return C.tolist()


def simulate_discrete(K, n, rng, x0=None):
    """Run the dense chain K for n steps; returns the visited state indices."""
    cum = _cum_rows(K.P)
    pi_cum = _cum_rows(K.pi)
    last = K.n_states - 1
    i = bisect.bisect_right(pi_cum, rng.next_uniform()) if x0 is None else int(x0)
    out = np.empty(int(n), dtype=np.int64)
    for k in range(int(n)):
        i = min(bisect.bisect_right(cum[i], rng.next_uniform()), last)
        out[k] = i
    return out


def simulate_grid_scan(blocks, n, rng, scan="deterministic", sigma=(0, 1),
                       updates_per_step=2, x0=None):
    """Simulate a component-wise chain on a 2-D product grid.

    scan="deterministic": each step is one sweep in order sigma.
    scan="random": each step is ``updates_per_step`` uniformly chosen block
    updates. Starts from an exact grid draw unless x0 = (i0, i1). Returns
    the flat state index after every step.
    """
    pi2 = blocks[0].pi2
    n0, n1 = pi2.shape
    cums = [_cum_rows(b.fibers) for b in blocks]
    lasts = [n0 - 1, n1 - 1]
    if x0 is None:
        k = bisect.bisect_right(_cum_rows(pi2.reshape(-1)), rng.next_uniform())
        k = min(k, n0 * n1 - 1)
        i = [k // n1, k % n1]
    else:
        i = [int(x0[0]), int(x0[1])]
    out = np.empty(int(n), dtype=np.int64)
    nxt = rng.next_uniform
    for step in range(int(n)):
        if scan == "deterministic":
            order = sigma
        else:
            order = [0 if nxt() < 0.5 else 1 for _ in range(updates_per_step)]
        for a in order:
            row = cums[a][i[1 - a]][i[a]]
            i[a] = min(bisect.bisect_right(row, nxt()), lasts[a])
        out[step] = i[0] * n1 + i[1]
    return out
