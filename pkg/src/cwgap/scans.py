"""Random-scan and deterministic-scan drivers built from block kernels."""

import bisect
import re
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, UsageError
from .kernels import AcceptanceStats


@dataclass(frozen=True)
class ScanSchedule:
    """Deterministic sweep order ``sigma`` (0-based permutation) or random
    selection with probabilities ``weights``.

    For random scans ``updates_per_step`` block updates make one recorded
    step; 1 gives P_RCW itself, d gives (P_RCW)^d.
    """

    kind: str
    sigma: tuple = ()
    weights: tuple = ()
    updates_per_step: int = 1

    def __post_init__(self):
        if self.kind == "deterministic":
            sig = tuple(int(s) for s in self.sigma)
            if sorted(sig) != list(range(len(sig))) or not sig:
                raise ConfigError(f"sigma must be a permutation of 0..d-1, got {sig}")
            object.__setattr__(self, "sigma", sig)
        elif self.kind == "random":
            w = tuple(float(v) for v in self.weights)
            if not w or min(w) <= 0 or abs(sum(w) - 1) > 1e-12:
                raise ConfigError(f"weights must be positive and sum to 1, got {w}")
            if self.updates_per_step < 1:
                raise ConfigError("updates_per_step must be >= 1")
            object.__setattr__(self, "weights", w)
        else:
            raise ConfigError(f"unknown scan kind {self.kind!r}")

    @property
    def d(self):
        return len(self.sigma) if self.kind == "deterministic" else len(self.weights)

    @classmethod
    def deterministic(cls, sigma):
        return cls("deterministic", sigma=tuple(sigma))

    @classmethod
    def random(cls, weights, updates_per_step=1):
        return cls("random", weights=tuple(weights), updates_per_step=updates_per_step)

    @classmethod
    def uniform(cls, d, updates_per_step=1):
        return cls.random([1.0 / d] * d, updates_per_step)

    @classmethod
    def from_spec(cls, spec, d):
        kind = spec.get("kind")
        if kind == "deterministic":
            sigma = spec.get("sigma", list(range(d)))
            sched = cls.deterministic(sigma)
        elif kind == "random":
            sched = cls.random(spec.get("weights", [1.0 / d] * d), spec.get("updates_per_step", 1))
        else:
            raise ConfigError(f"unknown scan kind {kind!r}")
        if sched.d != d:
            raise ConfigError(f"scan covers {sched.d} blocks, target has {d}")
        return sched


@dataclass
class ChainRun:
    samples: np.ndarray          # (n - burn_in) x n_functionals
    functional_names: list
    stats: AcceptanceStats
    seed_manifest: dict
    wall_time: float
    block_updates: int
    final_state: np.ndarray = field(repr=False, default=None)


class Functional:
    """Named scalar function of the state."""

    def __init__(self, name, fn):
        self.name = name
        self.fn = fn

    def __call__(self, x):
        return self.fn(x)

    def __repr__(self):
        return f"Functional({self.name!r})"


_FUNC_RE = re.compile(r"^x(\d+)(?:\^(\d+)|\*x(\d+))?$")


def parse_functional(name):
    """'x0' (coordinate), 'x1^2' (power), 'x0*x1' (product) or a float constant."""
    s = name.replace(" ", "")
    m = _FUNC_RE.match(s)
    if m:
        i = int(m.group(1))
        if m.group(2):
            p = int(m.group(2))
            return Functional(name, lambda x: float(x[i]) ** p)
        if m.group(3):
            k = int(m.group(3))
            return Functional(name, lambda x: float(x[i]) * float(x[k]))
        return Functional(name, lambda x: float(x[i]))
    try:
        c = float(s)
    except ValueError:
        raise ConfigError(f"cannot parse functional {name!r}") from None
    return Functional(name, lambda x: c)


def _cum_weights(weights):
    c = np.cumsum(weights)
    c[-1] = 1.0
    return c.tolist()


def dcw_sweep(t, kernels, sigma, x, rng, stats=None):
    """Update blocks sigma[0], sigma[1], ... in turn (one P_DCW step)."""
    for j in sigma:
        x, acc = kernels[j].step(t, j, x, rng)
        if stats is not None:
            stats.record(j, acc)
    return x


def rcw_step(t, kernels, weights, x, rng, stats=None, _cum=None):
    """Pick block j with probability weights[j] and apply K_j."""
    cum = _cum if _cum is not None else _cum_weights(weights)
    if len(cum) == 1:
        j = 0  # nothing to choose, so no uniform is spent
    else:
        j = min(bisect.bisect_right(cum, rng.next_uniform()), len(cum) - 1)
    x, acc = kernels[j].step(t, j, x, rng)
    if stats is not None:
        stats.record(j, acc)
    return x


def run_chain(t, kernels, schedule, n, burn_in, functionals, rng, x0=None):
    """Run n steps, record functionals after each step past burn_in.

    Deterministic step = one full sweep; random step = ``updates_per_step``
    block updates. Starts from an exact target draw unless x0 is given.
    """
    n, burn_in = int(n), int(burn_in)
    if not (n > burn_in >= 0):
        raise UsageError("need n > burn_in >= 0")
    if len(kernels) != t.d or schedule.d != t.d:
        raise UsageError("kernels and schedule must cover every block")
    funcs = [f if isinstance(f, Functional) else (parse_functional(f) if isinstance(f, str) else Functional(getattr(f, "__name__", "f"), f))
             for f in functionals]
    start_counter = rng.counter
    t0 = time.perf_counter()
    x = t.sample(rng) if x0 is None else np.array(x0, dtype=float)
    stats = AcceptanceStats.zeros(t.d)
    out = np.empty((n - burn_in, len(funcs)))
    if schedule.kind == "deterministic":
        sigma = schedule.sigma
        for k in range(n):
            x = dcw_sweep(t, kernels, sigma, x, rng, stats)
            if k >= burn_in:
                out[k - burn_in] = [f(x) for f in funcs]
    else:
        cum = _cum_weights(schedule.weights)
        u = schedule.updates_per_step
        for k in range(n):
            for _ in range(u):
                x = rcw_step(t, kernels, schedule.weights, x, rng, stats, _cum=cum)
            if k >= burn_in:
                out[k - burn_in] = [f(x) for f in funcs]
    wall = time.perf_counter() - t0
    manifest = {"root_seed": rng.root_seed, "stream_id": rng.stream_id,
                "counter_start": start_counter, "counter_end": rng.counter}
    return ChainRun(out, [f.name for f in funcs], stats, manifest, wall,
                    int(stats.proposed.sum()), x)
