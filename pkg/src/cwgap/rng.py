"""Splittable, counter-based random streams.

Output number ``i`` of a stream is ``splitmix64(key + i * GOLDEN)``, where
``key`` is a hash of ``(root_seed, stream_id)``. Because every output is a
pure function of the counter, bulk draws are vectorised with numpy integer
arithmetic and are bit-identical to repeated scalar calls.

Normals use Box-Muller on consecutive uniform pairs ``(u1, u2)``:
``r = sqrt(-2 log(1 - u1))``, first normal ``r cos(2 pi u2)``, second
``r sin(2 pi u2)``. The second one is cached and returned by the next call.
"""

import math

import numpy as np

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_STREAM_SALT = 0xD1B54A32D192ED03
_TWO_PI = 2.0 * math.pi
_INV_2_53 = 2.0 ** -53


def _mix64(z):
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def _mix64_array(z):
    # uint64 arithmetic wraps mod 2**64, same as the masked int version
    z = z ^ (z >> np.uint64(30))
    z = z * np.uint64(_M1)
    z = z ^ (z >> np.uint64(27))
    z = z * np.uint64(_M2)
    return z ^ (z >> np.uint64(31))


class RngStream:
    """One independent stream. Owned by a single worker; not thread-safe."""

    def __init__(self, root_seed, stream_id):
        self.root_seed = int(root_seed) & MASK
        self.stream_id = int(stream_id) & MASK
        self.key = _mix64(_mix64(self.root_seed) ^ _mix64(self.stream_id * _STREAM_SALT + GOLDEN))
        self.counter = 0
        self.cached_normal = None

    def __repr__(self):
        return f"RngStream(root_seed={self.root_seed}, stream_id={self.stream_id}, counter={self.counter})"

    def next_u64(self):
        self.counter += 1
        return _mix64(self.key + self.counter * GOLDEN)

    def next_uniform(self):
        """Uniform on [0, 1) with 53 random bits."""
        return (self.next_u64() >> 11) * _INV_2_53

    def next_std_normal(self):
        if self.cached_normal is not None:
            z, self.cached_normal = self.cached_normal, None
            return z
        u1 = self.next_uniform()
        u2 = self.next_uniform()
        r = math.sqrt(-2.0 * math.log1p(-u1))
        theta = _TWO_PI * u2
        self.cached_normal = r * math.sin(theta)
        return r * math.cos(theta)

    def uniforms(self, n):
        """Next ``n`` uniforms as an array (same values as n scalar calls)."""
        n = int(n)
        if n <= 0:
            return np.empty(0)
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            u = _mix64_array(np.uint64(self.key) + idx * np.uint64(GOLDEN))
        self.counter += n
        return (u >> np.uint64(11)).astype(np.float64) * _INV_2_53

    def normals(self, n):
        """Next ``n`` standard normals (same values as n scalar calls)."""
        n = int(n)
        out = np.empty(max(n, 0))
        if n <= 0:
            return out
        k = 0
        if self.cached_normal is not None:
            out[0] = self.cached_normal
            self.cached_normal = None
            k = 1
        n_pairs = (n - k + 1) // 2
        u = self.uniforms(2 * n_pairs).tolist()
        log1p, sqrt, cos, sin = math.log1p, math.sqrt, math.cos, math.sin
        vals = []
        for i in range(n_pairs):
            r = sqrt(-2.0 * log1p(-u[2 * i]))
            th = _TWO_PI * u[2 * i + 1]
            vals.append(r * cos(th))
            vals.append(r * sin(th))
        if len(vals) > n - k:
            self.cached_normal = vals.pop()
        out[k:] = vals
        return out

    def get_state(self):
        """JSON-serialisable snapshot; restore with ``RngStream.from_state``."""
        return {
            "root_seed": self.root_seed,
            "stream_id": self.stream_id,
            "counter": self.counter,
            "cached_normal": self.cached_normal,
        }

    @classmethod
    def from_state(cls, state):
        s = cls(state["root_seed"], state["stream_id"])
        s.counter = int(state["counter"])
        c = state.get("cached_normal")
        s.cached_normal = None if c is None else float(c)
        return s


def derive_stream(root_seed, stream_id):
    """Stream for replica / job ``stream_id`` under experiment seed ``root_seed``."""
    return RngStream(root_seed, stream_id)
