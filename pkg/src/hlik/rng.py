"""Counter-based random number generation.

Every draw is a pure function of ``(stream key, draw index)``: draw ``i`` of a
stream owns the counter block ``[64*i, 64*(i+1))`` and consumes counters from
it sequentially (rejection samplers use several). Streams are derived from a
root seed plus arbitrary labels, so replication-level work can be partitioned
across any number of workers without changing the numbers.

Samplers: normal by the polar method, gamma by Marsaglia-Tsang (with the
``U^(1/a)`` boost for shape < 1), Poisson by inversion below mean 10 and the
PTRS rejection method above. The jitted scalar kernels are mirrored by
vectorized numpy fallbacks that consume identical counters per draw.
"""

import math

import numpy as np

from ._jit import NUMBA_ENABLED, njit

__all__ = ["RngStream", "StreamFactory", "rng_streams", "derive_key"]

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_DRAW_STRIDE = 64  # counters reserved per logical draw
_INV_2_53 = 1.0 / 9007199254740992.0  # 2^-53


# ---------------------------------------------------------------------------
# Core mixing function (splitmix64 finalizer over key + counter)
# ---------------------------------------------------------------------------


def _mix64_py(key, ctr):
    z = (key + _GOLDEN * (ctr + 1)) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


if NUMBA_ENABLED:
    @njit(cache=True)
    def _mix64(key, ctr):
        z = np.uint64(key) + np.uint64(_GOLDEN) * (np.uint64(ctr) + np.uint64(1))
        z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
        z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
        return z ^ (z >> np.uint64(31))

    @njit(cache=True)
    def _u01(key, ctr):
        # strictly inside (0, 1)
        return (float(_mix64(key, ctr) >> np.uint64(11)) + 0.5) * _INV_2_53
else:
    def _mix64(key, ctr):
        return _mix64_py(int(key), int(ctr))

    def _u01(key, ctr):
        return ((_mix64_py(int(key), int(ctr)) >> 11) + 0.5) * _INV_2_53


def _u01_vec(key, ctrs):
    """Vectorized uniform (0,1) for an array of counters (numpy fallback path)."""
    z = (np.uint64(key) + np.uint64(_GOLDEN) * (ctrs.astype(np.uint64) + np.uint64(1)))
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    z = z ^ (z >> np.uint64(31))
    return ((z >> np.uint64(11)).astype(np.float64) + 0.5) * _INV_2_53


def derive_key(seed, *labels):
    """Derive a 64-bit stream key from a seed and labels (str or int)."""
    key = _mix64_py(int(seed) & _MASK64, 0x5EED)
    for lab in labels:
        if isinstance(lab, str):
            acc = 0xCBF29CE484222325  # FNV-1a over utf-8 bytes
            for b in lab.encode("utf-8"):
                acc = ((acc ^ b) * 0x100000001B3) & _MASK64
            key = _mix64_py(key ^ acc, 0xA11CE)
        else:
            key = _mix64_py(key ^ (int(lab) & _MASK64), 0xB0B)
    return key


# ---------------------------------------------------------------------------
# Scalar draw kernels. Each consumes counters from the 64-slot block of one
# logical draw; callers pass base = draw_index * 64.
# ---------------------------------------------------------------------------


@njit(cache=True)
def _draw_normal(key, base):
    c = base
    for _ in range(32):
        v1 = 2.0 * _u01(key, c) - 1.0
        v2 = 2.0 * _u01(key, c + 1) - 1.0
        c += 2
        s = v1 * v1 + v2 * v2
        if 0.0 < s < 1.0:
            return v1 * math.sqrt(-2.0 * math.log(s) / s)
    # unreachable in practice (reject prob ~0.215 per attempt)
    return 0.0


@njit(cache=True)
def _draw_gamma1(key, base, shape):
    """Gamma(shape, 1) draw for shape >= 1 (Marsaglia-Tsang); returns (x, ctr)."""
    d = shape - 1.0 / 3.0
    cc = 1.0 / math.sqrt(9.0 * d)
    c = base
    for _ in range(16):
        # embedded polar normal
        x = 0.0
        ok = False
        for _ in range(32):
            v1 = 2.0 * _u01(key, c) - 1.0
            v2 = 2.0 * _u01(key, c + 1) - 1.0
            c += 2
            s = v1 * v1 + v2 * v2
            if 0.0 < s < 1.0:
                x = v1 * math.sqrt(-2.0 * math.log(s) / s)
                ok = True
                break
        if not ok:
            continue
        v = (1.0 + cc * x) ** 3
        if v <= 0.0:
            continue
        u = _u01(key, c)
        c += 1
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v, c
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v, c
    return d, c  # unreachable fallback


@njit(cache=True)
def _draw_gamma(key, base, shape):
    """Gamma(shape, 1) draw for any shape > 0."""
    if shape >= 1.0:
        x, _ = _draw_gamma1(key, base, shape)
        return x
    x, c = _draw_gamma1(key, base, shape + 1.0)
    u = _u01(key, c)
    return x * u ** (1.0 / shape)


@njit(cache=True)
def _draw_poisson(key, base, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        # inversion from a single uniform
        u = _u01(key, base)
        p = math.exp(-lam)
        f = p
        k = 0
        while u > f and k < 10000:
            k += 1
            p *= lam / k
            f += p
        return k
    # PTRS rejection (Hormann)
    b = 0.931 + 2.53 * math.sqrt(lam)
    a = -0.059 + 0.02483 * b
    inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    c = base
    for _ in range(32):
        u = _u01(key, c) - 0.5
        v = _u01(key, c + 1)
        c += 2
        us = 0.5 - abs(u)
        k = int(math.floor((2.0 * a / us + b) * u + lam + 0.43))
        if us >= 0.07 and v <= vr:
            return k
        if k < 0 or (us < 0.013 and v > us):
            continue
        lhs = math.log(v * inv_alpha / (a / (us * us) + b))
        rhs = -lam + k * math.log(lam) - math.lgamma(k + 1.0)
        if lhs <= rhs:
            return k
    return int(lam)  # unreachable fallback


# ---------------------------------------------------------------------------
# Batch fill kernels (jit path)
# ---------------------------------------------------------------------------


@njit(cache=True)
def _fill_uniform_jit(key, start, out):
    for i in range(out.shape[0]):
        out[i] = _u01(key, (start + i) * _DRAW_STRIDE)


@njit(cache=True)
def _fill_exponential_jit(key, start, out):
    for i in range(out.shape[0]):
        out[i] = -math.log(_u01(key, (start + i) * _DRAW_STRIDE))


@njit(cache=True)
def _fill_normal_jit(key, start, out):
    for i in range(out.shape[0]):
        out[i] = _draw_normal(key, (start + i) * _DRAW_STRIDE)


@njit(cache=True)
def _fill_gamma_jit(key, start, shape, out):
    for i in range(out.shape[0]):
        out[i] = _draw_gamma(key, (start + i) * _DRAW_STRIDE, shape[i])


@njit(cache=True)
def _fill_poisson_jit(key, start, lam, out):
    for i in range(out.shape[0]):
        out[i] = _draw_poisson(key, (start + i) * _DRAW_STRIDE, lam[i])


# ---------------------------------------------------------------------------
# Vectorized fallbacks consuming identical counters per draw
# ---------------------------------------------------------------------------


def _fill_uniform_np(key, start, out):
    n = out.shape[0]
    ctrs = (np.arange(start, start + n, dtype=np.uint64)) * np.uint64(_DRAW_STRIDE)
    out[:] = _u01_vec(key, ctrs)


def _fill_exponential_np(key, start, out):
    _fill_uniform_np(key, start, out)
    np.log(out, out=out)
    np.negative(out, out=out)


def _normal_rounds_np(key, c, todo, out):
    """Polar rounds on active lanes; c is the per-lane counter array (mutated)."""
    for _ in range(32):
        if not todo.any():
            break
        idx = np.where(todo)[0]
        v1 = 2.0 * _u01_vec(key, c[idx]) - 1.0
        v2 = 2.0 * _u01_vec(key, c[idx] + np.uint64(1)) - 1.0
        c[idx] += np.uint64(2)
        s = v1 * v1 + v2 * v2
        ok = (s > 0.0) & (s < 1.0)
        good = idx[ok]
        with np.errstate(divide="ignore", invalid="ignore"):
            z = v1 * np.sqrt(-2.0 * np.log(np.where(ok, s, 0.5)) / np.where(ok, s, 0.5))
        out[good] = z[ok]
        todo[good] = False


def _fill_normal_np(key, start, out):
    n = out.shape[0]
    c = (np.arange(start, start + n, dtype=np.uint64)) * np.uint64(_DRAW_STRIDE)
    todo = np.ones(n, dtype=bool)
    _normal_rounds_np(key, c, todo, out)


def _fill_gamma_np(key, start, shape, out):
    n = out.shape[0]
    base = (np.arange(start, start + n, dtype=np.uint64)) * np.uint64(_DRAW_STRIDE)
    c = base.copy()
    boost = shape < 1.0
    sh = np.where(boost, shape + 1.0, shape)
    d = sh - 1.0 / 3.0
    cc = 1.0 / np.sqrt(9.0 * d)
    todo = np.ones(n, dtype=bool)
    x = np.empty(n)
    for _ in range(16):
        if not todo.any():
            break
        normals = np.empty(n)
        sub = todo.copy()
        _normal_rounds_np(key, c, sub, normals)
        # lanes whose polar budget ran out stay pending (never happens in practice)
        got = todo & ~sub
        idx = np.where(got)[0]
        v = (1.0 + cc[idx] * normals[idx]) ** 3
        pos = v > 0.0
        idx = idx[pos]
        v = v[pos]
        u = _u01_vec(key, c[idx])
        c[idx] += np.uint64(1)
        xn = normals[idx]
        x2 = xn * xn
        with np.errstate(divide="ignore", invalid="ignore"):
            accept = (u < 1.0 - 0.0331 * x2 * x2) | \
                     (np.log(u) < 0.5 * x2 + d[idx] * (1.0 - v + np.log(v)))
        acc = idx[accept]
        x[acc] = d[acc] * v[accept]
        todo[acc] = False
    x[todo] = d[todo]  # unreachable fallback, mirrors the scalar kernel
    if boost.any():
        idx = np.where(boost)[0]
        u = _u01_vec(key, c[idx])
        x[idx] = x[idx] * u ** (1.0 / shape[idx])
    out[:] = x


def _fill_poisson_np(key, start, lam, out):
    n = out.shape[0]
    base = (np.arange(start, start + n, dtype=np.uint64)) * np.uint64(_DRAW_STRIDE)
    small = lam < 10.0
    if small.any():
        idx = np.where(small)[0]
        u = _u01_vec(key, base[idx])
        lam_s = lam[idx]
        p = np.exp(-lam_s)
        f = p.copy()
        k = np.zeros(idx.size, dtype=np.int64)
        active = u > f
        for _ in range(10000):
            if not active.any():
                break
            k[active] += 1
            p[active] *= lam_s[active] / k[active]
            f[active] += p[active]
            active &= u > f
        out[idx] = k
    big = ~small
    if big.any():
        idx = np.where(big)[0]
        lam_b = lam[idx]
        b = 0.931 + 2.53 * np.sqrt(lam_b)
        a = -0.059 + 0.02483 * b
        inv_alpha = 1.1239 + 1.1328 / (b - 3.4)
        vr = 0.9277 - 3.6224 / (b - 2.0)
        c = base[idx].copy()
        todo = np.ones(idx.size, dtype=bool)
        res = np.zeros(idx.size, dtype=np.int64)
        for _ in range(32):
            if not todo.any():
                break
            act = np.where(todo)[0]
            u = _u01_vec(key, c[act]) - 0.5
            v = _u01_vec(key, c[act] + np.uint64(1))
            c[act] += np.uint64(2)
            us = 0.5 - np.abs(u)
            k = np.floor((2.0 * a[act] / us + b[act]) * u + lam_b[act] + 0.43).astype(np.int64)
            quick = (us >= 0.07) & (v <= vr[act])
            reject = (k < 0) | ((us < 0.013) & (v > us))
            kk = np.maximum(k, 0).astype(np.float64)
            with np.errstate(divide="ignore", invalid="ignore"):
                lhs = np.log(v * inv_alpha[act] / (a[act] / (us * us) + b[act]))
                rhs = -lam_b[act] + kk * np.log(lam_b[act]) - _lgamma_vec(kk + 1.0)
            accept = quick | (~reject & (lhs <= rhs))
            got = act[accept]
            res[got] = k[accept]
            todo[got] = False
        out[idx] = res


def _lgamma_vec(x):
    from .special import _lgamma_np
    return _lgamma_np(x)


# ---------------------------------------------------------------------------
# Stream objects
# ---------------------------------------------------------------------------


class RngStream:
    """One independent draw sequence addressed by (key, draw index)."""

    def __init__(self, key, start=0):
        self.key = int(key) & _MASK64
        self._draw = int(start)

    def _alloc(self, n):
        start = self._draw
        self._draw += n
        return start

    @staticmethod
    def _size(size):
        return 1 if size is None else int(size)

    def uniform(self, size=None):
        n = self._size(size)
        out = np.empty(n)
        start = self._alloc(n)
        if NUMBA_ENABLED:
            _fill_uniform_jit(np.uint64(self.key), start, out)
        else:
            _fill_uniform_np(self.key, start, out)
        return float(out[0]) if size is None else out

    def exponential(self, scale=1.0, size=None):
        n = self._size(size)
        out = np.empty(n)
        start = self._alloc(n)
        if NUMBA_ENABLED:
            _fill_exponential_jit(np.uint64(self.key), start, out)
        else:
            _fill_exponential_np(self.key, start, out)
        out *= scale
        return float(out[0]) if size is None else out

    def normal(self, loc=0.0, scale=1.0, size=None):
        n = self._size(size)
        out = np.empty(n)
        start = self._alloc(n)
        if NUMBA_ENABLED:
            _fill_normal_jit(np.uint64(self.key), start, out)
        else:
            _fill_normal_np(self.key, start, out)
        out = out * scale + loc
        return float(out[0]) if size is None else out

    def standard_normal(self, size=None):
        return self.normal(0.0, 1.0, size)

    def gamma(self, shape, rate=1.0, size=None):
        """Gamma draws with shape/rate parameterization (mean shape/rate)."""
        if size is None and np.ndim(shape) == 0 and np.ndim(rate) == 0:
            n, scalar = 1, True
        else:
            n = self._size(size) if size is not None else np.broadcast(
                np.asarray(shape), np.asarray(rate)).size
            scalar = False
        sh = np.broadcast_to(np.asarray(shape, dtype=np.float64), (n,)).copy()
        rt = np.broadcast_to(np.asarray(rate, dtype=np.float64), (n,))
        if np.any(sh <= 0.0) or np.any(rt <= 0.0):
            raise ValueError("gamma shape and rate must be positive")
        out = np.empty(n)
        start = self._alloc(n)
        if NUMBA_ENABLED:
            _fill_gamma_jit(np.uint64(self.key), start, sh, out)
        else:
            _fill_gamma_np(self.key, start, sh, out)
        out = out / rt
        return float(out[0]) if scalar else out

    def poisson(self, lam, size=None):
        if size is None and np.ndim(lam) == 0:
            n, scalar = 1, True
        else:
            n = self._size(size) if size is not None else np.asarray(lam).size
            scalar = False
        lam_arr = np.broadcast_to(np.asarray(lam, dtype=np.float64), (n,)).copy()
        if np.any(lam_arr < 0.0):
            raise ValueError("poisson mean must be nonnegative")
        out = np.empty(n, dtype=np.int64)
        start = self._alloc(n)
        if NUMBA_ENABLED:
            _fill_poisson_jit(np.uint64(self.key), start, lam_arr, out)
        else:
            _fill_poisson_np(self.key, start, lam_arr, out)
        return int(out[0]) if scalar else out


class StreamFactory:
    """Derives named substreams from a root seed.

    ``factory.stream("coverage", rep, "data")`` depends only on the labels,
    never on call order, so any worker partition reproduces the same numbers.
    """

    def __init__(self, seed):
        self.seed = int(seed)

    def stream(self, *labels):
        return RngStream(derive_key(self.seed, *labels))


def rng_streams(seed):
    """Stream factory rooted at ``seed`` (counter-based, order-independent)."""
    return StreamFactory(seed)
