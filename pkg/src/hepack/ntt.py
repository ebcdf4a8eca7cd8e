"""Number-theoretic transforms over word-sized primes, prime discovery and
CRT reconstruction helpers.

Negacyclic convolution in Z_p[x]/(x^n + 1) uses the psi-twist: evaluations
are taken at odd powers of a primitive 2n-th root of unity. Primes below
2^31 run on int64 numpy arrays (products stay under 2^63); larger moduli
fall back to object dtype with Python integers.
"""

from __future__ import annotations

import numpy as np

try:
    from numba import njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    _HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(fn):
            return fn

        return wrap


@njit(cache=True)
def _butterfly_kernel(x, twiddles, shoup, p):
    """In-place iterative Cooley-Tukey over the last axis of a 2-D batch.

    ``twiddles`` concatenates the per-stage tables (lengths 1, 2, 4, ...);
    ``shoup`` holds floor(w * 2^32 / p) so the modular product needs no
    hardware division. Requires p < 2^31; values stay in [0, p).
    """
    batch, n = x.shape
    half = 1
    base = 0
    while half < n:
        step = 2 * half
        for b in range(batch):
            for start in range(0, n, step):
                for j in range(half):
                    w = twiddles[base + j]
                    ws = shoup[base + j]
                    xv = x[b, start + half + j]
                    q = (xv * ws) >> 32
                    hi = xv * w - q * p
                    if hi >= p:
                        hi -= p
                    lo = x[b, start + j]
                    u = lo + hi
                    if u >= p:
                        u -= p
                    v = lo - hi
                    if v < 0:
                        v += p
                    x[b, start + j] = u
                    x[b, start + half + j] = v
        base += half
        half = step


_MR_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37)


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, valid for n < 3.3e24."""
    if n < 2:
        return False
    for p in _MR_BASES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MR_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


def _factorize(n: int) -> set[int]:
    factors = set()
    d = 2
    while d * d <= n:
        while n % d == 0:
            factors.add(d)
            n //= d
        d += 1 if d == 2 else 2
    if n > 1:
        factors.add(n)
    return factors


def primitive_root(p: int) -> int:
    """Smallest generator of the multiplicative group mod prime p."""
    factors = _factorize(p - 1)
    g = 2
    while True:
        if all(pow(g, (p - 1) // q, p) != 1 for q in factors):
            return g
        g += 1


def find_ntt_primes(count: int, bits: int, two_n: int, below=None) -> list[int]:
    """Find ``count`` primes p = 1 (mod two_n) just below 2^bits.

    ``below`` excludes primes >= that value so disjoint bases can be drawn
    from the same bit size.
    """
    primes = []
    p = ((1 << bits) // two_n) * two_n + 1
    if below is not None:
        p = min(p, ((below - 2) // two_n) * two_n + 1)
    while len(primes) < count:
        if p < two_n:
            raise ValueError("ran out of candidate primes")
        if is_prime(p):
            primes.append(p)
        p -= two_n
    return primes


def _bit_reverse_permutation(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    perm = np.zeros(n, dtype=np.int64)
    for i in range(n):
        perm[i] = int(format(i, f"0{bits}b")[::-1], 2)
    return perm


class NttPrime:
    """Forward/inverse negacyclic NTT tables for one prime p = 1 (mod 2n).

    fwd(a)[k] = a(psi^(2k+1)) in natural order k, where psi is a fixed
    primitive 2n-th root of unity mod p.
    """

    def __init__(self, p: int, n: int):
        if (p - 1) % (2 * n) != 0:
            raise ValueError(f"p={p} is not 1 mod {2 * n}")
        self.p = p
        self.n = n
        self.dtype = np.int64 if p < (1 << 31) else object
        g = primitive_root(p)
        self.psi = pow(g, (p - 1) // (2 * n), p)
        w = self.psi * self.psi % p
        self._brev = _bit_reverse_permutation(n)
        self._psi_pows = self._powers(self.psi, n)
        ipsi = pow(self.psi, p - 2, p)
        self._ipsi_pows = self._powers(ipsi, n)
        self._n_inv = pow(n, p - 2, p)
        self._wtab = self._stage_twiddles(w)
        self._iwtab = self._stage_twiddles(pow(w, p - 2, p))
        if self.dtype is np.int64 and _HAVE_NUMBA:
            self._wflat = np.concatenate(self._wtab)
            self._iwflat = np.concatenate(self._iwtab)
            self._wshoup = (self._wflat.astype(object) << 32) // p
            self._wshoup = self._wshoup.astype(np.int64)
            self._iwshoup = ((self._iwflat.astype(object) << 32) // p).astype(np.int64)
        else:
            self._wflat = None

    def _powers(self, base: int, count: int) -> np.ndarray:
        out = np.empty(count, dtype=self.dtype)
        acc = 1
        for i in range(count):
            out[i] = acc
            acc = acc * base % self.p
        return out

    def _stage_twiddles(self, w: int) -> list[np.ndarray]:
        tabs = []
        half = 1
        while half < self.n:
            step = self.n // (2 * half)
            tabs.append(self._powers(pow(w, step, self.p), half))
            half *= 2
        return tabs

    def _cyclic(self, a: np.ndarray, tabs) -> np.ndarray:
        # batched over leading axes; transforms the last axis
        p = self.p
        x = a[..., self._brev].copy()
        if self._wflat is not None:
            flat = x.reshape(-1, self.n)
            if tabs is self._wtab:
                _butterfly_kernel(flat, self._wflat, self._wshoup, p)
            else:
                _butterfly_kernel(flat, self._iwflat, self._iwshoup, p)
            return flat.reshape(x.shape)
        lead = x.shape[:-1]
        half = 1
        stage = 0
        n = self.n
        while half < n:
            x = x.reshape(*lead, n // (2 * half), 2 * half)
            lo = x[..., :half]
            hi = x[..., half:] * tabs[stage] % p
            x = np.concatenate(((lo + hi) % p, (lo - hi) % p), axis=-1)
            x = x.reshape(*lead, n)
            half *= 2
            stage += 1
        return x

    def fwd(self, a: np.ndarray) -> np.ndarray:
        """Evaluations at odd psi powers; accepts (..., n) batches."""
        a = np.asarray(a, dtype=self.dtype) % self.p
        return self._cyclic(a * self._psi_pows % self.p, self._wtab)

    def inv(self, ev: np.ndarray) -> np.ndarray:
        ev = np.asarray(ev, dtype=self.dtype) % self.p
        a = self._cyclic(ev, self._iwtab)
        return a * self._ipsi_pows % self.p * self._n_inv % self.p

    def negacyclic_mul(self, a: np.ndarray, b: np.ndarray) -> np.ndarray:
        return self.inv(self.fwd(a) * self.fwd(b) % self.p)


def schoolbook_negacyclic(a, b, n: int, p=None):
    """Reference negacyclic product: exact object-int convolution with the
    x^n = -1 wraparound. Oracle for the NTT path."""
    a = np.asarray(a, dtype=object)
    b = np.asarray(b, dtype=object)
    conv = np.convolve(a, b)
    out = np.zeros(n, dtype=object)
    out[: conv.shape[0] - n + 1] = 0
    for i, v in enumerate(conv):
        if i < n:
            out[i] += v
        else:
            out[i - n] -= v
    if p is not None:
        out %= p
    return out


class CrtBasis:
    """Reconstruction between residues mod a list of primes and big integers."""

    def __init__(self, primes: list[int]):
        self.primes = list(primes)
        self.product = 1
        for p in self.primes:
            self.product *= p
        self._interp = np.array(
            [
                (self.product // p) * pow(self.product // p, -1, p) % self.product
                for p in self.primes
            ],
            dtype=object,
        )

    def to_big(self, residues: np.ndarray) -> np.ndarray:
        """(k, n) residue stack -> (n,) object array of ints in [0, product)."""
        return residues.astype(object).T @ self._interp % self.product

    def from_big(self, values: np.ndarray) -> np.ndarray:
        """(n,) big ints -> (k, n) int64 residue stack."""
        values = np.asarray(values, dtype=object)
        return np.stack([(values % p).astype(np.int64) for p in self.primes])
