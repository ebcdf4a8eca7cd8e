"""NTT path against the schoolbook negacyclic oracle, plus prime discovery
and CRT reconstruction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hepack.ntt import (
    CrtBasis,
    NttPrime,
    find_ntt_primes,
    is_prime,
    primitive_root,
    schoolbook_negacyclic,
)


def test_is_prime_known_values():
    assert is_prime(2) and is_prime(147457) and is_prime(4398047232001)
    assert not is_prime(1) and not is_prime(147456) and not is_prime(24577)


def test_find_ntt_primes_properties():
    primes = find_ntt_primes(4, 30, 8192)
    assert len(set(primes)) == 4
    for p in primes:
        assert is_prime(p) and p % 8192 == 1 and p < (1 << 30)
    lower = find_ntt_primes(2, 30, 8192, below=min(primes))
    assert max(lower) < min(primes)


def test_primitive_root_generates():
    p = 147457
    g = primitive_root(p)
    seen_half = pow(g, (p - 1) // 2, p)
    assert seen_half == p - 1  # order does not divide (p-1)/2


@pytest.mark.parametrize("n", [8, 64, 256])
def test_ntt_matches_schoolbook(n, rng):
    p = find_ntt_primes(1, 30, 2 * n)[0]
    tr = NttPrime(p, n)
    a = rng.integers(0, p, n)
    b = rng.integers(0, p, n)
    want = schoolbook_negacyclic(a, b, n, p).astype(np.int64)
    assert np.array_equal(tr.negacyclic_mul(a, b), want)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(-1000, 1000), min_size=16, max_size=16),
       st.lists(st.integers(-1000, 1000), min_size=16, max_size=16))
def test_ntt_matches_schoolbook_signed(a, b):
    n = 16
    p = find_ntt_primes(1, 20, 2 * n)[0]
    tr = NttPrime(p, n)
    want = schoolbook_negacyclic(a, b, n, p).astype(np.int64)
    got = tr.negacyclic_mul(np.array(a), np.array(b))
    assert np.array_equal(got, want)


def test_ntt_roundtrip_and_direct_eval(rng):
    n = 64
    p = find_ntt_primes(1, 30, 2 * n)[0]
    tr = NttPrime(p, n)
    a = rng.integers(0, p, n)
    assert np.array_equal(tr.inv(tr.fwd(a)), a % p)
    # fwd[k] evaluates the polynomial at psi^(2k+1)
    for k in (0, 1, 7, n - 1):
        want = sum(int(a[j]) * pow(tr.psi, (2 * k + 1) * j, p) for j in range(n)) % p
        assert int(tr.fwd(a)[k]) == want


def test_ntt_object_dtype_for_large_modulus(rng):
    n = 16
    t = 4398047232001  # 43-bit prime, 1 mod 2n
    assert t % (2 * n) == 1
    tr = NttPrime(t, n)
    a = rng.integers(0, t, n).astype(object)
    b = rng.integers(0, t, n).astype(object)
    want = schoolbook_negacyclic(a, b, n, t)
    assert list(tr.negacyclic_mul(a, b)) == list(want)


def test_crt_basis_roundtrip(rng):
    primes = find_ntt_primes(5, 30, 64)
    basis = CrtBasis(primes)
    vals = np.array(
        [int(rng.integers(0, 1 << 62)) * int(rng.integers(0, 1 << 62)) for _ in range(32)],
        dtype=object,
    ) % basis.product
    res = basis.from_big(vals)
    assert np.array_equal(basis.to_big(res), vals)
