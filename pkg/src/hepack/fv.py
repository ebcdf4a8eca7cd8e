"""Textbook Fan-Vercauteren levelled scheme implementing the slot backend
contract: RNS coefficient arithmetic over word-sized NTT primes, batching
via a plain-modulus NTT, RNS-limb key switching for relinearization and
Galois rotations, and an exact big-integer lift for the multiplication
tensor.

Slot layout matches the simulator: one flat cyclic vector of n/2 slots.
Slot i sits at the evaluation point psi^(3^i mod 2n), so the Galois map
x -> x^3 rotates the vector left by one. Fixed operands (secret, public and
switch keys) are cached in the NTT domain, and per-prime transforms run
batched over ciphertext components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .engine import SlotBackend
from .errors import ParamMismatchError
from .ntt import CrtBasis, NttPrime, find_ntt_primes
from .params import BackendParams

SIGMA = 3.2
_ERR_BOUND = 19  # 6 sigma truncation
_WORD_BITS = 30


class FvCiphertext:
    """RNS ciphertext: list of (num_primes, n) int64 coefficient stacks."""

    __slots__ = ("parts", "level_used", "params", "_live")

    def __init__(self, parts, level_used, params):
        self.parts = parts
        self.level_used = level_used
        self.params = params
        self._live = True

    def __repr__(self):
        return f"FvCiphertext(parts={len(self.parts)}, level={self.level_used})"


@dataclass
class FvParams:
    """Derived lattice parameters; q is a product of word-sized NTT primes."""

    n: int
    t: int
    q_primes: list
    sigma: float = SIGMA

    def __post_init__(self):
        if self.t % (2 * self.n) != 1:
            raise ValueError(
                f"plain_modulus {self.t} must be 1 mod 2n={2 * self.n} for batching"
            )

    @classmethod
    def from_backend(cls, params: BackendParams) -> "FvParams":
        count = max(2, -(-params.coeff_modulus_bits // _WORD_BITS))
        primes = find_ntt_primes(count, _WORD_BITS, 2 * params.ring_dimension)
        return cls(n=params.ring_dimension, t=params.plain_modulus, q_primes=primes)


@dataclass
class SwitchKey:
    """Key-switch material: per-prime (num_digits, n) stacks in NTT form."""

    body: list  # body[j] encrypts gadget_i * target in limb j
    mask: list


class _FvContext:
    """Precomputed tables shared by keys and the backend."""

    def __init__(self, fp: FvParams):
        self.fp = fp
        n = fp.n
        self.n = n
        self.t = fp.t
        self.q_ntt = [NttPrime(p, n) for p in fp.q_primes]
        self.q_crt = CrtBasis(fp.q_primes)
        self.q = self.q_crt.product
        self.delta = self.q // fp.t
        self.delta_mod = [self.delta % p for p in fp.q_primes]
        self.p_col = np.array(fp.q_primes, dtype=np.int64)[:, None]
        # auxiliary basis covering the integer mult tensor: coeffs < n * q^2
        need_bits = n.bit_length() + 2 * self.q.bit_length() + 2
        count = -(-need_bits // (_WORD_BITS - 1))
        self.aux_primes = find_ntt_primes(
            count, _WORD_BITS, 2 * n, below=min(fp.q_primes)
        )
        self.aux_ntt = [NttPrime(p, n) for p in self.aux_primes]
        self.aux_crt = CrtBasis(self.aux_primes)
        # CRT interpolation gadget for RNS-limb key switching
        self.gadget = [
            (self.q // p) * pow(self.q // p, -1, p) % self.q for p in fp.q_primes
        ]
        self.t_ntt = NttPrime(fp.t, n)
        # slot i <-> evaluation index of exponent 3^i mod 2n
        two_n = 2 * n
        exps = np.empty(n // 2, dtype=np.int64)
        e = 1
        for i in range(n // 2):
            exps[i] = e
            e = e * 3 % two_n
        self.slot_to_ev = (exps - 1) // 2
        self._galois_tables = {}

    # ---- ring helpers (RNS coefficient stacks, shape (k, n)) -------------

    def rand_uniform(self, rng) -> np.ndarray:
        return np.stack(
            [rng.integers(0, p, self.n, dtype=np.int64) for p in self.fp.q_primes]
        )

    def to_rns(self, small) -> np.ndarray:
        """Lift a small signed coefficient vector into the RNS stack."""
        small = np.asarray(small, dtype=np.int64)
        return small % self.p_col

    def rand_ternary(self, rng) -> np.ndarray:
        return rng.integers(-1, 2, self.n, dtype=np.int64)

    def rand_error(self, rng) -> np.ndarray:
        e = np.rint(rng.normal(0.0, self.fp.sigma, self.n)).astype(np.int64)
        return np.clip(e, -_ERR_BOUND, _ERR_BOUND)

    def add(self, a, b):
        return (a + b) % self.p_col

    def neg(self, a):
        return -a % self.p_col

    def mul(self, a, b):
        return np.stack(
            [tr.negacyclic_mul(a[i], b[i]) for i, tr in enumerate(self.q_ntt)]
        )

    def scalar(self, a, scalar_mods):
        return np.stack(
            [a[i] * int(scalar_mods[i]) % p for i, p in enumerate(self.fp.q_primes)]
        )

    def fwd_stack(self, a) -> list:
        """Per-prime NTT of an RNS stack; a[j] transforms under prime j."""
        return [tr.fwd(a[j]) for j, tr in enumerate(self.q_ntt)]

    def to_big(self, a) -> np.ndarray:
        return self.q_crt.to_big(a)

    def from_big(self, x) -> np.ndarray:
        return self.q_crt.from_big(x)

    def galois_table(self, g: int):
        """Index/sign tables for the automorphism x -> x^g (g odd)."""
        tab = self._galois_tables.get(g)
        if tab is None:
            j = np.arange(self.n, dtype=np.int64)
            idx = j * g % (2 * self.n)
            target = idx % self.n
            sign = np.where(idx < self.n, 1, -1).astype(np.int64)
            tab = (target, sign)
            self._galois_tables[g] = tab
        return tab

    def apply_galois(self, a, g: int):
        target, sign = self.galois_table(g)
        out = np.zeros_like(a)
        out[..., target] = a * sign
        return out % self.p_col


def _keyswitch_key(ctx: _FvContext, s_rns, target_rns, rng) -> SwitchKey:
    """Per-limb keys switching a ciphertext under ``target`` back to ``s``.

    Digit i's key encrypts gadget_i * target under s; stored per prime as a
    (num_digits, n) NTT-domain stack so switching is one batched product.
    """
    k = len(ctx.fp.q_primes)
    bodies = []
    masks = []
    for i in range(k):
        a = ctx.rand_uniform(rng)
        e = ctx.to_rns(ctx.rand_error(rng))
        g_mods = [ctx.gadget[i] % pj for pj in ctx.fp.q_primes]
        body = ctx.add(
            ctx.neg(ctx.add(ctx.mul(a, s_rns), e)), ctx.scalar(target_rns, g_mods)
        )
        bodies.append(body)
        masks.append(a)
    key_body = [
        tr.fwd(np.stack([bodies[i][j] for i in range(k)]))
        for j, tr in enumerate(ctx.q_ntt)
    ]
    key_mask = [
        tr.fwd(np.stack([masks[i][j] for i in range(k)]))
        for j, tr in enumerate(ctx.q_ntt)
    ]
    return SwitchKey(body=key_body, mask=key_mask)


def _keyswitch_apply(ctx: _FvContext, c_target, key: SwitchKey):
    """(d0, d1) = sum_i digit_i(c_target) * key_i, digits being RNS limbs."""
    k = len(ctx.fp.q_primes)
    d0 = np.empty((k, ctx.n), dtype=np.int64)
    d1 = np.empty((k, ctx.n), dtype=np.int64)
    for j, tr in enumerate(ctx.q_ntt):
        digits = tr.fwd(c_target % tr.p)  # (k, n) batched
        acc0 = (digits * key.body[j] % tr.p).sum(axis=0) % tr.p
        acc1 = (digits * key.mask[j] % tr.p).sum(axis=0) % tr.p
        pair = tr.inv(np.stack([acc0, acc1]))
        d0[j] = pair[0]
        d1[j] = pair[1]
    return d0, d1


@dataclass
class KeySet:
    """Secret/public/evaluation keys plus the shared context tables."""

    context: _FvContext
    secret: np.ndarray
    public: tuple
    relin: SwitchKey
    galois: dict


def keygen(fp: FvParams, rotation_offsets=None, rng=None) -> KeySet:
    """Generate keys. Galois keys cover power-of-two offsets (chained for
    arbitrary rotations) plus any explicitly requested offsets."""
    rng = rng if rng is not None else np.random.default_rng()
    ctx = _FvContext(fp)
    s = ctx.to_rns(ctx.rand_ternary(rng))
    a = ctx.rand_uniform(rng)
    e = ctx.to_rns(ctx.rand_error(rng))
    pk = (ctx.neg(ctx.add(ctx.mul(a, s), e)), a)
    relin = _keyswitch_key(ctx, s, ctx.mul(s, s), rng)

    half = fp.n // 2
    offsets = {1 << j for j in range((half - 1).bit_length())}
    if rotation_offsets:
        offsets |= {off % half for off in rotation_offsets if off % half}
    galois = {}
    for off in sorted(offsets):
        g = pow(3, off, 2 * fp.n)
        galois[off] = _keyswitch_key(ctx, s, ctx.apply_galois(s, g), rng)

    return KeySet(context=ctx, secret=s, public=pk, relin=relin, galois=galois)


class FvBackend(SlotBackend):
    """Lattice implementation of the slot contract at desk-scale parameters.

    The contract-level depth budget mirrors the simulator; the empirically
    verified noise depth for a profile is recorded separately as
    ``params.fv_safe_depth``.
    """

    def __init__(self, params: BackendParams, keys: KeySet = None, rng=None):
        if params.slot_count != params.ring_dimension // 2:
            raise ParamMismatchError("FV backend requires slot_count = n/2")
        super().__init__(params)
        self.rng = rng if rng is not None else np.random.default_rng()
        if keys is None:
            keys = keygen(FvParams.from_backend(params), rng=self.rng)
        self.keys = keys
        self.ctx = keys.context
        if self.ctx.t != params.plain_modulus or self.ctx.n != params.ring_dimension:
            raise ParamMismatchError("key set was generated for different parameters")
        ctx = self.ctx
        self._s_ntt = ctx.fwd_stack(keys.secret)
        self._s2_ntt = ctx.fwd_stack(ctx.mul(keys.secret, keys.secret))
        self._pk_ntt = (ctx.fwd_stack(keys.public[0]), ctx.fwd_stack(keys.public[1]))

    # ---- batching -------------------------------------------------------

    def encode(self, vec) -> np.ndarray:
        """Slot vector (n/2 residues mod t) -> plaintext polynomial mod t."""
        ctx = self.ctx
        ev = np.zeros(ctx.n, dtype=ctx.t_ntt.dtype)
        ev[ctx.slot_to_ev] = np.asarray(vec, dtype=ctx.t_ntt.dtype) % ctx.t
        return ctx.t_ntt.inv(ev)

    def decode(self, poly) -> np.ndarray:
        ev = self.ctx.t_ntt.fwd(poly)
        return ev[self.ctx.slot_to_ev]

    def _centered_plain(self, poly):
        t = self.ctx.t
        p = np.asarray(poly) % t
        return np.where(p > t // 2, p - t, p)

    def _delta_m(self, m):
        """Delta * m in RNS; m has coefficients reduced mod t."""
        ctx = self.ctx
        if ctx.t < (1 << 31):
            m = np.asarray(m, dtype=np.int64)
            return np.stack(
                [m % p * ctx.delta_mod[i] % p for i, p in enumerate(ctx.fp.q_primes)]
            )
        m = np.asarray(m, dtype=object)
        return np.stack(
            [
                (m * ctx.delta_mod[i] % p).astype(np.int64)
                for i, p in enumerate(ctx.fp.q_primes)
            ]
        )

    # ---- primitive ops ----------------------------------------------------

    def _fresh(self, parts, level):
        return FvCiphertext(parts, level, self.params)

    def _encrypt(self, vec):
        ctx = self.ctx
        u = ctx.to_rns(ctx.rand_ternary(self.rng))
        e1 = ctx.to_rns(ctx.rand_error(self.rng))
        e2 = ctx.to_rns(ctx.rand_error(self.rng))
        dm = self._delta_m(self.encode(vec))
        k = len(ctx.fp.q_primes)
        c0 = np.empty((k, ctx.n), dtype=np.int64)
        c1 = np.empty((k, ctx.n), dtype=np.int64)
        for j, tr in enumerate(ctx.q_ntt):
            u_ev = tr.fwd(u[j])
            pair = tr.inv(
                np.stack(
                    [u_ev * self._pk_ntt[0][j] % tr.p, u_ev * self._pk_ntt[1][j] % tr.p]
                )
            )
            c0[j] = (pair[0] + e1[j] + dm[j]) % tr.p
            c1[j] = (pair[1] + e2[j]) % tr.p
        return self._fresh([c0, c1], 0)

    def decrypt_poly(self, ct: FvCiphertext) -> np.ndarray:
        ctx = self.ctx
        s_stacks = [self._s_ntt, self._s2_ntt]
        acc = ct.parts[0].copy()
        for j, tr in enumerate(ctx.q_ntt):
            comps = np.stack([comp[j] for comp in ct.parts[1:]])
            evs = tr.fwd(comps)
            total = np.zeros(ctx.n, dtype=np.int64)
            for m in range(evs.shape[0]):
                total = (total + evs[m] * s_stacks[m][j] % tr.p) % tr.p
            acc[j] = (acc[j] + tr.inv(total)) % tr.p
        x = ctx.to_big(acc)
        return (x * ctx.t + ctx.q // 2) // ctx.q % ctx.t

    def _decrypt(self, ct):
        vals = self.decode(self.decrypt_poly(ct))
        return np.asarray(vals, dtype=self._dtype)

    def _add(self, a, b, level):
        parts = [self.ctx.add(x, y) for x, y in zip(a.parts, b.parts)]
        return self._fresh(parts, level)

    def _add_plain(self, a, vec, level):
        dm = self._delta_m(self.encode(vec))
        parts = [self.ctx.add(a.parts[0], dm)] + [p.copy() for p in a.parts[1:]]
        return self._fresh(parts, level)

    def _cmult(self, a, vec, level):
        ctx = self.ctx
        m = self._centered_plain(self.encode(vec))
        k = len(ctx.fp.q_primes)
        out = [np.empty((k, ctx.n), dtype=np.int64) for _ in a.parts]
        for j, tr in enumerate(ctx.q_ntt):
            m_ev = tr.fwd(m % tr.p)
            comps = tr.fwd(np.stack([comp[j] for comp in a.parts]))
            prods = tr.inv(comps * m_ev % tr.p)
            for c in range(len(a.parts)):
                out[c][j] = prods[c]
        return self._fresh(out, level)

    def _mult(self, a, b, level):
        # exact integer tensor: centered lifts keep the rounding noise small,
        # and the negacyclic wrap makes coefficients signed either way
        ctx = self.ctx
        half_q = ctx.q // 2
        lifted = []
        for c in (a.parts[0], a.parts[1], b.parts[0], b.parts[1]):
            x = ctx.to_big(c)
            lifted.append(ctx.aux_crt.from_big(np.where(x > half_q, x - ctx.q, x)))
        n_aux = len(ctx.aux_primes)
        t0 = np.empty((n_aux, ctx.n), dtype=np.int64)
        t1 = np.empty((n_aux, ctx.n), dtype=np.int64)
        t2 = np.empty((n_aux, ctx.n), dtype=np.int64)
        for i, tr in enumerate(ctx.aux_ntt):
            evs = tr.fwd(np.stack([r[i] for r in lifted]))
            prods = tr.inv(
                np.stack(
                    [
                        evs[0] * evs[2] % tr.p,
                        (evs[0] * evs[3] + evs[1] * evs[2]) % tr.p,
                        evs[1] * evs[3] % tr.p,
                    ]
                )
            )
            t0[i], t1[i], t2[i] = prods
        half_aux = ctx.aux_crt.product // 2
        parts = []
        for stack in (t0, t1, t2):
            x = ctx.aux_crt.to_big(stack)
            x = np.where(x > half_aux, x - ctx.aux_crt.product, x)
            scaled = (x * ctx.t + ctx.q // 2) // ctx.q % ctx.q
            parts.append(ctx.from_big(scaled))
        return self._relinearize(parts, level)

    def _relinearize(self, parts, level):
        d0, d1 = _keyswitch_apply(self.ctx, parts[2], self.keys.relin)
        return self._fresh(
            [self.ctx.add(parts[0], d0), self.ctx.add(parts[1], d1)], level
        )

    def _rotate(self, a, offset, level):
        if offset == 0:
            return self._fresh([p.copy() for p in a.parts], level)
        ctx = self.ctx
        parts = a.parts
        if offset in self.keys.galois:
            hops = [offset]
        else:
            hops = [1 << j for j in range(offset.bit_length()) if offset >> j & 1]
        for off in hops:
            g = pow(3, off, 2 * ctx.n)
            p0 = ctx.apply_galois(parts[0], g)
            p1 = ctx.apply_galois(parts[1], g)
            d0, d1 = _keyswitch_apply(ctx, p1, self.keys.galois[off])
            parts = [ctx.add(p0, d0), d1]
        return self._fresh(parts, level)


def run_sequence(backend: SlotBackend, ops) -> list:
    """Execute a declarative op sequence, returning the value stack.

    Ops: ('enc', vec) | ('add', i, j) | ('mult', i, j) | ('cmult', i, vec) |
    ('add_plain', i, vec) | ('rotate', i, off) | ('psum', i, block) |
    ('asum', i, region). Indices address earlier stack entries.
    """
    stack = []
    for op in ops:
        kind = op[0]
        if kind == "enc":
            stack.append(backend.encrypt(op[1]))
        elif kind == "add":
            stack.append(backend.add(stack[op[1]], stack[op[2]]))
        elif kind == "mult":
            stack.append(backend.mult(stack[op[1]], stack[op[2]]))
        elif kind == "cmult":
            stack.append(backend.cmult(stack[op[1]], op[2]))
        elif kind == "add_plain":
            stack.append(backend.add_plain(stack[op[1]], op[2]))
        elif kind == "rotate":
            stack.append(backend.rotate(stack[op[1]], op[2]))
        elif kind == "psum":
            stack.append(backend.partial_sum(stack[op[1]], op[2]))
        elif kind == "asum":
            stack.append(backend.all_sum(stack[op[1]], op[2]))
        else:
            raise ValueError(f"unknown op {kind!r}")
    return stack


def fv_conformance(fv_backend: FvBackend, sim_backend: SlotBackend, ops) -> bool:
    """Run ``ops`` on both backends and compare every decrypted stack entry.

    A mismatch (noise overflow at too-aggressive parameters) returns False
    and must be reported by callers, never swallowed.
    """
    fv_stack = run_sequence(fv_backend, ops)
    sim_stack = run_sequence(sim_backend, ops)
    for f, s in zip(fv_stack, sim_stack):
        got = np.asarray(fv_backend.decrypt(f), dtype=np.int64)
        want = np.asarray(sim_backend.decrypt(s), dtype=np.int64)
        if not np.array_equal(got, want):
            return False
    return True
