"""SIMD slot backend contract, operation/depth accounting, and the exact
mod-t vector simulator.

Every higher layer (matrix packing, layer evaluation, the CLI) is written
against :class:`SlotBackend` only. The simulator keeps slot residues in
``[0, t)``; signed interpretation uses centered representatives via
:func:`centered`. Depth model: Mult and CMult cost one level each, Add and
rotation cost nothing.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np

from .errors import DepthBudgetError, DimensionError, ParamMismatchError
from .params import BackendParams


def centered(values, t: int):
    """Map residues in [0, t) to centered representatives in (-t/2, t/2]."""
    arr = np.asarray(values)
    half = t // 2
    return np.where(arr > half, arr - t, arr)


class Ciphertext:
    """A packed ciphertext handle: slot payload plus depth metadata.

    Immutable by convention: operations return fresh instances and never
    touch their inputs.
    """

    __slots__ = ("slots", "level_used", "params", "_live")

    def __init__(self, slots, level_used: int, params: BackendParams):
        self.slots = slots
        self.level_used = level_used
        self.params = params
        self._live = True

    def __repr__(self):
        return f"Ciphertext(slots={self.params.slot_count}, level={self.level_used})"


@dataclass(frozen=True)
class CostReport:
    """Snapshot of a backend's operation counters.

    ``estimated_ciphertext_bytes`` follows the two-polynomial ciphertext size
    formula: peak_live * 2 * ring_dimension * coeff_modulus_bits / 8.
    """

    mult_count: int
    cmult_count: int
    add_count: int
    rotation_count: int
    encrypt_count: int
    peak_live_ciphertexts: int
    max_level_used: int
    estimated_ciphertext_bytes: int

    def delta(self, earlier: "CostReport") -> "CostReport":
        """Counter deltas since ``earlier``; high-water fields keep self's value."""
        return CostReport(
            mult_count=self.mult_count - earlier.mult_count,
            cmult_count=self.cmult_count - earlier.cmult_count,
            add_count=self.add_count - earlier.add_count,
            rotation_count=self.rotation_count - earlier.rotation_count,
            encrypt_count=self.encrypt_count - earlier.encrypt_count,
            peak_live_ciphertexts=self.peak_live_ciphertexts,
            max_level_used=self.max_level_used,
            estimated_ciphertext_bytes=self.estimated_ciphertext_bytes,
        )

    def as_dict(self) -> dict:
        return {
            "mult": self.mult_count,
            "cmult": self.cmult_count,
            "add": self.add_count,
            "rotation": self.rotation_count,
            "encrypt": self.encrypt_count,
            "peak_live_ciphertexts": self.peak_live_ciphertexts,
            "max_level_used": self.max_level_used,
            "estimated_ciphertext_bytes": self.estimated_ciphertext_bytes,
        }


class _Counters:
    """Lock-guarded tallies so totals are schedule-independent."""

    def __init__(self):
        self.lock = threading.Lock()
        self.reset()

    def reset(self):
        self.mult = 0
        self.cmult = 0
        self.add = 0
        self.rotation = 0
        self.encrypt = 0
        self.live = 0
        self.peak_live = 0
        self.max_level = 0

    def bump(self, field: str, level: int = 0, new_ct: bool = True):
        with self.lock:
            if field:
                setattr(self, field, getattr(self, field) + 1)
            if new_ct:
                self.live += 1
                if self.live > self.peak_live:
                    self.peak_live = self.live
            if level > self.max_level:
                self.max_level = level

    def drop(self):
        with self.lock:
            self.live -= 1


class SlotBackend:
    """Contract for SIMD ciphertext backends.

    Subclasses provide the primitive payload operations; this base class owns
    parameter checks, the depth ledger, counters, and the generic rotate-and-
    add folds (partial_sum / all_sum).
    """

    def __init__(self, params: BackendParams):
        self.params = params
        self._c = _Counters()

    # ---- plaintext vector handling -------------------------------------

    def as_plain(self, values) -> np.ndarray:
        """Coerce to a slot_count-long residue vector mod t.

        Shorter inputs are zero-padded; longer inputs raise DimensionError.
        """
        t = self.params.plain_modulus
        arr = np.asarray(values, dtype=self._dtype)
        if arr.ndim != 1:
            raise DimensionError(f"plain vector must be 1-D, got shape {arr.shape}")
        if arr.shape[0] > self.params.slot_count:
            raise DimensionError(
                f"vector of length {arr.shape[0]} exceeds slot_count {self.params.slot_count}"
            )
        out = np.zeros(self.params.slot_count, dtype=self._dtype)
        out[: arr.shape[0]] = arr % t
        return out

    def one_hot(self, index: int) -> np.ndarray:
        mask = np.zeros(self.params.slot_count, dtype=self._dtype)
        mask[index] = 1
        return mask

    def interval_mask(self, lo: int, hi: int) -> np.ndarray:
        mask = np.zeros(self.params.slot_count, dtype=self._dtype)
        mask[lo:hi] = 1
        return mask

    @property
    def _dtype(self):
        # int64 products stay exact below 2^31; larger moduli use Python ints
        return np.int64 if self.params.plain_modulus < (1 << 31) else object

    # ---- bookkeeping ----------------------------------------------------

    def _check_params(self, *cts):
        for ct in cts:
            if ct.params is not self.params and ct.params != self.params:
                raise ParamMismatchError("ciphertext was produced under different parameters")

    def _check_budget(self, level: int):
        if level > self.params.depth_budget:
            raise DepthBudgetError(
                f"operation needs level {level} but depth_budget is {self.params.depth_budget}"
            )

    def release(self, *cts):
        """Return ciphertexts to the live ledger. Safe to call once per handle."""
        for ct in cts:
            if ct is not None and ct._live:
                ct._live = False
                self._c.drop()

    def cost_report(self) -> CostReport:
        c = self._c
        with c.lock:
            return CostReport(
                mult_count=c.mult,
                cmult_count=c.cmult,
                add_count=c.add,
                rotation_count=c.rotation,
                encrypt_count=c.encrypt,
                peak_live_ciphertexts=c.peak_live,
                max_level_used=c.max_level,
                estimated_ciphertext_bytes=c.peak_live * self.params.ciphertext_bytes,
            )

    def reset_counters(self):
        self._c.reset()

    # ---- public operations ----------------------------------------------

    def encrypt(self, values) -> Ciphertext:
        vec = self.as_plain(values)
        ct = self._encrypt(vec)
        self._c.bump("encrypt", level=0)
        return ct

    def decrypt(self, ct: Ciphertext) -> np.ndarray:
        self._check_params(ct)
        if ct.level_used > self.params.depth_budget:
            raise DepthBudgetError(
                f"ciphertext at level {ct.level_used} exceeds depth_budget "
                f"{self.params.depth_budget}"
            )
        return self._decrypt(ct)

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_params(a, b)
        out = self._add(a, b, max(a.level_used, b.level_used))
        self._c.bump("add", level=out.level_used)
        return out

    def add_plain(self, a: Ciphertext, values) -> Ciphertext:
        """Slot-wise plaintext addition; zero depth. Counted under add_count."""
        self._check_params(a)
        out = self._add_plain(a, self.as_plain(values), a.level_used)
        self._c.bump("add", level=out.level_used)
        return out

    def mult(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        self._check_params(a, b)
        level = max(a.level_used, b.level_used) + 1
        self._check_budget(level)
        out = self._mult(a, b, level)
        self._c.bump("mult", level=level)
        return out

    def cmult(self, a: Ciphertext, values) -> Ciphertext:
        self._check_params(a)
        level = a.level_used + 1
        self._check_budget(level)
        out = self._cmult(a, self.as_plain(values), level)
        self._c.bump("cmult", level=level)
        return out

    def rotate(self, a: Ciphertext, offset: int) -> Ciphertext:
        """Cyclic left rotation: out[i] = a[(i + offset) mod slot_count].

        Offsets are reduced mod slot_count; negative offsets rotate right.
        """
        self._check_params(a)
        out = self._rotate(a, offset % self.params.slot_count, a.level_used)
        self._c.bump("rotation", level=out.level_used)
        return out

    # ---- generic rotate-and-add folds ------------------------------------

    def partial_sum(self, a: Ciphertext, block: int) -> Ciphertext:
        """Window sums of width ``block``: every slot j*block holds the sum of
        input slots [j*block, (j+1)*block). Other slots carry shifted window
        sums and are unspecified for callers.

        Power-of-two blocks use exactly log2(block) rotations; arbitrary
        blocks compose binary windows with at most 2*ceil(log2 block)
        rotations and no masks, so the level is unchanged either way.
        """
        if block < 1 or block > self.params.slot_count:
            raise DimensionError(f"block {block} outside [1, {self.params.slot_count}]")
        owned = []

        def rot(x, k):
            r = self.rotate(x, k)
            owned.append(r)
            return r

        def fold(x, y):
            z = self.add(x, y)
            owned.append(z)
            return z

        result = None
        covered = 0
        w = a  # window sums of `width`
        width = 1
        while True:
            if block & width:
                if result is None:
                    result = w
                    covered = width
                else:
                    result = fold(result, rot(w, covered))
                    covered += width
            width <<= 1
            if width > block:
                break
            w = fold(w, rot(w, width >> 1))
        for ct in owned:
            if ct is not result:
                self.release(ct)
        return result

    def all_sum(self, a: Ciphertext, region: int) -> Ciphertext:
        """Fold the first ``region`` slots into slot 0 (Halevi-Shoup style).

        Precondition: slots at index >= region are zero. Uses
        ceil(log2 region) rotations; level unchanged.
        """
        if region < 1 or region > self.params.slot_count:
            raise DimensionError(f"region {region} outside [1, {self.params.slot_count}]")
        cur = a
        shift = 1
        while shift < region:
            r = self.rotate(cur, shift)
            nxt = self.add(cur, r)
            self.release(r)
            if cur is not a:
                self.release(cur)
            cur = nxt
            shift <<= 1
        return cur

    # ---- primitive payload ops (subclass responsibility) -----------------

    def _encrypt(self, vec) -> Ciphertext:
        raise NotImplementedError

    def _decrypt(self, ct) -> np.ndarray:
        raise NotImplementedError

    def _add(self, a, b, level) -> Ciphertext:
        raise NotImplementedError

    def _add_plain(self, a, vec, level) -> Ciphertext:
        raise NotImplementedError

    def _mult(self, a, b, level) -> Ciphertext:
        raise NotImplementedError

    def _cmult(self, a, vec, level) -> Ciphertext:
        raise NotImplementedError

    def _rotate(self, a, offset, level) -> Ciphertext:
        raise NotImplementedError


class SimBackend(SlotBackend):
    """Exact slot-vector simulator: arithmetic in Z_t, depth and op ledger.

    This is the reference semantics every other backend must reproduce.
    """

    def _encrypt(self, vec):
        return Ciphertext(vec.copy(), 0, self.params)

    def _decrypt(self, ct):
        return ct.slots.copy()

    def _add(self, a, b, level):
        t = self.params.plain_modulus
        return Ciphertext((a.slots + b.slots) % t, level, self.params)

    def _add_plain(self, a, vec, level):
        t = self.params.plain_modulus
        return Ciphertext((a.slots + vec) % t, level, self.params)

    def _mult(self, a, b, level):
        t = self.params.plain_modulus
        return Ciphertext((a.slots * b.slots) % t, level, self.params)

    def _cmult(self, a, vec, level):
        t = self.params.plain_modulus
        return Ciphertext((a.slots * vec) % t, level, self.params)

    def _rotate(self, a, offset, level):
        return Ciphertext(np.roll(a.slots, -offset), level, self.params)
