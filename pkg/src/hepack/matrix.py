"""Encrypted matrices in four packing layouts, layout conversion, and the
diagonal-iteration encrypted multiply.

Layouts: RP (one row per ciphertext), CP (one column per ciphertext), RCP
(row-major flatten into ceil(m*n/s) ciphertexts), CCP (column-major flatten).
RCP(M) and CCP(M^T) have bit-identical slot content, so transposition of a
compact matrix is a relabel.

The RCP-by-CCP multiply follows the diagonal loop: per diagonal index, a
slot-wise Mult, a width-d window fold, then a one-hot extraction and rotate
per row, with the right operand rotated d slots between iterations. When
both operands fit one ciphertext with room to duplicate the d*d block, the
rotation wraps for free and the multiply consumes exactly one Mult plus one
CMult level; larger operands pay one extra CMult level for masked
cross-boundary rotations.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .engine import SlotBackend
from .errors import CapacityError, DimensionError, ParamMismatchError
from .inference import PackedVector, WeightRow, layer_eval


class Layout(enum.Enum):
    RP = "RP"
    CP = "CP"
    RCP = "RCP"
    CCP = "CCP"


@dataclass
class PlainMatrix:
    rows: int
    cols: int
    entries: np.ndarray
    scale: int = 1

    def __post_init__(self):
        self.entries = np.asarray(self.entries).reshape(self.rows, self.cols)


@dataclass
class EncMatrix:
    rows: int
    cols: int
    layout: Layout
    slots_used: int
    cts: list
    scale: int = 1

    @property
    def ct_count(self) -> int:
        return len(self.cts)


def ct_count_for(layout: Layout, m: int, n: int, s: int) -> int:
    if layout == Layout.RP:
        return m
    if layout == Layout.CP:
        return n
    return -(-m * n // s)


def _location(layout: Layout, m: int, n: int, s: int, r: int, c: int):
    """(ciphertext index, slot) of element (r, c)."""
    if layout == Layout.RP:
        return r, c
    if layout == Layout.CP:
        return c, r
    if layout == Layout.RCP:
        p = r * n + c
    else:
        p = c * m + r
    return p // s, p % s


def pack_matrix(
    backend: SlotBackend, mat: PlainMatrix, layout: Layout, slots_used=None
) -> EncMatrix:
    """Encrypt a matrix under the requested layout."""
    m, n = mat.rows, mat.cols
    if m == 0 or n == 0:
        raise DimensionError("cannot pack an empty matrix")
    s = backend.params.slot_count if slots_used is None else slots_used
    if s < 1 or s > backend.params.slot_count:
        raise DimensionError(f"slots_used {s} outside [1, {backend.params.slot_count}]")
    if layout == Layout.RP and n > s:
        raise CapacityError(f"row of length {n} does not fit {s} slots")
    if layout == Layout.CP and m > s:
        raise CapacityError(f"column of length {m} does not fit {s} slots")
    count = ct_count_for(layout, m, n, s)
    buffers = np.zeros((count, backend.params.slot_count), dtype=np.int64)
    for r in range(m):
        for c in range(n):
            ct_i, slot = _location(layout, m, n, s, r, c)
            buffers[ct_i][slot] = int(mat.entries[r][c])
    cts = [backend.encrypt(buf) for buf in buffers]
    return EncMatrix(m, n, layout, s, cts, scale=mat.scale)


def unpack_matrix(backend: SlotBackend, enc: EncMatrix) -> PlainMatrix:
    """Decrypt back to a dense matrix of residues in [0, t)."""
    slots = [backend.decrypt(ct) for ct in enc.cts]
    out = np.zeros((enc.rows, enc.cols), dtype=np.int64)
    for r in range(enc.rows):
        for c in range(enc.cols):
            ct_i, slot = _location(enc.layout, enc.rows, enc.cols, enc.slots_used, r, c)
            out[r][c] = int(slots[ct_i][slot])
    return PlainMatrix(enc.rows, enc.cols, out, scale=enc.scale)


def convert_layout(backend: SlotBackend, enc: EncMatrix, target: Layout) -> EncMatrix:
    """Move every element to its slot under ``target`` via mask, rotate and
    accumulate, grouped by displacement. Consumes one CMult level; converting
    to the current layout is free."""
    if target == enc.layout:
        return EncMatrix(
            enc.rows, enc.cols, enc.layout, enc.slots_used, list(enc.cts), enc.scale
        )
    m, n, s = enc.rows, enc.cols, enc.slots_used
    if target == Layout.RP and n > s:
        raise CapacityError(f"row of length {n} does not fit {s} slots")
    if target == Layout.CP and m > s:
        raise CapacityError(f"column of length {m} does not fit {s} slots")
    width = backend.params.slot_count
    groups = {}
    for r in range(m):
        for c in range(n):
            src_ct, src_slot = _location(enc.layout, m, n, s, r, c)
            dst_ct, dst_slot = _location(target, m, n, s, r, c)
            shift = (dst_slot - src_slot) % width
            groups.setdefault((src_ct, dst_ct, shift), []).append(src_slot)
    out = [None] * ct_count_for(target, m, n, s)
    for (src_ct, dst_ct, shift), slots in sorted(groups.items()):
        mask = np.zeros(width, dtype=np.int64)
        mask[slots] = 1
        piece = backend.cmult(enc.cts[src_ct], mask)
        if shift:
            moved = backend.rotate(piece, -shift)
            backend.release(piece)
            piece = moved
        if out[dst_ct] is None:
            out[dst_ct] = piece
        else:
            nxt = backend.add(out[dst_ct], piece)
            backend.release(out[dst_ct], piece)
            out[dst_ct] = nxt
    return EncMatrix(m, n, target, s, out, scale=enc.scale)


def mat_add(backend: SlotBackend, a: EncMatrix, b: EncMatrix) -> EncMatrix:
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise DimensionError(f"shape mismatch {(a.rows, a.cols)} vs {(b.rows, b.cols)}")
    if a.layout != b.layout or a.slots_used != b.slots_used:
        raise ParamMismatchError("operands must share layout and slots_used")
    cts = [backend.add(x, y) for x, y in zip(a.cts, b.cts)]
    return EncMatrix(a.rows, a.cols, a.layout, a.slots_used, cts, scale=a.scale)


_TRANSPOSE_RELABEL = {
    Layout.RCP: Layout.CCP,
    Layout.CCP: Layout.RCP,
    Layout.RP: Layout.CP,
    Layout.CP: Layout.RP,
}


def mat_transpose(backend: SlotBackend, enc: EncMatrix, keep_layout=False) -> EncMatrix:
    """Transpose by relabel: RCP(M) is CCP(M^T) with swapped dims, at zero
    homomorphic cost. ``keep_layout`` converts back to the original layout
    tag (one CMult level)."""
    relabeled = EncMatrix(
        enc.cols,
        enc.rows,
        _TRANSPOSE_RELABEL[enc.layout],
        enc.slots_used,
        list(enc.cts),
        enc.scale,
    )
    if keep_layout and relabeled.layout != enc.layout:
        return convert_layout(backend, relabeled, enc.layout)
    return relabeled


def _interval_pieces(start: int, length: int, region: int, chunk: int):
    """Split [start, start+length) taken mod ``region`` into runs that stay
    within one chunk of size ``chunk``. Yields (offset_in_output, src_pos, run)."""
    done = 0
    while done < length:
        q = (start + done) % region
        run = min(length - done, region - q, chunk - q % chunk)
        yield done, q, run
        done += run


def _virtual_rotate(backend, cts, rotate_by, region, s, width):
    """Global left rotation by ``rotate_by`` of a region-long vector living in
    s-slot chunks across len(cts) ciphertexts, wrapping mod ``region``.

    Realized as masked rotations of the source ciphertexts; costs one CMult
    level above the inputs.
    """
    out = []
    for mo in range(len(cts)):
        lo = mo * s
        span = min(s, region - lo)
        acc = None
        for off_out, q, run in _interval_pieces(lo + rotate_by, span, region, s):
            src_ct = q // s
            src_slot = q % s
            dst_slot = off_out
            shift = (src_slot - dst_slot) % width
            mask = np.zeros(width, dtype=np.int64)
            mask[dst_slot : dst_slot + run] = 1
            src = cts[src_ct]
            if shift:
                rot = backend.rotate(src, shift)
                piece = backend.cmult(rot, mask)
                backend.release(rot)
            else:
                piece = backend.cmult(src, mask)
            if acc is None:
                acc = piece
            else:
                nxt = backend.add(acc, piece)
                backend.release(acc, piece)
                acc = nxt
        out.append(acc)
    return out


def _regeometry(backend, cts, src_s, dst_s, region, width):
    """Repack a region-long global vector from src_s-slot chunks to dst_s-slot
    chunks. One CMult level."""
    out = []
    count = -(-region // dst_s)
    for mo in range(count):
        lo = mo * dst_s
        span = min(dst_s, region - lo)
        acc = None
        done = 0
        while done < span:
            p = lo + done
            src_ct, src_slot = p // src_s, p % src_s
            run = min(span - done, src_s - src_slot)
            dst_slot = done
            shift = (src_slot - dst_slot) % width
            mask = np.zeros(width, dtype=np.int64)
            mask[dst_slot : dst_slot + run] = 1
            if shift:
                rot = backend.rotate(cts[src_ct], shift)
                piece = backend.cmult(rot, mask)
                backend.release(rot)
            else:
                piece = backend.cmult(cts[src_ct], mask)
            if acc is None:
                acc = piece
            else:
                nxt = backend.add(acc, piece)
                backend.release(acc, piece)
                acc = nxt
            done += run
        out.append(acc)
    return out


def mat_mul(backend: SlotBackend, a: EncMatrix, b: EncMatrix) -> EncMatrix:
    """C = A * B for square d x d operands, A in RCP and B in CCP.

    Exactly d Mult and d*d CMult; depth is one Mult plus one CMult level when
    the duplication fast path applies (k = 1 and 2*d*d <= s).
    """
    if a.layout != Layout.RCP or b.layout != Layout.CCP:
        raise ParamMismatchError("mat_mul expects A in RCP and B in CCP")
    if not (a.rows == a.cols == b.rows == b.cols):
        raise DimensionError("mat_mul expects square operands of equal dimension")
    if a.slots_used != b.slots_used:
        raise ParamMismatchError("operands must share slots_used")
    d = a.rows
    s = a.slots_used
    dd = d * d
    width = backend.params.slot_count
    if d > s:
        raise CapacityError(f"matrix row of length {d} does not fit {s} slots")
    scale = a.scale * b.scale

    if a.ct_count == 1 and 2 * dd <= s:
        return _mat_mul_k1(backend, a, b, d, s, scale)

    # general path: align the chunk size to d so no window straddles a
    # ciphertext, then rotate B mod d*d with masked cross-boundary pieces
    if s % d == 0 or dd <= s:
        s_eff = s
    else:
        s_eff = s - s % d
    a_cts, b_cts = a.cts, b.cts
    owned = []
    if s_eff != s:
        a_cts = _regeometry(backend, a.cts, s, s_eff, dd, width)
        b_cts = _regeometry(backend, b.cts, s, s_eff, dd, width)
        owned += a_cts + b_cts
    k = -(-dd // s_eff)
    c_out = [backend.encrypt(np.zeros(width, dtype=np.int64)) for _ in range(k)]
    e_masks = {}
    for i in range(d):
        if i == 0:
            b_i = b_cts
        else:
            b_i = _virtual_rotate(backend, b_cts, i * d, dd, s_eff, width)
        sums = []
        for m in range(k):
            p = backend.mult(a_cts[m], b_i[m])
            fold = backend.partial_sum(p, d)
            if fold is not p:
                backend.release(p)
            sums.append(fold)
        if b_i is not b_cts:
            backend.release(*b_i)
        for r in range(d):
            g = r * d
            m, off = divmod(g, s_eff)
            if off not in e_masks:
                e_masks[off] = backend.one_hot(off)
            piece = backend.cmult(sums[m], e_masks[off])
            j = (r + i) % d
            if j:
                moved = backend.rotate(piece, -j)
                backend.release(piece)
                piece = moved
            nxt = backend.add(c_out[m], piece)
            backend.release(c_out[m], piece)
            c_out[m] = nxt
        backend.release(*sums)
    backend.release(*owned)
    return EncMatrix(d, d, Layout.RCP, s_eff, c_out, scale=scale)


def _mat_mul_k1(backend, a, b, d, s, scale):
    """Single-ciphertext loop with the duplicated right operand, so the
    per-iteration rotation wraps mod d*d for free."""
    width = backend.params.slot_count
    dd = d * d
    ca = a.cts[0]
    shifted = backend.rotate(b.cts[0], -dd)
    b_work = backend.add(b.cts[0], shifted)
    backend.release(shifted)
    c_acc = backend.encrypt(np.zeros(width, dtype=np.int64))
    e_masks = {}
    for i in range(d):
        p = backend.mult(ca, b_work)
        fold = backend.partial_sum(p, d)
        if fold is not p:
            backend.release(p)
        for r in range(d):
            g = r * d
            if g not in e_masks:
                e_masks[g] = backend.one_hot(g)
            piece = backend.cmult(fold, e_masks[g])
            j = (r + i) % d
            if j:
                moved = backend.rotate(piece, -j)
                backend.release(piece)
                piece = moved
            nxt = backend.add(c_acc, piece)
            backend.release(c_acc, piece)
            c_acc = nxt
        backend.release(fold)
        rolled = backend.rotate(b_work, d)
        backend.release(b_work)
        b_work = rolled
    backend.release(b_work)
    return EncMatrix(d, d, Layout.RCP, s, [c_acc], scale=scale)


def plain_mat_mul(backend: SlotBackend, w: PlainMatrix, x: EncMatrix) -> EncMatrix:
    """y = W * x for a plaintext matrix and an encrypted packed vector.

    x must be a column (m x 1) or row (1 x n) compact vector. Shares the
    segment CMult + fold + placement kernel with the layer evaluator, so the
    depth cost is two CMult levels.
    """
    if x.layout not in (Layout.RCP, Layout.CCP):
        raise ParamMismatchError("packed vector must be in a compact layout")
    if 1 not in (x.rows, x.cols):
        raise DimensionError("x must be a vector (one row or one column)")
    length = x.rows * x.cols
    if w.cols != length:
        raise DimensionError(f"W has {w.cols} columns but x has {length} elements")
    pv = PackedVector(length, x.slots_used, x.cts, scale=x.scale)
    rows = []
    wmat = np.asarray(w.entries, dtype=np.int64)
    for j in range(w.rows):
        nz = np.nonzero(wmat[j])[0]
        rows.append(
            WeightRow(
                out_index=j,
                length=length,
                slots_used=x.slots_used,
                positions=nz,
                values=wmat[j][nz],
            )
        )
    out = layer_eval(backend, rows, pv, scale_factor=w.scale)
    return EncMatrix(w.rows, 1, Layout.RCP, x.slots_used, out.cts, scale=out.scale)
