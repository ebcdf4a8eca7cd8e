"""Binary file formats: ciphertexts, encrypted images, logit outputs,
encrypted matrices and key material.

Every record starts with the magic, a kind byte, a format version and the
8-byte parameter hash, so files are rejected early when loaded under the
wrong profile. All integers are little-endian fixed width; slot residues are
u64, ring coefficients i64.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .engine import Ciphertext, SlotBackend
from .errors import FormatError
from .inference import PackedVector
from .matrix import EncMatrix, Layout

MAGIC = b"HPK1"
VERSION = 1

_KIND_SIM_CT = 1
_KIND_FV_CT = 2
_KIND_IMAGE = 3
_KIND_LOGITS = 4
_KIND_MATRIX = 5


def _write_header(fh, kind: int, params):
    fh.write(MAGIC)
    fh.write(struct.pack("<BB", kind, VERSION))
    fh.write(params.param_hash())


def _read_header(fh, expected_kind: int, params):
    head = fh.read(4)
    if head != MAGIC:
        raise FormatError(f"bad magic {head!r}")
    kind, version = struct.unpack("<BB", fh.read(2))
    if kind != expected_kind:
        raise FormatError(f"expected record kind {expected_kind}, found {kind}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    file_hash = fh.read(8)
    if file_hash != params.param_hash():
        raise FormatError("file was produced under different parameters")


def _write_i64(fh, arr):
    arr = np.ascontiguousarray(arr, dtype="<i8")
    fh.write(struct.pack("<B", arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(arr.tobytes())


def _read_i64(fh):
    (ndim,) = struct.unpack("<B", fh.read(1))
    shape = [struct.unpack("<I", fh.read(4))[0] for _ in range(ndim)]
    count = int(np.prod(shape)) if shape else 1
    data = fh.read(count * 8)
    if len(data) != count * 8:
        raise FormatError("truncated array data")
    return np.frombuffer(data, dtype="<i8").reshape(shape).copy()


def write_ciphertext(fh, ct, params):
    """Sim ciphertexts store slot residues; FV ciphertexts store the RNS
    coefficient stacks of every component."""
    if isinstance(ct, Ciphertext):
        _write_header(fh, _KIND_SIM_CT, params)
        slots = np.asarray(ct.slots, dtype=object)
        fh.write(struct.pack("<II", params.slot_count, ct.level_used))
        fh.write(b"".join(int(v).to_bytes(8, "little") for v in slots))
        return
    _write_header(fh, _KIND_FV_CT, params)
    parts = ct.parts
    k, n = parts[0].shape
    fh.write(struct.pack("<IHBI", n, k, len(parts), ct.level_used))
    for comp in parts:
        _write_i64(fh, comp)


def read_ciphertext(fh, backend: SlotBackend):
    from .fv import FvBackend, FvCiphertext

    pos = fh.tell()
    head = fh.read(4)
    if head != MAGIC:
        raise FormatError(f"bad magic {head!r}")
    (kind,) = struct.unpack("<B", fh.read(1))
    fh.seek(pos)
    if kind == _KIND_SIM_CT:
        _read_header(fh, _KIND_SIM_CT, backend.params)
        slot_count, level = struct.unpack("<II", fh.read(8))
        if slot_count != backend.params.slot_count:
            raise FormatError("slot count mismatch")
        raw = fh.read(slot_count * 8)
        if len(raw) != slot_count * 8:
            raise FormatError("truncated ciphertext record")
        vals = [int.from_bytes(raw[i * 8 : (i + 1) * 8], "little") for i in range(slot_count)]
        slots = np.array(vals, dtype=backend._dtype)
        return Ciphertext(slots, level, backend.params)
    if kind == _KIND_FV_CT:
        if not isinstance(backend, FvBackend):
            raise FormatError("FV ciphertext requires the fv backend")
        _read_header(fh, _KIND_FV_CT, backend.params)
        n, k, ncomp, level = struct.unpack("<IHBI", fh.read(11))
        parts = [_read_i64(fh) for _ in range(ncomp)]
        return FvCiphertext(parts, level, backend.params)
    raise FormatError(f"unexpected record kind {kind}")


def write_encrypted_image(path, pv: PackedVector, params):
    """Header (shape, slots_used, scale, params hash) plus ciphertext blobs."""
    shape = pv.shape or (1, 1, pv.logical_length)
    with open(path, "wb") as fh:
        _write_header(fh, _KIND_IMAGE, params)
        fh.write(struct.pack("<IIIIQI", *shape, pv.slots_used, pv.scale, pv.k))
        for ct in pv.cts:
            write_ciphertext(fh, ct, params)


def read_encrypted_image(path, backend: SlotBackend) -> PackedVector:
    with open(path, "rb") as fh:
        _read_header(fh, _KIND_IMAGE, backend.params)
        c, h, w, s, scale, k = struct.unpack("<IIIIQI", fh.read(28))
        cts = [read_ciphertext(fh, backend) for _ in range(k)]
    return PackedVector(c * h * w, s, cts, scale=scale, shape=(c, h, w))


def write_logits(path, cts, slot_map, params):
    """Ciphertext blobs plus the (ciphertext, slot) map of each logit.

    Compact results map logit i to (i // s, i % s); the interleaved baseline
    maps logit i to (i, 0).
    """
    with open(path, "wb") as fh:
        _write_header(fh, _KIND_LOGITS, params)
        fh.write(struct.pack("<I", len(slot_map)))
        for ct_i, slot in slot_map:
            fh.write(struct.pack("<II", ct_i, slot))
        fh.write(struct.pack("<I", len(cts)))
        for ct in cts:
            write_ciphertext(fh, ct, params)


def read_logits(path, backend: SlotBackend):
    """Returns (ciphertext list, slot_map)."""
    with open(path, "rb") as fh:
        _read_header(fh, _KIND_LOGITS, backend.params)
        (length,) = struct.unpack("<I", fh.read(4))
        slot_map = [struct.unpack("<II", fh.read(8)) for _ in range(length)]
        (k,) = struct.unpack("<I", fh.read(4))
        cts = [read_ciphertext(fh, backend) for _ in range(k)]
    return cts, slot_map


def write_enc_matrix(path, enc: EncMatrix, params):
    with open(path, "wb") as fh:
        _write_header(fh, _KIND_MATRIX, params)
        layout = list(Layout).index(enc.layout)
        fh.write(
            struct.pack("<IIBIQI", enc.rows, enc.cols, layout, enc.slots_used, enc.scale, enc.ct_count)
        )
        for ct in enc.cts:
            write_ciphertext(fh, ct, params)


def read_enc_matrix(path, backend: SlotBackend) -> EncMatrix:
    with open(path, "rb") as fh:
        _read_header(fh, _KIND_MATRIX, backend.params)
        rows, cols, layout, s, scale, count = struct.unpack("<IIBIQI", fh.read(25))
        cts = [read_ciphertext(fh, backend) for _ in range(count)]
    return EncMatrix(rows, cols, list(Layout)[layout], s, cts, scale=scale)


# ---- key material -------------------------------------------------------------


def write_keyset(key_dir, keys, fp, params):
    """Key directory: params.json plus framed coefficient arrays.

    Relinearization and Galois keys are stored in their NTT representation,
    exactly as they are used.
    """
    key_dir = Path(key_dir)
    key_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": VERSION,
        "n": fp.n,
        "t": fp.t,
        "q_primes": fp.q_primes,
        "sigma": fp.sigma,
        "param_hash": params.param_hash().hex(),
    }
    with open(key_dir / "params.json", "w") as fh:
        json.dump(doc, fh, indent=1)

    def dump_switch_keys(fh, switch):
        fh.write(struct.pack("<I", len(switch.body)))
        for body, mask in zip(switch.body, switch.mask):
            _write_i64(fh, body)
            _write_i64(fh, mask)

    with open(key_dir / "secret.bin", "wb") as fh:
        fh.write(MAGIC)
        _write_i64(fh, keys.secret)
    with open(key_dir / "public.bin", "wb") as fh:
        fh.write(MAGIC)
        _write_i64(fh, keys.public[0])
        _write_i64(fh, keys.public[1])
    with open(key_dir / "relin.bin", "wb") as fh:
        fh.write(MAGIC)
        dump_switch_keys(fh, keys.relin)
    with open(key_dir / "galois.bin", "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(keys.galois)))
        for off in sorted(keys.galois):
            fh.write(struct.pack("<I", off))
            dump_switch_keys(fh, keys.galois[off])


def read_keyset(key_dir):
    """Rebuild a KeySet (context tables are recomputed from params.json)."""
    from .fv import FvParams, KeySet, SwitchKey, _FvContext

    key_dir = Path(key_dir)
    try:
        with open(key_dir / "params.json") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise FormatError(f"missing key directory: {exc}") from exc
    if doc.get("version") != VERSION:
        raise FormatError(f"unsupported key version {doc.get('version')!r}")
    fp = FvParams(n=doc["n"], t=doc["t"], q_primes=doc["q_primes"], sigma=doc["sigma"])
    ctx = _FvContext(fp)

    def expect_magic(fh, name):
        if fh.read(4) != MAGIC:
            raise FormatError(f"bad magic in {name}")

    def load_switch_keys(fh):
        (count,) = struct.unpack("<I", fh.read(4))
        body, mask = [], []
        for _ in range(count):
            body.append(_read_i64(fh))
            mask.append(_read_i64(fh))
        return SwitchKey(body=body, mask=mask)

    with open(key_dir / "secret.bin", "rb") as fh:
        expect_magic(fh, "secret.bin")
        secret = _read_i64(fh)
    with open(key_dir / "public.bin", "rb") as fh:
        expect_magic(fh, "public.bin")
        public = (_read_i64(fh), _read_i64(fh))
    with open(key_dir / "relin.bin", "rb") as fh:
        expect_magic(fh, "relin.bin")
        relin = load_switch_keys(fh)
    with open(key_dir / "galois.bin", "rb") as fh:
        expect_magic(fh, "galois.bin")
        (count,) = struct.unpack("<I", fh.read(4))
        galois = {}
        for _ in range(count):
            (off,) = struct.unpack("<I", fh.read(4))
            galois[off] = load_switch_keys(fh)
    return KeySet(context=ctx, secret=secret, public=public, relin=relin, galois=galois)
