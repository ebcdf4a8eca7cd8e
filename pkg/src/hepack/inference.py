"""Compact-packing CNN inference on slot backends.

Images are flattened channel-major into k = ceil(L/s) ciphertexts. Conv and
fully-connected layers are compiled into sparse weight-matrix rows; each row
is evaluated as segment-wise CMult, a rotate-and-add fold of the summed
ciphertext, and a one-hot placement of the resulting scalar, so every
layer's output is again a compact packed vector. The interleaved baseline
(one broadcast ciphertext per pixel) lives here too, along with the
closed-form ciphertext-count estimators the comparison report uses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .engine import SlotBackend, centered
from .errors import DimensionError, MemoryCapError


@dataclass
class PackedVector:
    """A flattened tensor spread across ceil(L/s) ciphertexts.

    Value at logical index p lives in ciphertext p // s, slot p % s; slots
    beyond the content are zero.
    """

    logical_length: int
    slots_used: int
    cts: list
    scale: int = 1
    shape: tuple = None

    @property
    def k(self) -> int:
        return -(-self.logical_length // self.slots_used)


@dataclass
class WeightRow:
    """One row of a compiled layer matrix, stored sparsely.

    ``positions``/``values`` hold the nonzero entries of a dense length-L
    vector; ``segment_ids`` are the k-segments containing at least one
    nonzero (all-zero segments are skippable).
    """

    out_index: int
    length: int
    slots_used: int
    positions: np.ndarray
    values: np.ndarray
    bias: int = 0
    segment_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.segment_ids is None:
            self.segment_ids = np.unique(self.positions // self.slots_used)

    def dense(self) -> np.ndarray:
        vec = np.zeros(self.length, dtype=np.int64)
        vec[self.positions] = self.values
        return vec

    def segment_dense(self, seg: int, width: int) -> np.ndarray:
        """Dense slot vector for one segment, padded to ``width`` slots."""
        vec = np.zeros(width, dtype=np.int64)
        inseg = self.positions // self.slots_used == seg
        vec[self.positions[inseg] % self.slots_used] = self.values[inseg]
        return vec


@dataclass
class ConvSpec:
    """Convolution layer: no padding, floor output dims."""

    filters: int
    kernel: tuple
    stride: tuple
    in_shape: tuple
    weights: np.ndarray  # (F, C, kh, kw) integers
    biases: np.ndarray  # (F,)
    scale_bits: int = 0

    @property
    def out_shape(self) -> tuple:
        c, h, w = self.in_shape
        kh, kw = self.kernel
        sh, sw = self.stride
        if kh > h or kw > w:
            raise DimensionError(f"kernel {self.kernel} larger than input {self.in_shape}")
        return (self.filters, (h - kh) // sh + 1, (w - kw) // sw + 1)

    @property
    def in_len(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def out_len(self) -> int:
        return int(np.prod(self.out_shape))


@dataclass
class FcSpec:
    out_neurons: int
    weights: np.ndarray  # (out, in)
    biases: np.ndarray
    scale_bits: int = 0

    @property
    def in_len(self) -> int:
        return self.weights.shape[1]

    @property
    def out_len(self) -> int:
        return self.out_neurons


@dataclass
class SquareSpec:
    pass


@dataclass
class NetworkSpec:
    """Ordered integer-quantized layers plus the input shape."""

    layers: list
    input_shape: tuple

    def validate(self):
        shape = tuple(self.input_shape)
        for i, layer in enumerate(self.layers):
            if isinstance(layer, ConvSpec):
                if tuple(layer.in_shape) != shape:
                    raise DimensionError(
                        f"layer {i}: conv expects {layer.in_shape}, got {shape}"
                    )
                shape = layer.out_shape
            elif isinstance(layer, FcSpec):
                if layer.in_len != int(np.prod(shape)):
                    raise DimensionError(
                        f"layer {i}: fc expects {layer.in_len} inputs, got {np.prod(shape)}"
                    )
                shape = (layer.out_neurons,)
            elif isinstance(layer, SquareSpec):
                pass
            else:
                raise DimensionError(f"layer {i}: unknown layer type {type(layer)}")
        return shape

    def depth_cost(self) -> int:
        """Levels under the cost model: 2 per linear layer, 1 per square."""
        return sum(1 if isinstance(l, SquareSpec) else 2 for l in self.layers)

    def io_lengths(self) -> list:
        """Flattened vector length entering each layer, plus the final one."""
        lens = [int(np.prod(self.input_shape))]
        shape = tuple(self.input_shape)
        for layer in self.layers:
            if isinstance(layer, ConvSpec):
                shape = layer.out_shape
                lens.append(int(np.prod(shape)))
            elif isinstance(layer, FcSpec):
                shape = (layer.out_neurons,)
                lens.append(layer.out_neurons)
            else:
                lens.append(lens[-1])
        return lens


# ---- packing ---------------------------------------------------------------


def pack_image(backend: SlotBackend, tensor, slots_used=None, scale=1) -> PackedVector:
    """Flatten (C, H, W) channel-major and encrypt into ceil(L/s) ciphertexts."""
    arr = np.asarray(tensor)
    if arr.size == 0:
        raise DimensionError("empty tensor")
    if arr.ndim == 2:
        arr = arr[None, :, :]
    s = backend.params.slot_count if slots_used is None else slots_used
    if s < 1 or s > backend.params.slot_count:
        raise DimensionError(f"slots_used {s} outside [1, {backend.params.slot_count}]")
    flat = arr.reshape(-1)
    cts = [backend.encrypt(flat[i : i + s]) for i in range(0, flat.size, s)]
    return PackedVector(flat.size, s, cts, scale=scale, shape=tuple(arr.shape))


def pack_image_interleaved(backend: SlotBackend, tensor) -> list:
    """CryptoNets-style baseline for one image: one ciphertext per pixel,
    each pixel broadcast to every slot."""
    flat = np.asarray(tensor).reshape(-1)
    width = backend.params.slot_count
    return [backend.encrypt(np.full(width, int(v))) for v in flat]


# ---- layer compilation ------------------------------------------------------


def compile_conv(spec: ConvSpec, slots_used: int) -> list:
    """One WeightRow per (filter, output position); nonzeros sit at the
    flattened input indices covered by that filter placement."""
    c_in, h, w = spec.in_shape
    kh, kw = spec.kernel
    sh, sw = spec.stride
    f_cnt, oh, ow = spec.out_shape
    offs = (
        np.arange(c_in)[:, None, None] * h * w
        + np.arange(kh)[None, :, None] * w
        + np.arange(kw)[None, None, :]
    ).reshape(-1)
    rows = []
    for f in range(f_cnt):
        kvals = np.asarray(spec.weights[f], dtype=np.int64).reshape(-1)
        nz = kvals != 0
        vals = kvals[nz]
        offs_nz = offs[nz]
        bias = int(spec.biases[f])
        for oy in range(oh):
            for ox in range(ow):
                base = (oy * sh) * w + ox * sw
                rows.append(
                    WeightRow(
                        out_index=f * oh * ow + oy * ow + ox,
                        length=spec.in_len,
                        slots_used=slots_used,
                        positions=offs_nz + base,
                        values=vals,
                        bias=bias,
                    )
                )
    return rows


def compile_fc(spec: FcSpec, slots_used: int) -> list:
    """One dense WeightRow per output neuron."""
    rows = []
    wmat = np.asarray(spec.weights, dtype=np.int64)
    for j in range(spec.out_neurons):
        nz = np.nonzero(wmat[j])[0]
        rows.append(
            WeightRow(
                out_index=j,
                length=spec.in_len,
                slots_used=slots_used,
                positions=nz,
                values=wmat[j][nz],
                bias=int(spec.biases[j]),
            )
        )
    return rows


# ---- evaluation -------------------------------------------------------------


def layer_eval(
    backend: SlotBackend,
    rows: list,
    x: PackedVector,
    skip_zero_segments: bool = True,
    threads: int = 1,
    scale_factor: int = 1,
) -> PackedVector:
    """Evaluate a compiled layer: per row, segment CMults are summed, folded
    into slot 0, the bias added, and the scalar masked and rotated to the
    row's output slot. Depth cost: exactly 2 CMult levels.

    Homomorphic operations run in row order so counters are schedule
    independent; ``threads`` parallelizes the plaintext segment
    materialization only.
    """
    s = x.slots_used
    width = backend.params.slot_count
    for row in rows:
        if row.length != x.logical_length:
            raise DimensionError(
                f"row length {row.length} != input length {x.logical_length}"
            )
    out_len = len(rows)
    out = [None] * max(1, -(-out_len // s))
    plain_bias = {}
    e0 = backend.one_hot(0)

    def prep(row):
        if skip_zero_segments:
            segs = row.segment_ids
        else:
            segs = range(x.k)
        return row, [(seg, row.segment_dense(seg, width)) for seg in segs]

    pool = ThreadPoolExecutor(threads) if threads > 1 else None
    try:
        if pool is None:
            prepped = map(prep, rows)
        else:
            prepped = pool.map(prep, rows, chunksize=max(1, len(rows) // (threads * 8)))
        for row, segs in prepped:
            acc = None
            for seg, vec in segs:
                p = backend.cmult(x.cts[seg], vec)
                if acc is None:
                    acc = p
                else:
                    nxt = backend.add(acc, p)
                    backend.release(acc, p)
                    acc = nxt
            m, off = divmod(row.out_index, s)
            if acc is None:
                # whole row is zero: only the bias contributes
                if row.bias:
                    plain_bias.setdefault(m, np.zeros(width, dtype=np.int64))[off] += row.bias
                continue
            dot = backend.all_sum(acc, s)
            if dot is not acc:
                backend.release(acc)
            if row.bias:
                bias_vec = np.zeros(width, dtype=np.int64)
                bias_vec[0] = row.bias
                nxt = backend.add_plain(dot, bias_vec)
                backend.release(dot)
                dot = nxt
            piece = backend.cmult(dot, e0)
            backend.release(dot)
            if off:
                moved = backend.rotate(piece, -off)
                backend.release(piece)
                piece = moved
            if out[m] is None:
                out[m] = piece
            else:
                nxt = backend.add(out[m], piece)
                backend.release(out[m], piece)
                out[m] = nxt
    finally:
        if pool is not None:
            pool.shutdown()
    for m in range(len(out)):
        if out[m] is None:
            out[m] = backend.encrypt(plain_bias.get(m, np.zeros(width, dtype=np.int64)))
        elif m in plain_bias:
            nxt = backend.add_plain(out[m], plain_bias[m])
            backend.release(out[m])
            out[m] = nxt
    return PackedVector(out_len, s, out, scale=x.scale * scale_factor)


def square_activation(backend: SlotBackend, x: PackedVector) -> PackedVector:
    """Slot-wise square of every ciphertext; one Mult level, scale squares."""
    cts = [backend.mult(ct, ct) for ct in x.cts]
    return PackedVector(x.logical_length, x.slots_used, cts, scale=x.scale * x.scale, shape=x.shape)


def infer(backend: SlotBackend, net: NetworkSpec, x: PackedVector, threads: int = 1) -> PackedVector:
    """Run the full network; returns the compact logits vector."""
    net.validate()
    pv = x
    for layer in net.layers:
        if isinstance(layer, SquareSpec):
            nxt = square_activation(backend, pv)
        else:
            if isinstance(layer, ConvSpec):
                rows = compile_conv(layer, pv.slots_used)
            else:
                rows = compile_fc(layer, pv.slots_used)
            nxt = layer_eval(
                backend, rows, pv, threads=threads, scale_factor=1 << layer.scale_bits
            )
        if pv is not x:
            backend.release(*pv.cts)
        pv = nxt
    return pv


def interleaved_infer(
    backend: SlotBackend, net: NetworkSpec, pixels: list, mem_cap_bytes=None
) -> list:
    """Baseline inference on per-pixel broadcast ciphertexts.

    Consumes its input ciphertexts. Refuses up front when the estimated peak
    ciphertext bytes exceed ``mem_cap_bytes``.
    """
    net.validate()
    if mem_cap_bytes is not None:
        est = interleaved_peak_cts(net) * backend.params.ciphertext_bytes
        if est > mem_cap_bytes:
            raise MemoryCapError(
                f"interleaved run needs about {est / 1e9:.1f} GB, cap is "
                f"{mem_cap_bytes / 1e9:.1f} GB"
            )
    lens = net.io_lengths()
    if len(pixels) != lens[0]:
        raise DimensionError(f"expected {lens[0]} pixel ciphertexts, got {len(pixels)}")
    width = backend.params.slot_count
    vals = pixels
    for layer in net.layers:
        if isinstance(layer, SquareSpec):
            out = []
            for ct in vals:
                sq = backend.mult(ct, ct)
                backend.release(ct)
                out.append(sq)
        else:
            if isinstance(layer, ConvSpec):
                rows = compile_conv(layer, slots_used=layer.in_len)
            else:
                rows = compile_fc(layer, slots_used=layer.in_len)
            const_cache = {}
            out = []
            for row in rows:
                acc = None
                for pos, wv in zip(row.positions, row.values):
                    wv = int(wv)
                    vec = const_cache.get(wv)
                    if vec is None:
                        vec = np.full(width, wv, dtype=np.int64)
                        const_cache[wv] = vec
                    p = backend.cmult(vals[pos], vec)
                    if acc is None:
                        acc = p
                    else:
                        nxt = backend.add(acc, p)
                        backend.release(acc, p)
                        acc = nxt
                if acc is None:
                    acc = backend.encrypt(np.full(width, row.bias, dtype=np.int64))
                elif row.bias:
                    nxt = backend.add_plain(acc, np.full(width, row.bias, dtype=np.int64))
                    backend.release(acc)
                    acc = nxt
                out.append(acc)
            backend.release(*vals)
        vals = out
    return vals


def decrypt_logits(backend: SlotBackend, result) -> np.ndarray:
    """Centered integer logits from a compact PackedVector or an interleaved
    ciphertext list."""
    t = backend.params.plain_modulus
    if isinstance(result, PackedVector):
        vals = []
        for i in range(result.logical_length):
            m, off = divmod(i, result.slots_used)
            vals.append(int(backend.decrypt(result.cts[m])[off]))
        return np.asarray(centered(np.array(vals, dtype=object), t), dtype=np.int64)
    vals = [int(backend.decrypt(ct)[0]) for ct in result]
    return np.asarray(centered(np.array(vals, dtype=object), t), dtype=np.int64)


# ---- closed-form count estimators -------------------------------------------


def compact_input_cts(shape, slots_used: int) -> int:
    return -(-int(np.prod(shape)) // slots_used)


def interleaved_input_cts(shape) -> int:
    return int(np.prod(shape))


def compact_peak_cts(net: NetworkSpec, slots_used: int) -> int:
    """Serial-schedule peak live ciphertexts for the compact evaluator:
    inputs + accumulating outputs + a fixed allowance of fold temporaries."""
    lens = net.io_lengths()
    ks = [-(-l // slots_used) for l in lens]
    peak = ks[0]
    for layer, kin, kout in zip(net.layers, ks, ks[1:]):
        if isinstance(layer, SquareSpec):
            peak = max(peak, kin + kout)
        else:
            peak = max(peak, kin + kout + 6)
    return peak


def interleaved_peak_cts(net: NetworkSpec) -> int:
    """Peak live ciphertexts for the interleaved evaluator: a linear layer
    keeps all inputs alive while outputs accumulate."""
    lens = net.io_lengths()
    peak = lens[0]
    for layer, lin, lout in zip(net.layers, lens, lens[1:]):
        if isinstance(layer, SquareSpec):
            peak = max(peak, lin + 2)
        else:
            peak = max(peak, lin + lout + 2)
    return peak
