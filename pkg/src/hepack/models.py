"""Model quantization, plaintext inference oracles, overflow certification
and model/image file handling.

Quantization follows fixed-point encoding: weights are scaled by small
power-of-two factors and rounded half away from zero. The integer forward
pass here is the oracle every encrypted path is compared against, so it is
written directly on tensors (sliding-window convolution) rather than through
the layer compiler.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FormatError
from .inference import ConvSpec, FcSpec, NetworkSpec, SquareSpec

MODEL_FORMAT = "hepack-model"
MODEL_VERSION = 1


@dataclass
class IntegerModel:
    """Quantized network plus the input quantization convention.

    Inputs are normalized to [0, 1] and scaled by 2^input_bits - 1 before
    rounding, so pixel values lie in [0, 2^input_bits).
    """

    network: NetworkSpec
    input_bits: int = 8

    @property
    def input_bound(self) -> int:
        return (1 << self.input_bits) - 1


@dataclass
class RangeCertificate:
    """Per-layer worst-case magnitude bounds from interval arithmetic.

    Bounds use absolute values with no sign-cancellation credit, so they are
    sound for every input within input_bits.
    """

    per_layer_bounds: list
    limit: int
    passed: bool
    input_bits: int


def _round_half_away(x: np.ndarray) -> np.ndarray:
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(float_net: NetworkSpec, scale_bits, input_bits: int = 8) -> IntegerModel:
    """Scale float weights by 2^scale_bits per linear layer and round.

    ``scale_bits`` is one integer or a per-linear-layer list. Biases are
    scaled by the accumulated input scale so the integer forward pass stays
    a fixed-point image of the float one; squares square the accumulated
    scale.
    """
    linear_count = sum(
        1 for l in float_net.layers if isinstance(l, (ConvSpec, FcSpec))
    )
    if isinstance(scale_bits, int):
        bits_list = [scale_bits] * linear_count
    else:
        bits_list = list(scale_bits)
        if len(bits_list) != linear_count:
            raise DimensionError(
                f"need {linear_count} scale_bits entries, got {len(bits_list)}"
            )
    for b in bits_list:
        if not (0 <= b <= 8):
            raise ValueError(f"scale_bits {b} outside [0, 8]")
    acc = (1 << input_bits) - 1
    layers = []
    it = iter(bits_list)
    for layer in float_net.layers:
        if isinstance(layer, SquareSpec):
            layers.append(SquareSpec())
            acc = acc * acc
            continue
        bits = next(it)
        factor = 1 << bits
        if isinstance(layer, ConvSpec):
            w = _round_half_away(np.asarray(layer.weights, dtype=float) * factor)
            b = _round_half_away(np.asarray(layer.biases, dtype=float) * acc * factor)
            layers.append(
                ConvSpec(
                    filters=layer.filters,
                    kernel=layer.kernel,
                    stride=layer.stride,
                    in_shape=layer.in_shape,
                    weights=w.astype(np.int64),
                    biases=b.astype(np.int64),
                    scale_bits=bits,
                )
            )
        else:
            w = _round_half_away(np.asarray(layer.weights, dtype=float) * factor)
            b = _round_half_away(np.asarray(layer.biases, dtype=float) * acc * factor)
            layers.append(
                FcSpec(
                    out_neurons=layer.out_neurons,
                    weights=w.astype(np.int64),
                    biases=b.astype(np.int64),
                    scale_bits=bits,
                )
            )
        acc = acc * factor
    net = NetworkSpec(layers=layers, input_shape=float_net.input_shape)
    net.validate()
    return IntegerModel(network=net, input_bits=input_bits)


# ---- plaintext oracles -------------------------------------------------------


def _conv_forward(spec: ConvSpec, x: np.ndarray) -> np.ndarray:
    """Direct strided correlation; exact in the input dtype."""
    kh, kw = spec.kernel
    sh, sw = spec.stride
    windows = np.lib.stride_tricks.sliding_window_view(x, (x.shape[0], kh, kw))
    windows = windows[0, ::sh, ::sw]  # (OH, OW, C, kh, kw)
    w = np.asarray(spec.weights).astype(x.dtype)
    out = np.einsum("hwcij,fcij->fhw", windows, w)
    return out + np.asarray(spec.biases).astype(x.dtype)[:, None, None]


def plaintext_infer_int(net: NetworkSpec, img, trace: bool = False):
    """Exact integer forward pass (no modulus); the oracle for encrypted
    inference. With ``trace`` also returns every layer's flattened output."""
    x = np.asarray(img, dtype=np.int64)
    if x.ndim == 2:
        x = x[None]
    if tuple(x.shape) != tuple(net.input_shape):
        raise DimensionError(f"input shape {x.shape} != {net.input_shape}")
    seen = []
    for layer in net.layers:
        if isinstance(layer, SquareSpec):
            x = x * x
        elif isinstance(layer, ConvSpec):
            x = _conv_forward(layer, x)
        else:
            flat = x.reshape(-1)
            x = np.asarray(layer.weights, dtype=np.int64) @ flat + np.asarray(
                layer.biases, dtype=np.int64
            )
        seen.append(x.reshape(-1).copy())
    logits = x.reshape(-1)
    if trace:
        return logits, seen
    return logits


def plaintext_infer_float(net: NetworkSpec, img) -> np.ndarray:
    """Float forward pass through the same layer list; used only to measure
    argmax agreement of a quantized model."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
    for layer in net.layers:
        if isinstance(layer, SquareSpec):
            x = x * x
        elif isinstance(layer, ConvSpec):
            kh, kw = layer.kernel
            sh, sw = layer.stride
            windows = np.lib.stride_tricks.sliding_window_view(x, (x.shape[0], kh, kw))
            windows = windows[0, ::sh, ::sw]
            x = np.einsum("hwcij,fcij->fhw", windows, np.asarray(layer.weights, dtype=float))
            x = x + np.asarray(layer.biases, dtype=float)[:, None, None]
        else:
            x = np.asarray(layer.weights, dtype=float) @ x.reshape(-1) + np.asarray(
                layer.biases, dtype=float
            )
    return x.reshape(-1)


def range_check(net: NetworkSpec, input_bits: int, plain_modulus: int) -> RangeCertificate:
    """Interval-arithmetic certificate that every intermediate stays within
    the centered modulus range. Failure is a result, not an error."""
    bound = (1 << input_bits) - 1
    limit = (plain_modulus - 1) // 2
    per_layer = []
    for layer in net.layers:
        if isinstance(layer, SquareSpec):
            bound = bound * bound
        elif isinstance(layer, ConvSpec):
            row_weight = int(
                np.abs(np.asarray(layer.weights, dtype=object)).reshape(layer.filters, -1).sum(axis=1).max()
            )
            max_bias = int(np.abs(np.asarray(layer.biases, dtype=object)).max()) if len(layer.biases) else 0
            bound = row_weight * bound + max_bias
        else:
            row_weight = int(np.abs(np.asarray(layer.weights, dtype=object)).sum(axis=1).max())
            max_bias = int(np.abs(np.asarray(layer.biases, dtype=object)).max()) if len(layer.biases) else 0
            bound = row_weight * bound + max_bias
        per_layer.append(int(bound))
    return RangeCertificate(
        per_layer_bounds=per_layer,
        limit=limit,
        passed=bool(per_layer and per_layer[-1] <= limit) if per_layer else True,
        input_bits=input_bits,
    )


# ---- model files -------------------------------------------------------------


def _encode_weights(arr: np.ndarray):
    """Dense nested lists, or a positions/values record when mostly zero so
    fixture files stay small and diffable."""
    arr = np.asarray(arr, dtype=np.int64)
    nz = int(np.count_nonzero(arr))
    if nz * 3 >= arr.size:
        return arr.tolist()
    flat = arr.reshape(-1)
    pos = np.nonzero(flat)[0]
    return {
        "shape": list(arr.shape),
        "positions": pos.tolist(),
        "values": flat[pos].tolist(),
    }


def _decode_weights(entry) -> np.ndarray:
    if isinstance(entry, dict):
        flat = np.zeros(int(np.prod(entry["shape"])), dtype=np.int64)
        flat[np.asarray(entry["positions"], dtype=np.int64)] = entry["values"]
        return flat.reshape(entry["shape"])
    return np.asarray(entry, dtype=np.int64)


def save_model(model: IntegerModel, path):
    """Human-readable JSON: layer list, shapes, scale exponents, base-10
    integer weights (sparse positions/values for mostly-zero tensors)."""
    layers = []
    for layer in model.network.layers:
        if isinstance(layer, SquareSpec):
            layers.append({"type": "square"})
        elif isinstance(layer, ConvSpec):
            layers.append(
                {
                    "type": "conv",
                    "filters": layer.filters,
                    "kernel": list(layer.kernel),
                    "stride": list(layer.stride),
                    "scale_bits": layer.scale_bits,
                    "weights": _encode_weights(layer.weights),
                    "biases": np.asarray(layer.biases, dtype=np.int64).tolist(),
                }
            )
        else:
            layers.append(
                {
                    "type": "fc",
                    "out_neurons": layer.out_neurons,
                    "scale_bits": layer.scale_bits,
                    "weights": _encode_weights(layer.weights),
                    "biases": np.asarray(layer.biases, dtype=np.int64).tolist(),
                }
            )
    doc = {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "input_shape": list(model.network.input_shape),
        "input_bits": model.input_bits,
        "layers": layers,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> IntegerModel:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise FormatError(f"not a model file: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT:
        raise FormatError(f"unexpected format field {doc.get('format')!r}")
    if doc.get("version") != MODEL_VERSION:
        raise FormatError(f"unsupported model version {doc.get('version')!r}")
    shape = tuple(doc["input_shape"])
    layers = []
    cur_shape = shape
    try:
        for entry in doc["layers"]:
            kind = entry["type"]
            if kind == "square":
                layers.append(SquareSpec())
            elif kind == "conv":
                layers.append(
                    ConvSpec(
                        filters=entry["filters"],
                        kernel=tuple(entry["kernel"]),
                        stride=tuple(entry["stride"]),
                        in_shape=cur_shape,
                        weights=_decode_weights(entry["weights"]),
                        biases=np.asarray(entry["biases"], dtype=np.int64),
                        scale_bits=entry.get("scale_bits", 0),
                    )
                )
                cur_shape = layers[-1].out_shape
            elif kind == "fc":
                layers.append(
                    FcSpec(
                        out_neurons=entry["out_neurons"],
                        weights=_decode_weights(entry["weights"]),
                        biases=np.asarray(entry["biases"], dtype=np.int64),
                        scale_bits=entry.get("scale_bits", 0),
                    )
                )
                cur_shape = (entry["out_neurons"],)
            else:
                raise FormatError(f"unknown layer type {kind!r}")
    except (KeyError, ValueError) as exc:
        raise FormatError(f"malformed model file: {exc}") from exc
    net = NetworkSpec(layers=layers, input_shape=shape)
    try:
        net.validate()
    except DimensionError as exc:
        raise FormatError(f"shape chain violation: {exc}") from exc
    return IntegerModel(network=net, input_bits=doc.get("input_bits", 8))


# ---- random fixtures ---------------------------------------------------------


def table1_float_network(
    rng, input_shape, kernel_taps=3, conv2_taps=2, fc_density=0.1, bias_scale=0.0
) -> NetworkSpec:
    """Random float network with the five-layer architecture (conv 25x5x5/2,
    square, conv 50x5x5/2, square, fc 10) and controllable sparsity."""
    c, h, w = input_shape

    def sparse_kernel(shape, taps):
        k = np.zeros(shape)
        flat_idx = rng.choice(np.prod(shape), size=min(taps, np.prod(shape)), replace=False)
        k.reshape(-1)[flat_idx] = rng.uniform(0.4, 1.0, len(flat_idx)) * rng.choice([-1, 1], len(flat_idx))
        return k

    conv1 = ConvSpec(
        filters=25,
        kernel=(5, 5),
        stride=(2, 2),
        in_shape=(c, h, w),
        weights=np.stack([sparse_kernel((c, 5, 5), kernel_taps) for _ in range(25)]),
        biases=rng.uniform(-bias_scale, bias_scale, 25) if bias_scale else np.zeros(25),
        scale_bits=0,
    )
    s1 = conv1.out_shape
    conv2 = ConvSpec(
        filters=50,
        kernel=(5, 5),
        stride=(2, 2),
        in_shape=s1,
        weights=np.stack([sparse_kernel((25, 5, 5), conv2_taps) for _ in range(50)]),
        biases=np.zeros(50),
        scale_bits=0,
    )
    fc_in = int(np.prod(conv2.out_shape))
    fc_w = np.zeros((10, fc_in))
    taps = max(1, int(fc_in * fc_density))
    for j in range(10):
        idx = rng.choice(fc_in, size=taps, replace=False)
        fc_w[j, idx] = rng.uniform(0.4, 1.0, taps) * rng.choice([-1, 1], taps)
    fc = FcSpec(out_neurons=10, weights=fc_w, biases=np.zeros(10), scale_bits=0)
    return NetworkSpec(
        layers=[conv1, SquareSpec(), conv2, SquareSpec(), fc], input_shape=input_shape
    )


def random_certified_model(rng, input_shape, plain_modulus, input_bits=2) -> IntegerModel:
    """Random quantized five-layer model guaranteed to pass range_check at
    ``plain_modulus``; sparsity is tightened until the certificate passes."""
    attempts = [
        dict(kernel_taps=4, conv2_taps=3, fc_density=0.10, bias_scale=0.3, bits=2),
        dict(kernel_taps=3, conv2_taps=2, fc_density=0.05, bias_scale=0.2, bits=1),
        dict(kernel_taps=2, conv2_taps=2, fc_density=0.02, bias_scale=0.0, bits=1),
        dict(kernel_taps=2, conv2_taps=1, fc_density=0.01, bias_scale=0.0, bits=1),
        dict(kernel_taps=1, conv2_taps=1, fc_density=0.005, bias_scale=0.0, bits=1),
        dict(kernel_taps=1, conv2_taps=1, fc_density=0.001, bias_scale=0.0, bits=1),
    ]
    bits_in = input_bits
    while True:
        for att in attempts:
            fnet = table1_float_network(
                rng,
                input_shape,
                kernel_taps=att["kernel_taps"],
                conv2_taps=att["conv2_taps"],
                fc_density=att["fc_density"],
                bias_scale=att["bias_scale"],
            )
            model = quantize(fnet, att["bits"], input_bits=bits_in)
            if range_check(model.network, bits_in, plain_modulus).passed:
                return model
        if bits_in == 1:
            raise ValueError(
                f"could not certify any random model at t={plain_modulus}"
            )
        bits_in = 1


def random_image(rng, shape, input_bits: int) -> np.ndarray:
    return rng.integers(0, 1 << input_bits, size=shape, dtype=np.int64)


def quantize_image(img, input_bits: int) -> np.ndarray:
    """Rescale integer pixels to [0, 2^input_bits - 1], normalizing by the
    per-image maximum. Images already within range pass through unchanged.

    Quantized tensors cache as plain .npy files (see read_image)."""
    arr = np.asarray(img, dtype=np.int64)
    top = (1 << input_bits) - 1
    peak = int(arr.max()) if arr.size else 0
    if peak <= top:
        return arr
    return np.floor(arr / peak * top + 0.5).astype(np.int64)


# ---- image files -------------------------------------------------------------


def _read_pnm_tokens(data: bytes):
    pos = 0
    while True:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if pos < len(data) and data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos] != 0x0A:
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            return
        yield data[start:pos], pos


def read_image(path) -> np.ndarray:
    """PGM/PPM (P2/P3/P5/P6) or .npy tensor, as a (C, H, W) int64 array."""
    path = str(path)
    if path.endswith(".npy"):
        arr = np.load(path)
        if arr.ndim == 2:
            arr = arr[None]
        return arr.astype(np.int64)
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = _read_pnm_tokens(data)
    try:
        magic, _ = next(tokens)
        magic = magic.decode()
        if magic not in ("P2", "P3", "P5", "P6"):
            raise FormatError(f"unsupported image magic {magic!r}")
        width, _ = next(tokens)
        height, _ = next(tokens)
        maxval, end = next(tokens)
        width, height, maxval = int(width), int(height), int(maxval)
    except (StopIteration, ValueError) as exc:
        raise FormatError(f"malformed PNM header in {path}") from exc
    channels = 3 if magic in ("P3", "P6") else 1
    count = width * height * channels
    if magic in ("P5", "P6"):
        raw = data[end + 1 : end + 1 + count * (2 if maxval > 255 else 1)]
        dtype = ">u2" if maxval > 255 else np.uint8
        flat = np.frombuffer(raw, dtype=dtype, count=count).astype(np.int64)
    else:
        vals = []
        for tok, _ in tokens:
            vals.append(int(tok))
            if len(vals) == count:
                break
        flat = np.asarray(vals, dtype=np.int64)
    if flat.size != count:
        raise FormatError(f"image data truncated in {path}")
    img = flat.reshape(height, width, channels)
    return np.moveaxis(img, -1, 0)  # channel-major


def write_image(path, tensor):
    """Write a (C, H, W) integer tensor as binary PGM (C=1) or PPM (C=3)."""
    arr = np.asarray(tensor, dtype=np.int64)
    if arr.ndim == 2:
        arr = arr[None]
    c, h, w = arr.shape
    maxval = max(1, int(arr.max()))
    if maxval > 65535:
        raise FormatError("pixel values exceed 16-bit PNM range")
    if c == 1:
        magic = b"P5"
    elif c == 3:
        magic = b"P6"
    else:
        raise FormatError(f"PNM supports 1 or 3 channels, got {c}")
    body = np.moveaxis(arr, 0, -1)
    dtype = ">u2" if maxval > 255 else np.uint8
    with open(path, "wb") as fh:
        fh.write(magic + b"\n%d %d\n%d\n" % (w, h, maxval))
        fh.write(body.astype(dtype).tobytes())
