"""Quantization, the plaintext oracles, range certification and file I/O."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from hepack.errors import DimensionError, FormatError
from hepack.inference import ConvSpec, FcSpec, NetworkSpec, SquareSpec
from hepack.models import (
    load_model,
    plaintext_infer_float,
    plaintext_infer_int,
    quantize,
    random_certified_model,
    random_image,
    range_check,
    read_image,
    save_model,
    table1_float_network,
    write_image,
)
from hepack.params import profile

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


def _one_fc_float(weights, biases=None):
    w = np.asarray(weights, dtype=float)
    b = np.zeros(w.shape[0]) if biases is None else np.asarray(biases, dtype=float)
    return NetworkSpec([FcSpec(w.shape[0], w, b)], (1, 1, w.shape[1]))


def test_quantize_rounding_rule():
    net = _one_fc_float([[0.37, -0.37, 0.0]])
    model = quantize(net, 4, input_bits=1)
    # round(0.37 * 16) = round(5.92) = 6, half away from zero
    assert list(model.network.layers[0].weights[0]) == [6, -6, 0]


def test_quantize_zero_and_identity():
    zero = quantize(_one_fc_float([[0.0, 0.0]]), 4)
    assert not np.any(zero.network.layers[0].weights)
    ident = quantize(_one_fc_float([[3.0, -2.0]]), 0)
    assert list(ident.network.layers[0].weights[0]) == [3, -2]


def test_quantize_scale_ledger_through_square():
    # bias on the second linear layer is scaled by the squared accumulated scale
    conv = ConvSpec(1, (1, 1), (1, 1), (1, 1, 1),
                    np.full((1, 1, 1, 1), 0.5), np.zeros(1))
    fc = FcSpec(1, np.array([[1.0]]), np.array([1.0]))
    net = NetworkSpec([conv, SquareSpec(), fc], (1, 1, 1))
    model = quantize(net, [1, 1], input_bits=1)
    # acc after input: 1; conv doubles to 2; square: 4; fc bias = 1.0 * 4 * 2 = 8
    assert int(model.network.layers[2].biases[0]) == 8


def test_quantize_per_layer_bits_validation():
    net = _one_fc_float([[1.0]])
    with pytest.raises(DimensionError):
        quantize(net, [1, 2])
    with pytest.raises(ValueError):
        quantize(net, 9)


def test_plaintext_infer_hand_computed_two_layer():
    # 1x1 conv with weight 2 on an image of ones, then square: all 4s
    conv = ConvSpec(1, (1, 1), (1, 1), (1, 2, 2),
                    np.full((1, 1, 1, 1), 2, dtype=np.int64), np.zeros(1, dtype=np.int64))
    net = NetworkSpec([conv, SquareSpec()], (1, 2, 2))
    out = plaintext_infer_int(net, np.ones((1, 2, 2), dtype=np.int64))
    assert list(out) == [4, 4, 4, 4]


def test_plaintext_infer_zero_net_returns_biases():
    fc = FcSpec(3, np.zeros((3, 4), dtype=np.int64), np.array([5, -1, 2]))
    net = NetworkSpec([fc], (1, 1, 4))
    assert list(plaintext_infer_int(net, np.arange(4).reshape(1, 1, 4))) == [5, -1, 2]


def test_plaintext_float_linear_model_matches_scaled_int(rng):
    w = rng.uniform(-1, 1, (4, 9))
    net = NetworkSpec([FcSpec(4, w, np.zeros(4))], (1, 3, 3))
    model = quantize(net, 8, input_bits=8)
    img = random_image(rng, (1, 3, 3), 8)
    got = plaintext_infer_int(model.network, img)
    scale = (1 << 8)
    want = plaintext_infer_float(net, img.astype(float))
    # linear-only model: integer logits approximate scaled float logits within
    # the accumulated rounding bound (0.5 per weight times the input mass)
    bound = 0.5 * np.abs(img).sum() + 1
    assert np.all(np.abs(got / scale - want) <= bound / scale * 2)


def test_argmax_agreement_monotone_spot(rng):
    net = table1_float_network(rng, (1, 28, 28), kernel_taps=4, conv2_taps=3,
                               fc_density=0.1)
    img = random_image(rng, (1, 28, 28), 8).astype(float) / 255.0
    agree = {}
    for bits in (2, 8):
        model = quantize(net, bits, input_bits=8)
        int_img = np.floor(img * 255 + 0.5).astype(np.int64)
        got = plaintext_infer_int(model.network, int_img)
        want = plaintext_infer_float(net, img)
        agree[bits] = int(np.argmax(got) == np.argmax(want))
    # reported, not asserted: coarse quantization may flip the argmax
    print(f"argmax agreement at 2 bits: {agree[2]}, at 8 bits: {agree[8]}")


def test_range_check_zero_model_passes():
    fc = FcSpec(2, np.zeros((2, 3), dtype=np.int64), np.zeros(2, dtype=np.int64))
    cert = range_check(NetworkSpec([fc], (1, 1, 3)), 8, 147457)
    assert cert.passed and cert.per_layer_bounds == [0]


def test_range_check_single_square_boundary():
    t = 4398047232001
    limit = (t - 1) // 2
    safe_bits = 20  # (2^20 - 1)^2 < limit
    cert = range_check(NetworkSpec([SquareSpec()], (1, 1, 1)), safe_bits, t)
    assert cert.passed and cert.per_layer_bounds[0] == ((1 << 20) - 1) ** 2
    over = range_check(NetworkSpec([SquareSpec()], (1, 1, 1)), 21, t)
    assert not over.passed  # (2^21 - 1)^2 exceeds floor((t-1)/2)


def test_range_check_table1_verdict_is_computable(rng):
    net = quantize(
        table1_float_network(rng, (1, 28, 28), kernel_taps=25, conv2_taps=625,
                             fc_density=1.0),
        4, input_bits=8,
    ).network
    cert = range_check(net, 8, 4398047232001)
    assert len(cert.per_layer_bounds) == 5
    assert cert.passed in (True, False)
    print(f"dense table-1 at t~2^42: bound {cert.per_layer_bounds[-1]:.3e}, "
          f"limit {cert.limit:.3e}, passed {cert.passed}")


def test_range_soundness_small(rng):
    t = profile("desk").plain_modulus
    model = random_certified_model(rng, (1, 28, 28), t)
    cert = range_check(model.network, model.input_bits, t)
    for _ in range(200):
        img = random_image(rng, (1, 28, 28), model.input_bits)
        _, seen = plaintext_infer_int(model.network, img, trace=True)
        for vals, bound in zip(seen, cert.per_layer_bounds):
            assert int(np.abs(vals).max()) <= bound


def test_save_load_roundtrip(tmp_path, rng):
    t = profile("desk").plain_modulus
    model = random_certified_model(rng, (1, 28, 28), t)
    path = tmp_path / "m.json"
    save_model(model, path)
    again = load_model(path)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    assert again.input_bits == model.input_bits
    assert np.array_equal(
        plaintext_infer_int(again.network, img),
        plaintext_infer_int(model.network, img),
    )


def test_load_model_rejects_malformed(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(FormatError):
        load_model(bad)
    wrong = tmp_path / "wrong.json"
    wrong.write_text(json.dumps({"format": "other", "version": 1}))
    with pytest.raises(FormatError):
        load_model(wrong)


def test_load_model_rejects_shape_chain_violation(tmp_path):
    doc = {
        "format": "hepack-model",
        "version": 1,
        "input_shape": [1, 4, 4],
        "input_bits": 2,
        "layers": [
            {"type": "conv", "filters": 1, "kernel": [3, 3], "stride": [1, 1],
             "scale_bits": 1, "weights": [[[[1, 1, 1]] * 3]], "biases": [0]},
            {"type": "fc", "out_neurons": 2, "scale_bits": 1,
             "weights": [[1, 1, 1], [1, 1, 1]], "biases": [0, 0]},
        ],
    }
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(doc))
    with pytest.raises(FormatError):
        load_model(path)


def test_fixture_model_hashes_pinned():
    manifest = json.loads((FIXTURES / "expected.json").read_text())
    for name, entry in manifest.items():
        digest = hashlib.sha256((FIXTURES / entry["model"]).read_bytes()).hexdigest()
        assert digest == entry["model_sha256"], f"fixture {name} changed"


def test_fixture_logits_pinned():
    manifest = json.loads((FIXTURES / "expected.json").read_text())
    for name, entry in manifest.items():
        model = load_model(FIXTURES / entry["model"])
        img = read_image(FIXTURES / entry["image"])
        logits = plaintext_infer_int(model.network, img)
        assert list(logits) == entry["logits"], f"fixture {name} drifted"


def test_argmax_invariance_under_positive_scaling(rng):
    t = profile("desk").plain_modulus
    model = random_certified_model(rng, (1, 28, 28), t)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    base = plaintext_infer_int(model.network, img)
    fc = model.network.layers[-1]
    for factor in (2, 5):
        scaled = NetworkSpec(
            model.network.layers[:-1]
            + [FcSpec(fc.out_neurons, fc.weights * factor, fc.biases * factor, fc.scale_bits)],
            model.network.input_shape,
        )
        got = plaintext_infer_int(scaled, img)
        assert np.argmax(got) == np.argmax(base)


def test_image_roundtrip_pgm_ppm_npy(tmp_path, rng):
    gray = rng.integers(0, 256, (1, 9, 7))
    write_image(tmp_path / "g.pgm", gray)
    assert np.array_equal(read_image(tmp_path / "g.pgm"), gray)
    color = rng.integers(0, 256, (3, 5, 6))
    write_image(tmp_path / "c.ppm", color)
    assert np.array_equal(read_image(tmp_path / "c.ppm"), color)
    deep = rng.integers(0, 1024, (1, 4, 4))
    write_image(tmp_path / "d.pgm", deep)
    assert np.array_equal(read_image(tmp_path / "d.pgm"), deep)
    np.save(tmp_path / "t.npy", gray[0])
    assert np.array_equal(read_image(tmp_path / "t.npy"), gray)


def test_read_ascii_pnm(tmp_path):
    (tmp_path / "a.pgm").write_text("P2\n# comment\n2 2\n9\n1 2\n3 4\n")
    assert read_image(tmp_path / "a.pgm").tolist() == [[[1, 2], [3, 4]]]


def test_read_image_rejects_garbage(tmp_path):
    p = tmp_path / "x.pgm"
    p.write_bytes(b"JUNK")
    with pytest.raises(FormatError):
        read_image(p)
