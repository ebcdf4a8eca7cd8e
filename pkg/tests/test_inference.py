"""Image packing, layer compilation, the evaluator against plaintext
oracles, and the interleaved baseline."""

import math

import numpy as np
import pytest

from hepack.engine import SimBackend
from hepack.errors import DepthBudgetError, DimensionError, MemoryCapError
from hepack.inference import (
    ConvSpec,
    FcSpec,
    NetworkSpec,
    WeightRow,
    compact_peak_cts,
    compile_conv,
    compile_fc,
    decrypt_logits,
    infer,
    interleaved_infer,
    interleaved_input_cts,
    interleaved_peak_cts,
    layer_eval,
    pack_image,
    pack_image_interleaved,
    square_activation,
)
from hepack.models import plaintext_infer_int, random_certified_model, random_image
from hepack.params import profile


def table1_net(rng, input_shape, **kw):
    from hepack.models import quantize, table1_float_network

    return quantize(table1_float_network(rng, input_shape, **kw), 1, input_bits=2).network


def test_pack_image_positions(desk, rng):
    img = rng.integers(0, 4, (2, 3, 4))
    pv = pack_image(desk, img, slots_used=5)
    flat = img.reshape(-1)
    assert pv.k == math.ceil(flat.size / 5) == len(pv.cts)
    for p, v in enumerate(flat):
        assert desk.decrypt(pv.cts[p // 5])[p % 5] == v
    # slots beyond the content stay zero
    tail = desk.decrypt(pv.cts[-1])
    assert not np.any(tail[flat.size % 5 :])


def test_pack_image_ciphertext_counts():
    # k = ceil(C*H*W / s) at s = 8192
    big = SimBackend(profile("mnist"))
    assert pack_image(big, np.zeros((1, 28, 28), dtype=int)).k == 1
    assert pack_image(big, np.zeros((1, 96, 96), dtype=int)).k == 2
    assert pack_image(big, np.zeros((3, 256, 256), dtype=int)).k == 24


def test_pack_image_rejects_empty(desk):
    with pytest.raises(DimensionError):
        pack_image(desk, np.zeros((0, 2, 2)))


def test_interleaved_counts(desk):
    px = pack_image_interleaved(desk, np.arange(4).reshape(1, 2, 2))
    assert len(px) == 4
    # each pixel broadcast across every slot
    assert np.all(desk.decrypt(px[3]) == 3)
    assert interleaved_input_cts((1, 28, 28)) == 784
    assert interleaved_input_cts((1, 96, 96)) == 9216
    assert interleaved_input_cts((3, 256, 256)) == 196608


def test_compile_conv_row_counts_table1():
    conv1 = ConvSpec(25, (5, 5), (2, 2), (1, 28, 28),
                     np.ones((25, 1, 5, 5), dtype=int), np.zeros(25, dtype=int))
    assert conv1.out_shape == (25, 12, 12)
    rows = compile_conv(conv1, 2048)
    assert len(rows) == 3600
    conv2 = ConvSpec(50, (5, 5), (2, 2), (25, 12, 12),
                     np.ones((50, 25, 5, 5), dtype=int), np.zeros(50, dtype=int))
    assert len(compile_conv(conv2, 2048)) == 800


def test_compile_conv_one_by_one_rows(desk):
    spec = ConvSpec(1, (1, 1), (1, 1), (1, 2, 2),
                    np.full((1, 1, 1, 1), 3, dtype=int), np.zeros(1, dtype=int))
    rows = compile_conv(spec, 8)
    assert len(rows) == 4
    for i, row in enumerate(rows):
        dense = row.dense()
        assert dense[i] == 3 and np.count_nonzero(dense) == 1


def test_compile_conv_positions_formula(rng):
    spec = ConvSpec(2, (2, 2), (1, 2), (2, 3, 4),
                    rng.integers(1, 5, (2, 2, 2, 2)), np.zeros(2, dtype=int))
    rows = compile_conv(spec, 64)
    c, h, w = spec.in_shape
    f, oh, ow = spec.out_shape
    for row in rows:
        idx = row.out_index
        fi, rest = divmod(idx, oh * ow)
        oy, ox = divmod(rest, ow)
        dense = row.dense()
        for ci in range(c):
            for i in range(2):
                for j in range(2):
                    pos = ci * h * w + (oy * 1 + i) * w + (ox * 2 + j)
                    assert dense[pos] == spec.weights[fi][ci][i][j]


def test_compile_conv_kernel_too_big():
    with pytest.raises(DimensionError):
        ConvSpec(1, (5, 5), (1, 1), (1, 3, 3),
                 np.ones((1, 1, 5, 5), dtype=int), np.zeros(1, dtype=int)).out_shape


def test_compile_fc_rows(desk):
    spec = FcSpec(3, np.array([[1, 0, 2], [0, 0, 0], [4, 5, 6]]), np.array([7, 8, 9]))
    rows = compile_fc(spec, 8)
    assert [r.bias for r in rows] == [7, 8, 9]
    assert list(rows[2].dense()) == [4, 5, 6]
    assert rows[1].positions.size == 0


def test_layer_eval_identity_rows(desk, rng):
    data = rng.integers(0, 50, 6)
    pv = pack_image(desk, data.reshape(1, 1, 6), slots_used=3)
    rows = [WeightRow(out_index=i, length=6, slots_used=3,
                      positions=np.array([i]), values=np.array([1]))
            for i in range(6)]
    out = layer_eval(desk, rows, pv)
    got = decrypt_logits(desk, out)
    assert np.array_equal(got, data)


def test_layer_eval_sum_row(desk, rng):
    img = rng.integers(0, 4, (1, 28, 28))
    pv = pack_image(desk, img)
    row = WeightRow(out_index=0, length=784, slots_used=pv.slots_used,
                    positions=np.arange(784), values=np.ones(784, dtype=np.int64))
    out = layer_eval(desk, [row], pv)
    assert decrypt_logits(desk, out)[0] == int(img.sum())


def test_layer_eval_conv_vs_oracle(desk, rng):
    net = table1_net(rng, (1, 28, 28), kernel_taps=6, conv2_taps=4, fc_density=0.2)
    conv1 = net.layers[0]
    img = rng.integers(0, 4, (1, 28, 28))
    pv = pack_image(desk, img)
    out = layer_eval(desk, compile_conv(conv1, pv.slots_used), pv)
    got = decrypt_logits(desk, out)
    want = plaintext_infer_int(
        NetworkSpec([conv1], (1, 28, 28)), img
    )
    assert np.array_equal(got, want)
    assert max(ct.level_used for ct in out.cts) == 2


def test_layer_eval_bias_only_rows(desk):
    pv = pack_image(desk, np.array([[[5]]]), slots_used=4)
    rows = [WeightRow(out_index=i, length=1, slots_used=4,
                      positions=np.array([], dtype=np.int64),
                      values=np.array([], dtype=np.int64), bias=b)
            for i, b in enumerate([3, 0, -2])]
    out = layer_eval(desk, rows, pv)
    assert list(decrypt_logits(desk, out)) == [3, 0, -2]


def test_square_activation(desk, rng):
    data = rng.integers(-8, 9, 10)
    pv = pack_image(desk, data.reshape(1, 1, 10), slots_used=4)
    sq = square_activation(desk, pv)
    assert np.array_equal(decrypt_logits(desk, sq), data * data)
    assert sq.scale == pv.scale * pv.scale
    neg = pack_image(desk, np.array([[[-3, 2]]]), slots_used=4)
    assert list(decrypt_logits(desk, square_activation(desk, neg))) == [9, 4]


def test_zero_segment_skip_preserves_output(desk, rng):
    # rows whose nonzeros sit in one of four segments
    data = rng.integers(0, 9, 32)
    pv = pack_image(desk, data.reshape(1, 1, 32), slots_used=8)
    rows = []
    for i in range(4):
        pos = np.arange(8 * (i % 4), 8 * (i % 4) + 4)
        rows.append(WeightRow(out_index=i, length=32, slots_used=8,
                              positions=pos, values=np.ones(4, dtype=np.int64)))
    r0 = desk.cost_report()
    fast = layer_eval(desk, rows, pv, skip_zero_segments=True)
    mid = desk.cost_report()
    slow = layer_eval(desk, rows, pv, skip_zero_segments=False)
    r2 = desk.cost_report()
    assert np.array_equal(decrypt_logits(desk, fast), decrypt_logits(desk, slow))
    cm_fast = mid.delta(r0).cmult_count
    cm_slow = r2.delta(mid).cmult_count
    assert cm_fast < cm_slow


def test_infer_matches_oracle_and_depth(desk, rng):
    t = desk.params.plain_modulus
    model = random_certified_model(rng, (1, 28, 28), t, input_bits=2)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    want = plaintext_infer_int(model.network, img)
    out = infer(desk, model.network, pack_image(desk, img))
    assert np.array_equal(decrypt_logits(desk, out), want)
    assert max(ct.level_used for ct in out.cts) == 8
    assert out.logical_length == 10 and out.k == 1


def test_infer_zero_net_yields_biases(desk):
    conv = ConvSpec(1, (1, 1), (1, 1), (1, 2, 2),
                    np.zeros((1, 1, 1, 1), dtype=int), np.array([4]))
    net = NetworkSpec([conv], (1, 2, 2))
    out = infer(desk, net, pack_image(desk, np.arange(4).reshape(1, 2, 2)))
    assert list(decrypt_logits(desk, out)) == [4, 4, 4, 4]


def test_depth_budget_seven_fails_eight_succeeds(rng):
    t = profile("desk").plain_modulus
    model = random_certified_model(rng, (1, 28, 28), t, input_bits=1)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    assert model.network.depth_cost() == 8
    be8 = SimBackend(profile("desk", depth_budget=8))
    out = infer(be8, model.network, pack_image(be8, img))
    assert np.array_equal(decrypt_logits(be8, out), plaintext_infer_int(model.network, img))
    be7 = SimBackend(profile("desk", depth_budget=7))
    with pytest.raises(DepthBudgetError):
        infer(be7, model.network, pack_image(be7, img))


def test_threads_do_not_change_outputs_or_counters(desk_params, rng):
    model = random_certified_model(rng, (1, 28, 28), desk_params.plain_modulus)
    img = random_image(rng, (1, 28, 28), model.input_bits)

    def run(threads):
        be = SimBackend(desk_params)
        out = infer(be, model.network, pack_image(be, img), threads=threads)
        return decrypt_logits(be, out), be.cost_report()

    logits1, rep1 = run(1)
    logits4, rep4 = run(4)
    assert np.array_equal(logits1, logits4)
    assert rep1 == rep4


def test_interleaved_equivalence(desk_params, rng):
    model = random_certified_model(rng, (1, 28, 28), desk_params.plain_modulus)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    be1 = SimBackend(desk_params)
    compact = decrypt_logits(
        be1, infer(be1, model.network, pack_image(be1, img))
    )
    be2 = SimBackend(desk_params)
    inter = decrypt_logits(
        be2, interleaved_infer(be2, model.network, pack_image_interleaved(be2, img))
    )
    assert np.array_equal(compact, inter)


def test_interleaved_memory_cap_refusal(desk, rng):
    net = table1_net(rng, (1, 28, 28))
    px = pack_image_interleaved(desk, np.zeros((1, 28, 28), dtype=int))
    with pytest.raises(MemoryCapError):
        interleaved_infer(desk, net, px, mem_cap_bytes=1000)


def test_peak_estimators_bound_actual(desk_params, rng):
    model = random_certified_model(rng, (1, 28, 28), desk_params.plain_modulus)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    be = SimBackend(desk_params)
    infer(be, model.network, pack_image(be, img))
    est = compact_peak_cts(model.network, desk_params.slot_count)
    assert be.cost_report().peak_live_ciphertexts <= est
    be2 = SimBackend(desk_params)
    interleaved_infer(be2, model.network, pack_image_interleaved(be2, img))
    est2 = interleaved_peak_cts(model.network)
    assert be2.cost_report().peak_live_ciphertexts <= est2
    # the estimate stays within a few temporaries of reality
    assert est2 - be2.cost_report().peak_live_ciphertexts <= 8


def test_network_validation_rejects_broken_chain():
    conv = ConvSpec(1, (3, 3), (1, 1), (1, 5, 5),
                    np.ones((1, 1, 3, 3), dtype=int), np.zeros(1, dtype=int))
    fc = FcSpec(2, np.ones((2, 7), dtype=int), np.zeros(2, dtype=int))
    with pytest.raises(DimensionError):
        NetworkSpec([conv, fc], (1, 5, 5)).validate()


def test_scaling_invariance_argmax_encrypted(desk, rng):
    t = desk.params.plain_modulus
    model = random_certified_model(rng, (1, 28, 28), t, input_bits=1)
    img = random_image(rng, (1, 28, 28), model.input_bits)
    base = decrypt_logits(desk, infer(desk, model.network, pack_image(desk, img)))
    fc = model.network.layers[-1]
    # doubling weights must not overflow the certificate headroom here
    scaled_fc = FcSpec(fc.out_neurons, fc.weights * 2, fc.biases * 2, fc.scale_bits)
    net2 = NetworkSpec(model.network.layers[:-1] + [scaled_fc], model.network.input_shape)
    from hepack.models import range_check

    assert range_check(net2, model.input_bits, t).passed
    scaled = decrypt_logits(desk, infer(desk, net2, pack_image(desk, img)))
    assert np.argmax(base) == np.argmax(scaled)
    assert np.array_equal(scaled, base * 2)
