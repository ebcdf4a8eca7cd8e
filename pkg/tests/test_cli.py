"""CLI subcommands, exit codes and report artifacts."""

import json
from pathlib import Path

import numpy as np
import pytest

from hepack.cli import main
from hepack.report import parse_metric_lines

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"
MNIST_MODEL = str(FIXTURES / "mnist.json")
DIGIT = str(FIXTURES / "digit.pgm")


def run_cli(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_infer_compact_fixture(capsys, tmp_path):
    code, out, _ = run_cli(
        capsys, "infer", "--profile", "desk", "--backend", "sim",
        "--packing", "compact", "--model", MNIST_MODEL, "--image", DIGIT,
        "--out", str(tmp_path),
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    expected = json.loads((FIXTURES / "expected.json").read_text())["mnist"]
    assert int(metrics["prediction"]) == int(np.argmax(expected["logits"]))
    assert int(metrics["input_cts"]) == 1
    assert int(metrics["depth_used"]) == 8
    assert (tmp_path / "logits.bin").exists()
    assert (tmp_path / "report.csv").exists()
    assert (tmp_path / "report.png").exists()


def test_infer_interleaved_agrees(capsys):
    code, out, _ = run_cli(
        capsys, "infer", "--profile", "desk", "--packing", "interleaved",
        "--model", MNIST_MODEL, "--image", DIGIT,
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    expected = json.loads((FIXTURES / "expected.json").read_text())["mnist"]
    assert int(metrics["prediction"]) == int(np.argmax(expected["logits"]))
    assert int(metrics["input_cts"]) == 784
    # same prediction as compact, with a visibly larger ciphertext footprint
    assert int(metrics["peak_live_cts"]) > 100


def test_infer_missing_model_exits_4(capsys):
    code, _, err = run_cli(
        capsys, "infer", "--model", "/nonexistent/m.json", "--image", DIGIT,
    )
    assert code == 4
    assert err.strip()


def test_usage_error_exits_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["infer", "--packing", "bogus", "--model", MNIST_MODEL, "--image", DIGIT])
    assert exc.value.code == 2


def test_infer_depth_refusal_exits_3(capsys):
    # fv backend is verified to depth 4 at desk; the network needs 8
    code, _, err = run_cli(
        capsys, "infer", "--backend", "fv", "--model", MNIST_MODEL, "--image", DIGIT,
    )
    assert code == 3
    assert "depth" in err


def test_seeded_runs_are_reproducible(capsys, tmp_path):
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    argv = ["infer", "--profile", "desk", "--model", MNIST_MODEL,
            "--image", DIGIT, "--seed", "9"]
    code1, out1, _ = run_cli(capsys, *argv, "--out", str(out_a))
    code2, out2, _ = run_cli(capsys, *argv, "--out", str(out_b))
    assert code1 == code2 == 0
    m1 = {k: v for k, v in parse_metric_lines(out1).items() if k != "wall_s"}
    m2 = {k: v for k, v in parse_metric_lines(out2).items() if k != "wall_s"}
    assert m1 == m2
    assert (out_a / "logits.bin").read_bytes() == (out_b / "logits.bin").read_bytes()


def test_compare_estimate_metrics(capsys, tmp_path):
    code, out, _ = run_cli(
        capsys, "compare", "--profile", "mnist", "--model", MNIST_MODEL,
        "--out", str(tmp_path),
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    assert int(metrics["input_cts_compact"]) == 1
    assert int(metrics["input_cts_interleaved"]) == 784
    assert float(metrics["input_ct_ratio"]) == 784.0
    assert float(metrics["est_bytes_ratio"]) >= 5
    assert int(metrics["interleaved_refused"]) == 0
    assert (tmp_path / "compare.csv").exists()
    assert (tmp_path / "compare.png").exists()


def test_compare_run_predictions_agree(capsys):
    code, out, _ = run_cli(
        capsys, "compare", "--profile", "desk", "--model", MNIST_MODEL,
        "--image", DIGIT, "--run",
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    assert int(metrics["predictions_agree"]) == 1
    assert float(metrics["wall_s_compact"]) > 0
    assert float(metrics["wall_s_interleaved"]) > 0


def test_compare_idrid_refuses_interleaved(capsys):
    code, out, _ = run_cli(
        capsys, "compare", "--profile", "retina",
        "--model", str(FIXTURES / "idrid.json"), "--mem-cap-gb", "188",
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    assert int(metrics["interleaved_refused"]) == 1
    assert int(metrics["input_cts_interleaved"]) == 196608
    assert "> 188 GB" in out


def test_matmul_command(capsys, tmp_path):
    code, out, _ = run_cli(
        capsys, "matmul", "--dim", "4", "--seed", "2", "--out", str(tmp_path),
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    assert int(metrics["exact"]) == 1
    assert int(metrics["mult_delta"]) == 4
    assert int(metrics["cmult_delta"]) == 16
    assert int(metrics["depth_delta"]) == 2
    assert (tmp_path / "matmul.csv").exists()


def test_encrypt_image_counts(capsys, tmp_path):
    out_path = tmp_path / "digit.enc"
    code, out, _ = run_cli(
        capsys, "encrypt-image", "--profile", "mnist", "--image", DIGIT,
        "--out", str(out_path),
    )
    assert code == 0
    metrics = parse_metric_lines(out)
    assert int(metrics["ciphertexts"]) == 1
    assert out_path.exists()


def test_encrypt_image_idrid_counts(capsys, tmp_path):
    out_path = tmp_path / "idrid.enc"
    code, out, _ = run_cli(
        capsys, "encrypt-image", "--profile", "retina",
        "--image", str(FIXTURES / "idrid.ppm"), "--out", str(out_path),
    )
    assert code == 0
    assert int(parse_metric_lines(out)["ciphertexts"]) == 24


def test_infer_accepts_encrypted_image_input(capsys, tmp_path):
    enc = tmp_path / "digit.enc"
    code, _, _ = run_cli(
        capsys, "encrypt-image", "--profile", "desk", "--image", DIGIT,
        "--out", str(enc),
    )
    assert code == 0
    code, out, _ = run_cli(
        capsys, "infer", "--profile", "desk", "--model", MNIST_MODEL,
        "--image", str(enc),
    )
    assert code == 0
    expected = json.loads((FIXTURES / "expected.json").read_text())["mnist"]
    assert int(parse_metric_lines(out)["prediction"]) == int(np.argmax(expected["logits"]))


@pytest.mark.slow
def test_keygen_and_fv_encrypt_image(capsys, tmp_path):
    keys = tmp_path / "keys"
    code, out, _ = run_cli(
        capsys, "keygen", "--profile", "desk", "--seed", "5", "--out", str(keys),
    )
    assert code == 0
    assert int(parse_metric_lines(out)["roundtrip_ok"]) == 1
    assert (keys / "params.json").exists()
    assert (keys / "galois.bin").exists()
    enc = tmp_path / "digit.enc"
    code, out, _ = run_cli(
        capsys, "encrypt-image", "--profile", "desk", "--backend", "fv",
        "--keys", str(keys), "--image", DIGIT, "--out", str(enc),
    )
    assert code == 0
    assert int(parse_metric_lines(out)["ciphertexts"]) == 1


def test_bad_slots_used_exits_2(capsys):
    code, _, err = run_cli(
        capsys, "infer", "--profile", "desk", "--slots-used", "999999",
        "--model", MNIST_MODEL, "--image", DIGIT,
    )
    assert code == 2
    assert "slots_used" in err
