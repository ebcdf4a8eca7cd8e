"""Regenerate the committed fixtures: one pinned random-weight model and one
image per input shape, plus the oracle logits they must produce.

Run from the repository root: python scripts/make_fixtures.py
"""

import hashlib
import json
from pathlib import Path

import numpy as np

from hepack.models import (
    plaintext_infer_int,
    quantize,
    random_image,
    range_check,
    save_model,
    table1_float_network,
    write_image,
)
from hepack.params import profile

ROOT = Path(__file__).resolve().parent.parent
FIXTURES = ROOT / "fixtures"

# mnist certifies at the desk modulus so the desk CLI example works out of
# the box; the retina-scale shapes certify at the retina modulus. Sparsity is
# explicit so the files stay small and the certificates hold.
CASES = [
    ("mnist", (1, 28, 28), "desk", "digit.pgm", 1001,
     dict(kernel_taps=1, conv2_taps=1, fc_density=0.005, bias_scale=0.0), 1, 2),
    ("rop", (1, 96, 96), "retina", "rop.pgm", 1002,
     dict(kernel_taps=4, conv2_taps=3, fc_density=0.002, bias_scale=0.3), 2, 2),
    ("idrid", (3, 256, 256), "retina", "idrid.ppm", 1003,
     dict(kernel_taps=4, conv2_taps=3, fc_density=0.0005, bias_scale=0.3), 2, 2),
]


def main():
    FIXTURES.mkdir(exist_ok=True)
    manifest = {}
    for name, shape, prof, image_name, seed, recipe, bits, input_bits in CASES:
        rng = np.random.default_rng(seed)
        t = profile(prof).plain_modulus
        model = quantize(table1_float_network(rng, shape, **recipe), bits,
                         input_bits=input_bits)
        cert = range_check(model.network, model.input_bits, t)
        assert cert.passed, f"{name} fixture does not certify at {prof}"
        model_path = FIXTURES / f"{name}.json"
        save_model(model, model_path)
        img = random_image(rng, shape, model.input_bits)
        write_image(FIXTURES / image_name, img)
        logits = plaintext_infer_int(model.network, img)
        manifest[name] = {
            "model": model_path.name,
            "image": image_name,
            "profile": prof,
            "input_bits": model.input_bits,
            "model_sha256": hashlib.sha256(model_path.read_bytes()).hexdigest(),
            "logits": [int(v) for v in logits],
        }
        print(f"{name}: shape {shape}, logits {logits.tolist()}")
    with open(FIXTURES / "expected.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    print(f"wrote {FIXTURES / 'expected.json'}")


if __name__ == "__main__":
    main()
