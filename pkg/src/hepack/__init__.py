"""Compact-packing homomorphic linear algebra and encrypted CNN inference
with an instrumented operation-count cost model."""

from .engine import Ciphertext, CostReport, SimBackend, SlotBackend, centered
from .errors import (
    CapacityError,
    DepthBudgetError,
    DimensionError,
    FormatError,
    HepackError,
    MemoryCapError,
    ParamMismatchError,
    RangeCertificateError,
)
from .fv import FvBackend, FvParams, KeySet, fv_conformance, keygen, run_sequence
from .inference import (
    ConvSpec,
    FcSpec,
    NetworkSpec,
    PackedVector,
    SquareSpec,
    WeightRow,
    compile_conv,
    compile_fc,
    decrypt_logits,
    infer,
    interleaved_infer,
    layer_eval,
    pack_image,
    pack_image_interleaved,
    square_activation,
)
from .matrix import (
    EncMatrix,
    Layout,
    PlainMatrix,
    convert_layout,
    mat_add,
    mat_mul,
    mat_transpose,
    pack_matrix,
    plain_mat_mul,
    unpack_matrix,
)
from .models import (
    IntegerModel,
    RangeCertificate,
    load_model,
    plaintext_infer_float,
    plaintext_infer_int,
    quantize,
    range_check,
    save_model,
)
from .params import BackendParams, load_profiles, profile

__version__ = "0.1.0"
