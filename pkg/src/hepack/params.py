"""Backend parameter sets and the named profiles shipped with the package.

Profiles are keyed by name in a JSON config file; the built-in file carries
``mnist``, ``retina`` and ``desk``. The slot model is one flat cyclic vector
of ``ring_dimension / 2`` slots, so a single rotation primitive covers both
the simulator and the lattice backend.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources


@dataclass(frozen=True)
class BackendParams:
    """Shared parameter block for slot backends.

    ``security_claim_bits`` is recorded metadata only; nothing here estimates
    lattice security. ``fv_safe_depth`` is the empirically verified depth of
    the lattice backend at these parameters (0 = not verified).
    """

    ring_dimension: int
    coeff_modulus_bits: int
    plain_modulus: int
    slot_count: int
    depth_budget: int
    security_claim_bits: int = 0
    fv_safe_depth: int = 0
    # the rotation-free baseline gets by with a smaller modulus; 0 = same q
    interleaved_coeff_modulus_bits: int = 0
    name: str = ""

    def __post_init__(self):
        n = self.ring_dimension
        if n < 2 or (n & (n - 1)) != 0:
            raise ValueError(f"ring_dimension must be a power of two, got {n}")
        if self.plain_modulus < 3 or self.plain_modulus % 2 == 0:
            raise ValueError("plain_modulus must be an odd integer >= 3")
        if not (0 < self.slot_count <= n):
            raise ValueError("slot_count must be in [1, ring_dimension]")
        if self.depth_budget < 0:
            raise ValueError("depth_budget must be non-negative")

    @property
    def ciphertext_bytes(self) -> int:
        # two ring elements of ring_dimension coefficients, coeff_modulus_bits each
        return 2 * self.ring_dimension * self.coeff_modulus_bits // 8

    @property
    def interleaved_ciphertext_bytes(self) -> int:
        bits = self.interleaved_coeff_modulus_bits or self.coeff_modulus_bits
        return 2 * self.ring_dimension * bits // 8

    def param_hash(self) -> bytes:
        key = f"n={self.ring_dimension};q={self.coeff_modulus_bits};t={self.plain_modulus};s={self.slot_count}"
        return hashlib.sha256(key.encode()).digest()[:8]

    def replace(self, **kwargs) -> "BackendParams":
        fields = {
            "ring_dimension": self.ring_dimension,
            "coeff_modulus_bits": self.coeff_modulus_bits,
            "plain_modulus": self.plain_modulus,
            "slot_count": self.slot_count,
            "depth_budget": self.depth_budget,
            "security_claim_bits": self.security_claim_bits,
            "fv_safe_depth": self.fv_safe_depth,
            "interleaved_coeff_modulus_bits": self.interleaved_coeff_modulus_bits,
            "name": self.name,
        }
        fields.update(kwargs)
        return BackendParams(**fields)


def _params_from_entry(name: str, entry: dict) -> BackendParams:
    n = 1 << int(entry["ring_log2"])
    return BackendParams(
        ring_dimension=n,
        coeff_modulus_bits=int(entry["coeff_modulus_bits"]),
        plain_modulus=int(entry["plain_modulus"]),
        slot_count=n // 2,
        depth_budget=int(entry["depth_budget"]),
        security_claim_bits=int(entry.get("security_claim_bits", 0)),
        fv_safe_depth=int(entry.get("fv_safe_depth", 0)),
        interleaved_coeff_modulus_bits=int(entry.get("interleaved_coeff_modulus_bits", 0)),
        name=name,
    )


def load_profiles(path=None) -> dict[str, BackendParams]:
    """Load named parameter profiles from a JSON file (built-in by default)."""
    if path is None:
        text = resources.files("hepack").joinpath("profiles.json").read_text()
    else:
        with open(path) as fh:
            text = fh.read()
    raw = json.loads(text)
    return {name: _params_from_entry(name, entry) for name, entry in raw.items()}


_BUILTIN = None


def profile(name: str, *, depth_budget=None, slots_used=None) -> BackendParams:
    """Fetch a built-in profile by name, optionally overriding the depth budget."""
    global _BUILTIN
    if _BUILTIN is None:
        _BUILTIN = load_profiles()
    try:
        p = _BUILTIN[name]
    except KeyError:
        raise KeyError(f"unknown profile {name!r}; have {sorted(_BUILTIN)}") from None
    if depth_budget is not None:
        p = p.replace(depth_budget=depth_budget)
    return p


def profile_names() -> list[str]:
    global _BUILTIN
    if _BUILTIN is None:
        _BUILTIN = load_profiles()
    return sorted(_BUILTIN)
