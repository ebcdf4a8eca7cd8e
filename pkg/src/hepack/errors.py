"""Exception types shared across the package."""


class HepackError(Exception):
    """Base class for all library errors."""


class DimensionError(HepackError):
    """Vector/matrix shape does not match what the operation requires."""


class ParamMismatchError(HepackError):
    """Operands were produced under different backend parameters."""


class CapacityError(HepackError):
    """A resource budget (depth, memory, slot capacity) refuses the request."""


class DepthBudgetError(CapacityError):
    """Multiplicative depth budget exhausted; models decryption failure."""


class MemoryCapError(CapacityError):
    """Estimated ciphertext memory exceeds the configured cap."""


class RangeCertificateError(CapacityError):
    """Worst-case value bound exceeds what the plaintext modulus can hold."""


class FormatError(HepackError):
    """Malformed serialized file (ciphertext, key, model or image)."""
