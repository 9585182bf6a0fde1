"""Single hash function and canonical field serialization.

Every digest in the system is produced here, so that blocks, transactions,
commitments and lottery draws all share one 256-bit hash space.  Canonical
serialization is length-prefixed field concatenation: each field is encoded
as a 4-byte big-endian length followed by its payload, and integers are
fixed-width big-endian.  This makes every serialized structure byte-stable
across runs and platforms.
"""

from __future__ import annotations

import hashlib

DIGEST_BITS = 256
DIGEST_BYTES = 32
DIGEST_SPACE = 1 << DIGEST_BITS

_U32_MAX = (1 << 32) - 1
_U64_MAX = (1 << 64) - 1


def enc_int(value: int, width: int = 8) -> bytes:
    """Fixed-width big-endian encoding of a non-negative integer."""
    if value < 0:
        raise ValueError("cannot encode negative integer: %d" % value)
    return value.to_bytes(width, "big")


def enc_u64(value: int) -> bytes:
    if value > _U64_MAX:
        raise ValueError("integer exceeds u64 range: %d" % value)
    return enc_int(value, 8)


def canonical(*fields: bytes | int) -> bytes:
    """Serialize fields in declared order, each length-prefixed."""
    parts = []
    for field in fields:
        payload = field.to_bytes(8, "big") if isinstance(field, int) else field
        size = len(payload)
        if size > _U32_MAX:
            raise ValueError("field too large to serialize")
        parts.append(size.to_bytes(4, "big"))
        parts.append(payload)
    return b"".join(parts)


def digest(*fields: bytes | int) -> bytes:
    """256-bit digest of the canonical serialization of ``fields``."""
    return hashlib.sha256(canonical(*fields)).digest()


def digest_int(*fields: bytes | int) -> int:
    """Digest interpreted as an unsigned integer in [0, 2^256)."""
    return int.from_bytes(digest(*fields), "big")
