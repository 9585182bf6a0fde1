"""Participant identities for the simulation.

Real key pairs and signatures are out of scope; the stand-in scheme derives
the public key as the hash of a 256-bit secret.  Lottery draws consume the
secret key through a keyed hash, which preserves the determinism, uniformity
and secrecy the protocol relies on, at simulation grade.
"""

from __future__ import annotations

from dataclasses import dataclass

from .hashing import DIGEST_BYTES, digest


@dataclass(frozen=True, order=True)
class ParticipantId:
    """A participant key pair; ``secret_key`` is None for verify-only views."""

    public_key: bytes
    secret_key: bytes | None = None

    def __post_init__(self) -> None:
        if len(self.public_key) != DIGEST_BYTES:
            raise ValueError("public key must be 32 bytes")
        if self.secret_key is not None and digest(self.secret_key) != self.public_key:
            raise ValueError("public key is not the hash of the secret key")

    @classmethod
    def from_secret(cls, secret_key: bytes) -> "ParticipantId":
        return cls(public_key=digest(secret_key), secret_key=secret_key)

    @classmethod
    def derive(cls, seed: int, index: int) -> "ParticipantId":
        """Deterministic key for simulated participant ``index`` under ``seed``."""
        return cls.from_secret(digest(b"participant", seed, index))

    def public(self) -> "ParticipantId":
        return ParticipantId(public_key=self.public_key)

    def short(self) -> str:
        return self.public_key[:4].hex()
