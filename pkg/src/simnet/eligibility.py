"""Reputation-weighted cryptographic lotteries.

A participant draws one pseudo-random number per (epoch, task kind) by
hashing its secret key with the epoch index, the epoch's public randomness
beacon and the task kind flag.  The draw, scaled to [0, 1), is compared
against ``multiplier * influence``: the draw is fixed, so raising the
multiplier (backup mining tiers, task refill rounds) monotonically relaxes
the lottery without re-rolling it.

Influence is the participant's reputation share over the engaged set, so the
probability of winning any lottery is exactly proportional to reputation.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction
from typing import TYPE_CHECKING, Protocol, Sequence

from .errors import NoHistory
from .hashing import DIGEST_BITS, DIGEST_BYTES, digest
from .identity import ParticipantId
from .reputation import ReputationLedger, engaged_set

if TYPE_CHECKING:
    from .rad import RadRequest


class TaskKind(enum.Enum):
    """Task type flag mixed into the draw, so kinds draw independently."""

    MINE = b"\x01"
    RETRIEVE_ATTEST = b"\x02"
    DELIVER = b"\x03"

    @property
    def tag(self) -> bytes:
        return self.value


class DagView(Protocol):
    """The slice of the ledger the beacon derivation needs."""

    def block_digests_at(self, checkpoint: int) -> Sequence[bytes]: ...


@dataclass(frozen=True)
class RandomBeacon:
    """Public epoch randomness; a pure function of the preceding blocks."""

    epoch: int
    value: bytes

    def __post_init__(self) -> None:
        if len(self.value) != DIGEST_BYTES:
            raise ValueError("beacon value must be 32 bytes")


@dataclass(frozen=True)
class EligibilityProof:
    """Publishable evidence of winning a lottery draw.

    The signature digest is the keyed-hash draw itself.  Within this
    single-process simulation proofs are trusted by construction; a verifier
    re-checks the threshold arithmetic and the structural binding to the
    epoch, beacon and task kind.
    """

    participant: bytes
    epoch: int
    kind: TaskKind
    signature_digest: bytes
    tier: int = 1

    def __post_init__(self) -> None:
        if self.tier < 0:
            raise ValueError("tier must be non-negative")


def influence_map(rep: ReputationLedger) -> dict[bytes, Fraction]:
    """Influence of every engaged participant; the values sum to exactly 1."""
    engaged = engaged_set(rep)
    total = sum((score for _, score in engaged), Fraction(0))
    if total == 0:
        return {}
    return {pk: score / total for pk, score in engaged}


def influence(rep: ReputationLedger, public_key: bytes) -> Fraction:
    """Reputation share of ``public_key`` over the engaged set; 0 outside it."""
    return influence_map(rep).get(public_key, Fraction(0))


def epoch_randomness(dag: DagView, epoch: int) -> RandomBeacon:
    """Beacon for ``epoch``, derived from the nearest earlier non-empty checkpoint.

    The digests of that checkpoint's blocks are hashed in ascending order
    (so the beacon is independent of block arrival order) together with the
    target epoch, which keeps beacons distinct across empty stretches.
    """
    if epoch < 1:
        raise NoHistory("no randomness exists before epoch 1")
    for checkpoint in range(epoch - 1, -1, -1):
        digests = sorted(dag.block_digests_at(checkpoint))
        if digests:
            return RandomBeacon(epoch=epoch, value=digest(*digests, epoch))
    raise NoHistory("ledger holds no blocks below epoch %d" % epoch)


def lottery_draw(participant: ParticipantId, epoch: int, beacon: RandomBeacon,
                 kind: TaskKind) -> bytes:
    """The deterministic keyed-hash draw; requires the secret key."""
    if participant.secret_key is None:
        raise ValueError("lottery draws require the secret key")
    return digest(participant.secret_key, epoch, beacon.value, kind.tag)


def check_eligibility(
    participant: ParticipantId,
    epoch: int,
    beacon: RandomBeacon,
    kind: TaskKind,
    multiplier: int | Fraction,
    inf: Fraction,
) -> EligibilityProof | None:
    """Return a proof when the draw clears ``multiplier * influence``, else None."""
    if multiplier < 0:
        raise ValueError("multiplier must be non-negative")
    draw = lottery_draw(participant, epoch, beacon, kind)
    # draw / 2^256 <= m * p/q  <=>  draw * q <= m * p * 2^256, exactly and
    # without reducing the product to lowest terms.
    mult = Fraction(multiplier)
    numerator = mult.numerator * inf.numerator
    denominator = mult.denominator * inf.denominator
    drawn = int.from_bytes(draw, "big")
    if drawn * denominator <= numerator << DIGEST_BITS:
        return EligibilityProof(
            participant=participant.public_key,
            epoch=epoch,
            kind=kind,
            signature_digest=draw,
            tier=int(multiplier),
        )
    return None


def verify_proof(
    proof: EligibilityProof,
    beacon: RandomBeacon,
    rep: ReputationLedger,
    multiplier: int | Fraction,
    expected_kind: TaskKind | None = None,
) -> bool:
    """Re-check a proof from public data.

    The threshold comparison is exact rational arithmetic over the carried
    signature digest; the structural checks bind the proof to the beacon's
    epoch and, when given, the expected task kind.  The signature digest
    itself cannot be recomputed without the secret key; that gap is the
    documented simulation stand-in for deterministic signatures.
    """
    if len(proof.signature_digest) != DIGEST_BYTES:
        return False
    if proof.epoch != beacon.epoch:
        return False
    if expected_kind is not None and proof.kind is not expected_kind:
        return False
    threshold = Fraction(multiplier) * influence(rep, proof.participant)
    drawn = int.from_bytes(proof.signature_digest, "big")
    return drawn * threshold.denominator <= threshold.numerator << DIGEST_BITS


def assign_task(
    request: "RadRequest",
    epoch: int,
    beacon: RandomBeacon,
    rep: ReputationLedger,
    *,
    required: int | None = None,
    exclude: frozenset[bytes] = frozenset(),
    kind: TaskKind = TaskKind.RETRIEVE_ATTEST,
) -> tuple[tuple[EligibilityProof, ...], int]:
    """One lottery round of witness assignment for a request.

    ``required`` is the multiplier for this round: the replication factor on
    the first round, the remaining deficit on refill rounds.  Participants in
    ``exclude`` (already assigned in earlier rounds) do not re-enter.  Returns
    the winning proofs sorted by participant key and the remaining deficit;
    a positive deficit re-enters the lottery next epoch.
    """
    if required is None:
        required = request.replication
    if required < 0:
        raise ValueError("required count must be non-negative")
    influences = influence_map(rep)
    roster = {p.public_key: p for p in rep.participants}
    proofs: list[EligibilityProof] = []
    for pk in sorted(set(influences) - exclude):
        participant = roster.get(pk)
        if participant is None or participant.secret_key is None:
            continue
        proof = check_eligibility(participant, epoch, beacon, kind,
                                  required, influences[pk])
        if proof is not None:
            proofs.append(proof)
    deficit = max(0, required - len(proofs))
    return tuple(sorted(proofs, key=lambda p: p.participant)), deficit
