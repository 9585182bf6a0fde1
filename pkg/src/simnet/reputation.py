"""Conserved reputation scores with progressive demurrage.

Reputation is a fixed pool of points: the simulated population of N keys
starts with score 1 each and the total never changes.  Scores above neutral
decay every epoch by ``score * decay ** log10(score)``, so large stakes decay
proportionally faster.  Decayed and forfeited points flow into a
redistribution pool that is split equally among the epoch's task fulfillers;
if nobody fulfilled a task the pool carries over, it is never destroyed.

Scores are exact rationals.  The demurrage power is irrational, so it is
evaluated in 28-digit decimal arithmetic and snapped *down* to 12 significant
digits; the snap difference is part of the demurrage loss and therefore lands
in the pool, keeping the conserved total exact.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from decimal import Decimal, ROUND_FLOOR, localcontext
from fractions import Fraction
from typing import Iterator, Mapping

from .identity import ParticipantId

log = logging.getLogger(__name__)

NEUTRAL = Fraction(1)
DEFAULT_DECAY = Fraction(99, 100)
DEFAULT_ASSIMILATION_DELTA = Fraction(1, 10**6)
DEFAULT_PENALTY_RATE = Fraction(1, 5)

_SNAP_DIGITS = 12
_DEMURRAGE_PRECISION = 28


@dataclass(frozen=True)
class EpochVerdict:
    """Outcome of one epoch's claim resolution, as reputation sees it.

    ``dishonest`` maps a participant to its deviation in [0, 1];
    ``task_fulfillers`` are the honest witnesses and bridges that actually
    completed this epoch's tasks and share the redistribution pool.
    """

    honest: frozenset[bytes] = frozenset()
    dishonest: Mapping[bytes, Fraction] = field(default_factory=dict)
    task_fulfillers: frozenset[bytes] = frozenset()

    def __post_init__(self) -> None:
        overlap = self.honest & set(self.dishonest)
        if overlap:
            raise ValueError("participants cannot be both honest and dishonest")
        for deviation in self.dishonest.values():
            if not 0 <= deviation <= 1:
                raise ValueError("deviation must lie in [0, 1]")


@dataclass(frozen=True)
class ReputationLedger:
    """Scores for a finite simulated population.

    Only scores different from the neutral 1 are stored.  ``pool`` carries
    redistribution points between epochs when an epoch had no fulfillers.
    """

    participants: tuple[ParticipantId, ...]
    scores: Mapping[bytes, Fraction] = field(default_factory=dict)
    decay: Fraction = DEFAULT_DECAY
    assimilation_delta: Fraction = DEFAULT_ASSIMILATION_DELTA
    pool: Fraction = Fraction(0)

    def __post_init__(self) -> None:
        if not 0 <= self.decay <= 1:
            raise ValueError("decay rate must lie in [0, 1]")
        keys = {p.public_key for p in self.participants}
        if len(keys) != len(self.participants):
            raise ValueError("duplicate participant keys")
        for pk, score in self.scores.items():
            if pk not in keys:
                raise ValueError("score entry for unknown participant")
            if score <= 0:
                raise ValueError("scores must be positive")

    @classmethod
    def genesis(cls, participants: tuple[ParticipantId, ...],
                decay: Fraction = DEFAULT_DECAY,
                assimilation_delta: Fraction = DEFAULT_ASSIMILATION_DELTA,
                ) -> "ReputationLedger":
        """All-neutral ledger; participants sorted by public key."""
        roster = tuple(sorted(participants, key=lambda p: p.public_key))
        return cls(participants=roster, decay=decay,
                   assimilation_delta=assimilation_delta)

    @property
    def population(self) -> int:
        return len(self.participants)

    def score(self, public_key: bytes) -> Fraction:
        return self.scores.get(public_key, NEUTRAL)

    def conserved_total(self) -> Fraction:
        """Sum of all scores plus the carried pool; invariant over updates."""
        stored = sum(self.scores.values(), Fraction(0))
        return stored + (self.population - len(self.scores)) * NEUTRAL + self.pool

    def iter_scores(self) -> Iterator[tuple[bytes, Fraction]]:
        for participant in self.participants:
            yield participant.public_key, self.score(participant.public_key)


def _snap_down(value: Decimal) -> Fraction:
    """Floor a positive decimal to 12 significant digits, as an exact rational."""
    shift = _SNAP_DIGITS - 1 - value.adjusted()
    quantum = Decimal(1).scaleb(-shift)
    snapped = value.quantize(quantum, rounding=ROUND_FLOOR)
    return Fraction(snapped)


def apply_demurrage(score: Fraction, decay: Fraction = DEFAULT_DECAY) -> Fraction:
    """One epoch of demurrage: ``score * decay ** log10(score)``.

    Only scores above neutral decay; the formula would *increase* sub-neutral
    scores through its negative exponent, so those are returned unchanged.
    The result is never snapped below neutral.
    """
    if score <= NEUTRAL:
        return score
    if decay == 1:
        return score
    with localcontext() as ctx:
        ctx.prec = _DEMURRAGE_PRECISION
        base = Decimal(score.numerator) / Decimal(score.denominator)
        rate = Decimal(decay.numerator) / Decimal(decay.denominator)
        decayed = base * rate ** base.log10()
    return max(_snap_down(decayed), NEUTRAL)


def assimilate(ledger: ReputationLedger) -> ReputationLedger:
    """Snap scores just above neutral back to 1, pooling the surplus.

    Bounds the engaged set without destroying points: every score in
    (1, 1 + delta] becomes exactly 1 and the difference joins the pool.
    """
    delta = ledger.assimilation_delta
    surplus = Fraction(0)
    scores: dict[bytes, Fraction] = {}
    for pk, score in ledger.scores.items():
        if NEUTRAL < score <= NEUTRAL + delta:
            surplus += score - NEUTRAL
        elif score != NEUTRAL:
            scores[pk] = score
    if surplus == 0 and len(scores) == len(ledger.scores):
        return ledger
    return replace(ledger, scores=scores, pool=ledger.pool + surplus)


def engaged_set(ledger: ReputationLedger) -> tuple[tuple[bytes, Fraction], ...]:
    """Participants with score above neutral, sorted by key.

    When nobody is above neutral (genesis, or after a reset) the lottery
    would starve, so the fallback returns every active participant still at
    the neutral score, weighted at 1.
    """
    engaged = tuple(sorted(
        (pk, score) for pk, score in ledger.scores.items() if score > NEUTRAL
    ))
    if engaged:
        return engaged
    return tuple(
        (p.public_key, NEUTRAL)
        for p in ledger.participants
        if ledger.score(p.public_key) == NEUTRAL
    )


def epoch_update(ledger: ReputationLedger, verdict: EpochVerdict,
                 penalty_rate: Fraction = DEFAULT_PENALTY_RATE,
                 ) -> ReputationLedger:
    """Apply one epoch of penalties, demurrage and redistribution.

    Order matters and is fixed: dishonest participants first forfeit
    ``penalty_rate * deviation * score`` to the pool, then every score still
    above neutral pays demurrage into the pool, then the pool is split
    equally among the task fulfillers, and finally near-neutral scores are
    assimilated.  The conserved total is exact at every step.
    """
    known = {p.public_key for p in ledger.participants}
    named = set(verdict.honest) | set(verdict.dishonest) | set(verdict.task_fulfillers)
    unknown = named - known
    if unknown:
        raise ValueError("verdict names %d unknown participants" % len(unknown))

    pool = ledger.pool
    scores = dict(ledger.scores)

    def current(pk: bytes) -> Fraction:
        return scores.get(pk, NEUTRAL)

    for pk in sorted(verdict.dishonest):
        loss = penalty_rate * verdict.dishonest[pk] * current(pk)
        scores[pk] = current(pk) - loss
        pool += loss

    for pk in sorted(scores):
        old = scores[pk]
        if old > NEUTRAL:
            new = apply_demurrage(old, ledger.decay)
            scores[pk] = new
            pool += old - new

    fulfillers = sorted(verdict.task_fulfillers)
    if fulfillers and pool > 0:
        share = pool / len(fulfillers)
        for pk in fulfillers:
            scores[pk] = current(pk) + share
        pool = Fraction(0)
    elif pool > 0:
        # Signaled, not fatal: the returned ledger carries the pool forward.
        log.debug("no task fulfillers this epoch; pool of %s carried over",
                  float(pool))

    scores = {pk: s for pk, s in scores.items() if s != NEUTRAL}
    updated = replace(ledger, scores=scores, pool=pool)
    return assimilate(updated)
