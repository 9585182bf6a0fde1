"""Demurrage, redistribution and conservation of reputation points."""

from __future__ import annotations

from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from simnet.identity import ParticipantId
from simnet.reputation import (
    EpochVerdict,
    ReputationLedger,
    apply_demurrage,
    assimilate,
    engaged_set,
    epoch_update,
)

D = Fraction(99, 100)


def _roster(n: int) -> tuple[ParticipantId, ...]:
    return tuple(sorted((ParticipantId.derive(0, i) for i in range(n)),
                        key=lambda p: p.public_key))


def _ledger(n: int = 4, scores: dict | None = None, **kw) -> ReputationLedger:
    roster = _roster(n)
    mapped = {}
    for index, score in (scores or {}).items():
        mapped[roster[index].public_key] = Fraction(score)
    return ReputationLedger(participants=roster, scores=mapped, **kw)


# --- apply_demurrage --------------------------------------------------------

def test_demurrage_published_value_1000():
    assert abs(apply_demurrage(Fraction(1000), D) - Fraction("970.29")) < Fraction("0.01")


def test_demurrage_published_value_100():
    assert abs(apply_demurrage(Fraction(100), D) - Fraction("98.01")) <= Fraction("0.01")


def test_demurrage_neutral_fixed_point():
    assert apply_demurrage(Fraction(1), D) == 1
    assert apply_demurrage(Fraction(1), Fraction(1, 2)) == 1


def test_demurrage_sub_neutral_unchanged():
    # The raw formula would inflate sub-neutral scores; they must not move.
    assert apply_demurrage(Fraction(1, 2), D) == Fraction(1, 2)


def test_demurrage_identity_at_decay_one():
    assert apply_demurrage(Fraction(1234, 7), Fraction(1)) == Fraction(1234, 7)


@given(st.integers(2, 10**6), st.integers(1, 999))
@settings(max_examples=60, deadline=None)
def test_demurrage_monotone(numerator, decay_millis):
    score = Fraction(numerator + 1, 1) + Fraction(1, 7)
    decay = Fraction(decay_millis, 1000)
    assert apply_demurrage(score, decay) < score


@given(st.integers(2, 500), st.integers(2, 500))
@settings(max_examples=60, deadline=None)
def test_demurrage_progressive(a, b):
    # Larger scores lose at least as large a relative fraction.
    hi, lo = Fraction(max(a, b) + 1), Fraction(min(a, b) + 1)
    rel_hi = apply_demurrage(hi, D) / hi
    rel_lo = apply_demurrage(lo, D) / lo
    assert rel_hi <= rel_lo + Fraction(1, 10**9)


def test_demurrage_500_epochs_matches_published_divisor():
    score = Fraction(1000)
    for _ in range(500):
        score = apply_demurrage(score, D)
    target = Fraction(1000, 461)
    assert abs(score - target) / target < Fraction(1, 100)


# --- assimilate --------------------------------------------------------------

def test_assimilate_pools_half_delta():
    delta = Fraction(1, 10**6)
    ledger = _ledger(3, {0: 1 + delta / 2})
    out = assimilate(ledger)
    assert out.score(out.participants[0].public_key) == 1
    assert out.pool == delta / 2


def test_assimilate_leaves_neutral():
    ledger = _ledger(3)
    assert assimilate(ledger) is ledger


def test_assimilate_leaves_above_threshold():
    delta = Fraction(1, 10**6)
    ledger = _ledger(3, {1: 1 + 2 * delta})
    out = assimilate(ledger)
    assert out.score(out.participants[1].public_key) == 1 + 2 * delta


def test_assimilate_idempotent():
    delta = Fraction(1, 10**6)
    ledger = _ledger(5, {0: 1 + delta / 3, 2: 7, 3: Fraction(1, 2)})
    once = assimilate(ledger)
    twice = assimilate(once)
    assert once.scores == twice.scores and once.pool == twice.pool


# --- engaged set --------------------------------------------------------------

def test_engaged_set_above_neutral_only():
    ledger = _ledger(3, {0: 3, 2: Fraction(1, 2)})
    engaged = engaged_set(ledger)
    assert engaged == ((ledger.participants[0].public_key, Fraction(3)),)


def test_engaged_set_neutral_fallback():
    ledger = _ledger(3)
    engaged = engaged_set(ledger)
    assert len(engaged) == 3
    assert all(score == 1 for _, score in engaged)


def test_engaged_set_empty_population():
    ledger = ReputationLedger(participants=())
    assert engaged_set(ledger) == ()


# --- epoch update --------------------------------------------------------------

def test_epoch_update_all_honest_neutral_is_noop():
    ledger = _ledger(4)
    verdict = EpochVerdict(honest=frozenset(p.public_key
                                            for p in ledger.participants))
    out = epoch_update(ledger, verdict)
    assert out.scores == {} and out.pool == 0


def test_epoch_update_demurrage_only_redistribution():
    # All witnesses honest; engaged scores pay demurrage which is split
    # evenly among the fulfillers.
    ledger = _ledger(4, {0: 100})
    pks = [p.public_key for p in ledger.participants]
    fulfillers = frozenset((pks[1], pks[2]))
    verdict = EpochVerdict(honest=frozenset(pks), task_fulfillers=fulfillers)
    out = epoch_update(ledger, verdict)
    decayed = apply_demurrage(Fraction(100), ledger.decay)
    lost = Fraction(100) - decayed
    assert out.score(pks[0]) == decayed
    assert out.score(pks[1]) == 1 + lost / 2
    assert out.score(pks[2]) == 1 + lost / 2
    assert out.conserved_total() == ledger.conserved_total() == 103


def test_epoch_update_liar_penalty_derived():
    # One liar (deviation 1, score 10, penalty rate 0.2) and two honest
    # fulfillers: the liar forfeits 2 points, then pays demurrage on 8; each
    # fulfiller gains half the pool.  Checked against independent arithmetic.
    ledger = _ledger(4, {0: 10})
    pks = [p.public_key for p in ledger.participants]
    verdict = EpochVerdict(
        honest=frozenset(pks[1:3]),
        dishonest={pks[0]: Fraction(1)},
        task_fulfillers=frozenset(pks[1:3]))
    out = epoch_update(ledger, verdict, penalty_rate=Fraction(1, 5))
    after_penalty = Fraction(10) - Fraction(1, 5) * 1 * 10
    assert after_penalty == 8
    decayed = apply_demurrage(after_penalty, ledger.decay)
    pool = Fraction(2) + (after_penalty - decayed)
    assert out.score(pks[0]) == decayed
    assert out.score(pks[1]) == 1 + pool / 2
    assert out.score(pks[2]) == 1 + pool / 2
    assert out.score(pks[3]) == 1
    # Independent summation oracle: nothing created or destroyed.
    total = sum((score for _, score in out.iter_scores()), Fraction(0))
    assert total + out.pool == ledger.conserved_total() == 13


def test_epoch_update_no_fulfillers_carries_pool():
    ledger = _ledger(3, {0: 100})
    verdict = EpochVerdict()
    out = epoch_update(ledger, verdict)
    assert out.pool > 0
    assert out.conserved_total() == ledger.conserved_total() == 102
    # The carried pool is paid out at the next opportunity.
    pks = [p.public_key for p in out.participants]
    next_out = epoch_update(out, EpochVerdict(task_fulfillers=frozenset([pks[1]])))
    assert next_out.pool == 0
    assert next_out.conserved_total() == 102


def test_epoch_update_rejects_unknown_participant():
    ledger = _ledger(2)
    with pytest.raises(ValueError):
        epoch_update(ledger, EpochVerdict(honest=frozenset([b"\x01" * 32])))


@given(st.lists(st.tuples(st.integers(0, 5), st.integers(0, 3),
                          st.booleans()), min_size=1, max_size=8))
@settings(max_examples=40, deadline=None)
def test_conservation_over_random_update_sequences(moves):
    ledger = _ledger(6, {0: 1000, 1: 10, 2: Fraction(3, 2)})
    start_total = ledger.conserved_total()
    pks = [p.public_key for p in ledger.participants]
    for liar, fulfillers, do_assimilate in moves:
        verdict = EpochVerdict(
            dishonest={pks[liar]: Fraction(1, 3)},
            task_fulfillers=frozenset(pks[1:1 + fulfillers]) - {pks[liar]})
        ledger = epoch_update(ledger, verdict)
        if do_assimilate:
            ledger = assimilate(ledger)
        assert ledger.conserved_total() == start_total


def test_scores_stay_positive_under_full_penalty():
    ledger = _ledger(3, {0: 10})
    pk = ledger.participants[0].public_key
    for _ in range(50):
        verdict = EpochVerdict(dishonest={pk: Fraction(1)})
        ledger = epoch_update(ledger, verdict)
    assert 0 < ledger.score(pk) < 1
