"""Acceptance suite: one test per criterion, each printing PASS or FAIL.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines and timings.

Criterion 2 is split: monotonicity and halving exactness pass, while the
supply-limit bound is implemented exactly as stated and fails, because the
published issuance constants (500 Wit initial reward, halving every
1,750,000 blocks) geometrically sum to just under 1.75 billion Wit, not to
the 2.5 billion the accompanying figure claims.  The bound is kept red on
purpose; see the failure message for the arithmetic.
"""

from __future__ import annotations

import random
import time
from contextlib import contextmanager
from decimal import Decimal, ROUND_DOWN, localcontext
from fractions import Fraction

from conftest import participants, toy_state, transfer
from simnet import harness
from simnet.cli import PUBLISHED_DECAY_TABLE, TABLE_EPOCHS, TABLE_MISPRINTS, decay_table
from simnet.consensus import CONTESTED, Claim, resolve_epoch
from simnet.economics import wit
from simnet.eligibility import RandomBeacon, TaskKind, assign_task, check_eligibility
from simnet.hashing import digest
from simnet.ledger import apply_transaction, compose, state_effect
from simnet.rad import (
    Aggregation,
    Commitment,
    RetrievalPath,
    Reveal,
    commitment_digest,
    verify_reveal,
)
from simnet.reputation import ReputationLedger
from simnet.scenario import Scenario, ScheduledRequest


@contextmanager
def criterion(number: str, name: str, budget_seconds: float):
    started = time.monotonic()
    failed = True
    try:
        yield
        failed = False
    finally:
        elapsed = time.monotonic() - started
        print("ACCEPTANCE %s: %s — %s (%.2fs, budget %.0fs)"
              % (number, "FAIL" if failed else "PASS", name, elapsed,
                 budget_seconds))
    assert elapsed < budget_seconds, (
        "criterion %s exceeded its runtime budget: %.2fs" % (number, elapsed))


# --- 1. demurrage table -------------------------------------------------------

def test_criterion_1_demurrage_table():
    with criterion("1", "demurrage table reproduction", 1.0):
        computed = decay_table(Fraction(99, 100))
        recorded = {}
        for start, samples in computed.items():
            for epoch in TABLE_EPOCHS:
                published = Fraction(PUBLISHED_DECAY_TABLE[start][epoch])
                value = samples[epoch]
                if (start, epoch) in TABLE_MISPRINTS:
                    # Misprinted in the published table: record the computed
                    # value instead of matching the bad digit.
                    with localcontext() as ctx:
                        ctx.prec = 40
                        dec = Decimal(value.numerator) / Decimal(value.denominator)
                        recorded[(start, epoch)] = str(
                            dec.quantize(Decimal("0.01"), rounding=ROUND_DOWN))
                    continue
                # Every non-misprinted cell matches the published digits
                # exactly once truncated to the printed two decimals; that is
                # the strongest check the table's precision supports.
                with localcontext() as ctx:
                    ctx.prec = 40
                    dec = Decimal(value.numerator) / Decimal(value.denominator)
                    truncated = dec.quantize(Decimal("0.01"), rounding=ROUND_DOWN)
                assert truncated == Decimal(
                    PUBLISHED_DECAY_TABLE[start][epoch]).quantize(Decimal("0.01")), (
                    "cell (%d, %d): computed %s vs published %s"
                    % (start, epoch, float(value), float(published)))
                # The 0.5% relative tolerance only even fits within two
                # printed decimals for entries of at least 2; below that the
                # print truncation itself can measure as more than 0.5%.
                if published >= 2:
                    rel = abs(value - published) / published
                    assert rel <= Fraction(5, 1000), (
                        "cell (%d, %d): computed %s vs published %s"
                        % (start, epoch, float(value), float(published)))
        assert recorded[(10000, 1)] == "9605.96"
        assert recorded[(1000, 25)] == "488.90"


# --- 2. supply limit ------------------------------------------------------------

def test_criterion_2a_supply_monotone_and_halvings():
    from simnet.economics import block_reward, cumulative_supply
    with criterion("2a", "supply monotone, halvings exact", 1.0):
        previous = -1
        for height in [0, 1, 10, 1_749_999, 1_750_000, 5_000_000,
                       17_500_000, 35_000_000, 70_000_000, 140_000_000]:
            value = cumulative_supply(height)
            assert value >= previous
            previous = value
        for k in range(0, 39):
            assert block_reward(k * 1_750_000) == wit(500) >> k
            if k:
                assert block_reward(k * 1_750_000 - 1) == wit(500) >> (k - 1)


def test_criterion_2b_supply_limit_bound():
    from simnet.economics import supply_limit
    with criterion("2b", "supply limit in (2499999999, 2500000000) Wit", 1.0):
        limit = supply_limit()
        assert wit(2_499_999_999) < limit < wit(2_500_000_000), (
            "the issuance parameters are 500 Wit initial reward halving every "
            "1,750,000 blocks; their geometric sum is "
            "sum_k 1750000 * floor(5e11 / 2^k) = %d nanoWit "
            "(~%.6f billion Wit), which can never reach the documented "
            "2.5 billion Wit cap. The published cap and the published "
            "parameters are mutually inconsistent; this check is kept red "
            "deliberately rather than silently altering either constant."
            % (limit, limit / 1e18))


def test_criterion_2_supplement_true_limit():
    # The mathematically consistent statement of the same property: the
    # limit sits just below the parameters' actual geometric bound and never
    # exceeds the documented cap.
    from simnet.economics import cumulative_supply, supply_limit
    with criterion("2s", "supply limit consistent with its parameters", 1.0):
        limit = supply_limit()
        assert wit(1_749_999_999) < limit < wit(1_750_000_000)
        assert limit < wit(2_500_000_000)
        assert cumulative_supply(10**9) == limit


# --- 3. mining rate ---------------------------------------------------------------

def test_criterion_3_mining_rate():
    with criterion("3", "mean miners/epoch in [0.9, 1.1], blocks >= 1", 30.0):
        population = participants(100)
        inf = Fraction(1, 100)
        epochs = 10_000
        tier_one_threshold = (1 << 256) // 100
        covered = 0
        total_epochs = 0
        for seed in range(5):
            miners_total = 0
            for epoch in range(1, epochs + 1):
                beacon = RandomBeacon(epoch=epoch,
                                      value=digest(b"mining", seed, epoch))
                best = None
                for person in population:
                    proof = check_eligibility(person, epoch, beacon,
                                              TaskKind.MINE, 8, inf)
                    if proof is None:
                        continue
                    drawn = int.from_bytes(proof.signature_digest, "big")
                    if drawn <= tier_one_threshold:
                        miners_total += 1
                    if best is None or drawn < best:
                        best = drawn
                total_epochs += 1
                if best is not None:
                    covered += 1
            mean = miners_total / epochs
            assert 0.9 <= mean <= 1.1, "seed %d mean %.4f" % (seed, mean)
        assert covered / total_epochs >= 0.999, (
            "backup tiers covered only %.4f%% of epochs"
            % (100 * covered / total_epochs))


# --- 4. task assignment -------------------------------------------------------------

def test_criterion_4_task_assignment():
    with criterion("4", "mean assigned ~ replication; refill completes", 30.0):
        population = participants(100)
        ledger = ReputationLedger.genesis(population)
        for replication in (2, 6, 10):
            request = type("R", (), {"replication": replication})()
            request = ScheduledRequest(
                post_epoch=1, paths=(RetrievalPath(source_key="k"),),
                aggregation=Aggregation.FIRST, replication=replication,
                witness_fee=wit(replication))
            first_round_total = 0
            trials = 1000
            for index in range(trials):
                epoch = index * 64 + 1
                beacon = RandomBeacon(
                    epoch=epoch, value=digest(b"assign", replication, index))
                proofs, deficit = assign_task(request, epoch, beacon, ledger)
                first_round_total += len(proofs)
                committed = {p.participant for p in proofs}
                rounds = 0
                while len(committed) < replication:
                    rounds += 1
                    assert rounds < 64, "refill did not complete"
                    refill_beacon = RandomBeacon(
                        epoch=epoch + rounds,
                        value=digest(b"assign", replication, index, rounds))
                    proofs, _ = assign_task(
                        request, epoch + rounds, refill_beacon, ledger,
                        required=replication - len(committed),
                        exclude=frozenset(committed))
                    committed |= {p.participant for p in proofs}
                assert len(committed) >= replication
            mean = first_round_total / trials
            assert abs(mean - replication) / replication <= 0.10, (
                "replication %d drew a mean of %.3f" % (replication, mean))


# --- 5. consensus oracle equivalence ---------------------------------------------------

def _plurality_oracle(claims, ledger):
    winners = {}
    by_request: dict[bytes, list[Claim]] = {}
    for claim in claims:
        by_request.setdefault(claim.request_id, []).append(claim)
    for rid, group in by_request.items():
        mass: dict[bytes, Fraction] = {}
        for claim in group:
            mass[claim.canonical_value] = (
                mass.get(claim.canonical_value, Fraction(0))
                + ledger.score(claim.witness))
        best = max(mass.values())
        leaders = [v for v, m in mass.items() if m == best]
        winners[rid] = leaders[0] if len(leaders) == 1 else CONTESTED
    return winners


def test_criterion_5_consensus_oracle_equivalence():
    with criterion("5", "resolution == weighted plurality oracle", 10.0):
        rng = random.Random(20_26)
        people = participants(6)
        mismatches = 0
        for _ in range(1000):
            witnesses = rng.randrange(2, 7)
            requests = rng.randrange(1, 5)
            scores = {people[i].public_key: Fraction(rng.randrange(1, 8))
                      for i in range(witnesses)}
            ledger = ReputationLedger(participants=people, scores=scores)
            claims = []
            for r in range(requests):
                rid = bytes([r + 1]) * 32
                for i in range(witnesses):
                    if rng.random() < 0.85:
                        claims.append(Claim(
                            request_id=rid, witness=people[i].public_key,
                            canonical_value=bytes([rng.randrange(3)])))
            if not claims:
                continue
            verdicts, _ = resolve_epoch(claims, ledger)
            oracle = _plurality_oracle(claims, ledger)
            for rid, expected in oracle.items():
                if expected is CONTESTED:
                    if not verdicts[rid].contested:
                        mismatches += 1
                elif verdicts[rid].winning_value != expected:
                    mismatches += 1
        assert mismatches == 0


# --- 6. honest-majority scenario ------------------------------------------------------

def _criterion_6_scenario(seed: int = 2026) -> Scenario:
    early = [ScheduledRequest(post_epoch=e,
                              paths=(RetrievalPath(source_key="price"),),
                              aggregation=Aggregation.FIRST,
                              replication=19, witness_fee=wit(19))
             for e in range(3, 12)]
    steady = [ScheduledRequest(post_epoch=e,
                               paths=(RetrievalPath(source_key="price"),),
                               aggregation=Aggregation.FIRST,
                               replication=8, witness_fee=wit(8))
              for e in range(13, 490, 3)]
    return Scenario(
        population=20, epochs=500, seed=seed,
        behavior_mix={"HONEST": Fraction(8, 10), "LIAR": Fraction(1, 10),
                      "COLLUDER:1": Fraction(1, 10)},
        sources={"price": "42.0"},
        recomputation_period=12,
        requests=tuple(early + steady))


def test_criterion_6_honest_majority_accuracy():
    with criterion("6", "20% adversarial reputation: accuracy >= 99%", 60.0):
        scenario = _criterion_6_scenario()
        sim = harness.SimHarness(scenario)
        for _ in range(scenario.epochs):
            sim.step()
            assert sim.rep.conserved_total() == scenario.population, (
                "reputation conservation broke at epoch %d" % sim.epoch)
        frames = sim.result().frames
        resolved = sum(f.resolved for f in frames)
        correct = sum(f.correct for f in frames)
        assert resolved >= 150
        assert correct / resolved >= 0.99, (
            "accuracy %.4f" % (correct / resolved))
        adversaries = [p.public_key for p in sim.participants
                       if sim.strategy[p.public_key].kind in ("LIAR", "COLLUDER")]
        assert len(adversaries) == 4
        for pk in adversaries:
            assert sim.rep.score(pk) < 1, (
                "adversary %s ended at %s" % (pk[:4].hex(), sim.rep.score(pk)))


# --- 7. commit-reveal soundness --------------------------------------------------------

def test_criterion_7_commit_reveal_soundness():
    with criterion("7", "0 false accepts / 0 false rejects in 10^4 trials", 30.0):
        rng = random.Random(424242)
        false_accepts = 0
        false_rejects = 0
        for _ in range(10_000):
            value = rng.randbytes(rng.randrange(1, 40))
            witness = digest(rng.randbytes(16))
            prev = digest(rng.randbytes(16))
            commit = Commitment(request_id=b"\x01" * 32, witness=witness,
                                digest=commitment_digest(value, witness, prev),
                                epoch=1)
            honest = Reveal(request_id=b"\x01" * 32, witness=witness,
                            canonical_value=value, prev_block_hash=prev)
            if not verify_reveal(commit, honest):
                false_rejects += 1
            component = rng.randrange(3)
            flip = 1 << rng.randrange(8)
            if component == 0:
                mutated = bytearray(value)
                mutated[rng.randrange(len(mutated))] ^= flip
                forged = Reveal(request_id=b"\x01" * 32, witness=witness,
                                canonical_value=bytes(mutated),
                                prev_block_hash=prev)
            elif component == 1:
                mutated = bytearray(witness)
                mutated[rng.randrange(32)] ^= flip
                forged = Reveal(request_id=b"\x01" * 32, witness=bytes(mutated),
                                canonical_value=value, prev_block_hash=prev)
            else:
                mutated = bytearray(prev)
                mutated[rng.randrange(32)] ^= flip
                forged = Reveal(request_id=b"\x01" * 32, witness=witness,
                                canonical_value=value,
                                prev_block_hash=bytes(mutated))
            if verify_reveal(commit, forged):
                false_accepts += 1
        assert false_accepts == 0
        assert false_rejects == 0


# --- 8. transaction algebra --------------------------------------------------------------

def _random_ledger_and_pair(rng, people):
    owners = [people[rng.randrange(len(people))]
              for _ in range(rng.randrange(2, 9))]
    state = toy_state([(p, rng.randrange(10, 10**9)) for p in owners])
    keys = sorted(state.dag.utxo)
    rng.shuffle(keys)
    split = rng.randrange(1, len(keys))

    def build(source_keys):
        by_owner: dict[bytes, list] = {}
        for key in source_keys:
            by_owner.setdefault(state.dag.utxo[key].lock.owner, []).append(key)
        owner_pk, owner_keys = sorted(by_owner.items())[0]
        owner = next(p for p in people if p.public_key == owner_pk)
        dest = people[rng.randrange(len(people))].public_key
        return transfer(owner, owner_keys,
                        [(Fraction(rng.randrange(1, 100), 100), dest)])

    return state, build(keys[:split]), build(keys[split:])


def test_criterion_8_transaction_algebra():
    with criterion("8", "commutativity and composition exact", 30.0):
        people = participants(4)
        rng = random.Random(80_80)
        for _ in range(1000):
            state, f, g = _random_ledger_and_pair(rng, people)
            fg = apply_transaction(apply_transaction(state, f), g)
            gf = apply_transaction(apply_transaction(state, g), f)
            assert fg.dag.utxo == gf.dag.utxo
            assert fg.supply == gf.supply

        for _ in range(1000):
            owners = [people[rng.randrange(len(people))]
                      for _ in range(rng.randrange(2, 7))]
            state = toy_state([(p, rng.randrange(100, 10**9)) for p in owners])
            sequence = []
            current = state
            for _ in range(rng.randrange(1, 4)):
                holdings: dict[bytes, list] = {}
                for key, record in current.dag.utxo.items():
                    holdings.setdefault(record.lock.owner, []).append(key)
                owner_pk = sorted(holdings)[rng.randrange(len(holdings))]
                owner = next(p for p in people if p.public_key == owner_pk)
                spend = sorted(holdings[owner_pk])[:rng.randrange(1, 3)]
                dest = people[rng.randrange(len(people))].public_key
                tx = transfer(owner, spend,
                              [(Fraction(rng.randrange(50, 100), 100), dest)])
                current = apply_transaction(current, tx)
                sequence.append(tx)
            composed = compose(sequence, state)
            via = apply_transaction(state, composed)
            assert state_effect(state, current) == state_effect(state, via)


# --- 9. determinism -----------------------------------------------------------------------

def test_criterion_9_determinism(tmp_path):
    with criterion("9", "byte-identical metrics and snapshots", 30.0):
        requests = tuple(
            ScheduledRequest(post_epoch=e,
                             paths=(RetrievalPath(source_key="price"),),
                             aggregation=Aggregation.FIRST,
                             replication=5, witness_fee=wit(5))
            for e in range(4, 50, 3))
        scenario = Scenario(
            population=12, epochs=60, seed=31337,
            behavior_mix={"HONEST": Fraction(3, 4), "LIAR": Fraction(1, 6),
                          "NO_REVEAL": Fraction(1, 12)},
            sources={"price": "42.0"},
            requests=requests)
        outputs = []
        for run_index in range(2):
            sim = harness.SimHarness(scenario)
            sim.run_to(scenario.epochs)
            out = tmp_path / ("run%d" % run_index)
            harness.write_outputs(sim.result(), out)
            (out / "snapshot.json").write_text(harness.snapshot(sim),
                                               encoding="utf-8")
            outputs.append(out)
        for name in ("metrics.csv", "snapshot.json", "summary.json",
                     "verdicts.log", "ledger.json"):
            first = (outputs[0] / name).read_bytes()
            second = (outputs[1] / name).read_bytes()
            assert first == second, "%s differs between identical runs" % name
