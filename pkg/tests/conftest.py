"""Shared builders: toy UTXO states and minimal mineable chains."""

from __future__ import annotations

from fractions import Fraction

import pytest

from simnet import eligibility
from simnet.eligibility import TaskKind
from simnet.hashing import digest
from simnet.identity import ParticipantId
from simnet.ledger import (
    Block,
    EpochDag,
    LedgerState,
    PayLock,
    Transaction,
    TransactionOutput,
    TxInput,
    TxKind,
    UtxoRecord,
    accept_block,
)
from simnet.reputation import ReputationLedger


def participants(n: int, seed: int = 0) -> tuple[ParticipantId, ...]:
    return tuple(sorted((ParticipantId.derive(seed, i) for i in range(n)),
                        key=lambda p: p.public_key))


def neutral_ledger(people: tuple[ParticipantId, ...]) -> ReputationLedger:
    return ReputationLedger.genesis(people)


def toy_state(holdings: list[tuple[ParticipantId, int]],
              checkpoint: int = 5) -> LedgerState:
    """A hand-built UTXO set: one pay-locked output per (owner, value)."""
    utxo = {}
    for index, (owner, value) in enumerate(holdings):
        utxo[(digest(b"toy", index), 0)] = UtxoRecord(
            value=value, lock=PayLock(owner=owner.public_key))
    dag = EpochDag(utxo=utxo, supply=sum(v for _, v in holdings),
                   open_checkpoint=checkpoint)
    return LedgerState(dag=dag)


def transfer(owner: ParticipantId,
             sources: list[tuple[bytes, int]],
             shares: list[tuple[Fraction, bytes]]) -> Transaction:
    """Value transfer spending ``sources`` into pay-locked ``shares``."""
    return Transaction(
        kind=TxKind.VALUE_TRANSFER,
        inputs=tuple(TxInput(source=s, index=i, unlock=(owner.secret_key,))
                     for s, i in sources),
        outputs=tuple(TransactionOutput(share=share, lock=PayLock(owner=pk))
                      for share, pk in shares),
    )


class Chain:
    """A minimal real chain: genesis plus proof-carrying blocks.

    Test blocks run the mining lottery at tier = population size, which makes
    every participant eligible (multiplier * influence = 1), so any desired
    miner can produce a verifiable block at any epoch.
    """

    def __init__(self, people: tuple[ParticipantId, ...]):
        self.people = people
        self.rep = neutral_ledger(people)
        self.dag = EpochDag.genesis(miner=people[0].public_key)

    def proof_for(self, miner: ParticipantId, epoch: int):
        beacon = eligibility.epoch_randomness(self.dag, epoch)
        tier = len(self.people)
        proof = eligibility.check_eligibility(
            miner, epoch, beacon, TaskKind.MINE, tier,
            Fraction(1, len(self.people)))
        assert proof is not None
        return proof

    def build(self, epoch: int, miner: ParticipantId,
              pointers: tuple[bytes, ...] = (),
              parents: tuple[bytes, ...] | None = None) -> Block:
        from simnet.economics import block_reward
        if parents is None:
            parents = self.tips(epoch)
        return Block(checkpoint=epoch, parents=parents, tx_pointers=pointers,
                     miner=miner.public_key, reward=block_reward(epoch),
                     leadership_proof=self.proof_for(miner, epoch))

    def tips(self, epoch: int) -> tuple[bytes, ...]:
        for checkpoint in range(epoch - 1, -1, -1):
            digests = self.dag.block_digests_at(checkpoint)
            if digests:
                return digests
        raise AssertionError("no parent blocks below %d" % epoch)

    def mine(self, epoch: int, miner: ParticipantId,
             pointers: tuple[bytes, ...] = (),
             txs: tuple[Transaction, ...] = ()) -> Block:
        block = self.build(epoch, miner, pointers)
        self.dag = accept_block(self.dag, block, self.rep, txs=txs)
        return block

    def advance_to(self, epoch: int) -> None:
        start = self.dag.open_checkpoint + 1
        for e in range(start, epoch + 1):
            self.mine(e, self.people[e % len(self.people)])

    def state(self) -> LedgerState:
        return LedgerState(dag=self.dag)


@pytest.fixture
def people():
    return participants(4)
