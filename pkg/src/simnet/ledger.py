"""Append-only DAG ledger with percentage-valued outputs.

Blocks are keyed by (checkpoint, digest) and any number of blocks may share
one checkpoint.  Blocks carry *pointers* to transactions, never transaction
bodies: two same-checkpoint blocks may point at the same transaction, while a
pointer to a transaction already canonical at a lower checkpoint is simply
ignored.  Each transaction becomes canonical at exactly one checkpoint.

Outputs name a share in (0, 1] of the transaction's summed input value, not
an absolute amount.  When n transactions canonical at the same checkpoint
spend one output of value v, each resolves at most floor(v / n); spends of an
already-spent output at a later checkpoint are rejected.  All arithmetic is
exact in nanoWit: every division floors and every remainder accrues to the
block miners, so conservation holds to the nanoWit.

Value mechanics of witnessing (the covenant scripts of the reference design
are out of scope and enforced here as native rules):

* a request transaction locks the witness and bridge fees in one
  request-locked escrow output;
* commit-pledge and reveal-redeem transactions authenticate against the
  escrow through *observing* inputs that satisfy the lock without consuming
  the output;
* when all commitments are in, a miner-built division settlement spends the
  escrow into one commit-locked share per committer (floor(fee / committers)
  each, remainder to the miner);
* a commit-locked share is spent either by its witness's reveal-redeem
  transaction (the unlock data must open the commitment digest) or by a
  forfeit/refund settlement after the verdict.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from . import eligibility
from .economics import MAX_BLOCK_BYTES, IssuanceParams, block_reward
from .eligibility import EligibilityProof, TaskKind
from .errors import (
    BadProof,
    InvalidSequence,
    LockViolation,
    MalformedPayload,
    OversizeBlock,
    StaleBlock,
    UnknownInput,
    UnknownParent,
)
from .hashing import canonical, digest
from .rad import Commitment, RadRequest, Reveal, verify_reveal
from .reputation import ReputationLedger

DEFAULT_HORIZON = 2

# Coinbase outputs stay locked until no same-checkpoint block can arrive and
# re-split them: one epoch past the acceptance horizon.
COINBASE_MATURITY = DEFAULT_HORIZON + 1


class TxKind(enum.Enum):
    VALUE_TRANSFER = "value-transfer"
    RAD_REQUEST = "rad-request"
    COMMIT_PLEDGE = "commit-pledge"
    REVEAL_REDEEM = "reveal-redeem"


class SettlementPhase(enum.Enum):
    DIVISION = "division"    # split the escrow among committers
    FORFEIT = "forfeit"      # deviators' shares to the supporters
    REFUND = "refund"        # contested request back to the client
    BRIDGE = "bridge"        # delivery payout


# --- locks ------------------------------------------------------------------

@dataclass(frozen=True)
class PayLock:
    owner: bytes

    def serial(self) -> bytes:
        return canonical(b"pay", self.owner)


@dataclass(frozen=True)
class TimeLock:
    unlock_epoch: int
    owner: bytes

    def serial(self) -> bytes:
        return canonical(b"time", self.unlock_epoch, self.owner)


@dataclass(frozen=True)
class RequestLock:
    request_id: bytes

    def serial(self) -> bytes:
        return canonical(b"request", self.request_id)


@dataclass(frozen=True)
class CommitLock:
    request_id: bytes
    witness: bytes
    commitment: bytes

    def serial(self) -> bytes:
        return canonical(b"commit", self.request_id, self.witness, self.commitment)


Lock = PayLock | TimeLock | RequestLock | CommitLock


# --- transactions -----------------------------------------------------------

@dataclass(frozen=True)
class TxInput:
    """Reference to an output; ``observe`` inputs authenticate without spending."""

    source: bytes
    index: int
    unlock: tuple[bytes, ...] = ()
    observe: bool = False

    def serial(self) -> bytes:
        return canonical(self.source, self.index, int(self.observe),
                         canonical(*self.unlock))


@dataclass(frozen=True)
class TransactionOutput:
    """A share in (0, 1] of the summed input value, under a lock."""

    share: Fraction
    lock: Lock

    def __post_init__(self) -> None:
        if not 0 < self.share <= 1:
            raise ValueError("output share must lie in (0, 1]")

    def serial(self) -> bytes:
        return canonical(
            self.share.numerator.to_bytes(16, "big"),
            self.share.denominator.to_bytes(16, "big"),
            self.lock.serial(),
        )


@dataclass(frozen=True)
class Settlement:
    """Miner-authored escrow movement, authorized by the epoch's verdict."""

    request_id: bytes
    phase: SettlementPhase

    def serial(self) -> bytes:
        return canonical(b"settlement", self.request_id, self.phase.value.encode())


Payload = RadRequest | Commitment | Reveal | Settlement | None


def _payload_serial(payload: Payload) -> bytes:
    if payload is None:
        return canonical(b"none")
    if isinstance(payload, RadRequest):
        return canonical(b"rad", payload.id)
    if isinstance(payload, Commitment):
        return canonical(b"pledge", payload.request_id, payload.witness,
                         payload.digest, payload.epoch)
    if isinstance(payload, Reveal):
        return canonical(b"reveal", payload.request_id, payload.witness,
                         payload.canonical_value, payload.prev_block_hash)
    if isinstance(payload, Settlement):
        return payload.serial()
    raise MalformedPayload("unsupported payload type %r" % type(payload))


@dataclass(frozen=True)
class Transaction:
    kind: TxKind
    inputs: tuple[TxInput, ...]
    outputs: tuple[TransactionOutput, ...]
    payload: Payload = None

    def __post_init__(self) -> None:
        if not self.inputs:
            raise ValueError("transactions must have at least one input")
        total = sum((o.share for o in self.outputs), Fraction(0))
        if total > 1:
            raise ValueError("output shares must sum to at most 1")

    def serial(self) -> bytes:
        return canonical(
            self.kind.value.encode(),
            canonical(*(i.serial() for i in self.inputs)),
            canonical(*(o.serial() for o in self.outputs)),
            _payload_serial(self.payload),
        )

    @cached_property
    def id(self) -> bytes:
        return digest(self.serial())

    def size(self) -> int:
        return len(self.serial())


@dataclass(frozen=True)
class Block:
    """Header plus transaction pointers; at most 1 MiB serialized."""

    checkpoint: int
    parents: tuple[bytes, ...]
    tx_pointers: tuple[bytes, ...]
    miner: bytes
    reward: int
    leadership_proof: EligibilityProof | None = None

    @property
    def tier(self) -> int:
        return self.leadership_proof.tier if self.leadership_proof else 1

    def serial(self) -> bytes:
        proof = self.leadership_proof
        proof_serial = canonical(
            proof.participant, proof.epoch, proof.kind.tag,
            proof.signature_digest, proof.tier,
        ) if proof else canonical(b"genesis")
        return canonical(
            self.checkpoint,
            canonical(*self.parents),
            canonical(*self.tx_pointers),
            self.miner,
            self.reward,
            proof_serial,
        )

    @cached_property
    def digest(self) -> bytes:
        return digest(self.serial())

    def size(self) -> int:
        return len(self.serial())


@dataclass(frozen=True)
class UtxoRecord:
    value: int
    lock: Lock


@dataclass(frozen=True)
class RequestEntry:
    request: RadRequest
    escrow: tuple[bytes, int]


@dataclass(frozen=True)
class _Settled:
    """UTXO view and registries at the start of the open checkpoint."""

    utxo: Mapping[tuple[bytes, int], UtxoRecord] = field(default_factory=dict)
    supply: int = 0
    requests: Mapping[bytes, RequestEntry] = field(default_factory=dict)
    commitments: Mapping[tuple[bytes, bytes], Commitment] = field(default_factory=dict)


@dataclass(frozen=True)
class EpochDag:
    """The DAG plus the derived canonical UTXO view.

    Values are treated as immutable; every mutation returns a new instance
    sharing unchanged maps.  ``settled`` snapshots the state at the start of
    the newest checkpoint so that a further block arriving for it can
    re-resolve the same-checkpoint value splits.
    """

    issuance: IssuanceParams = IssuanceParams()
    horizon: int = DEFAULT_HORIZON
    blocks: Mapping[bytes, Block] = field(default_factory=dict)
    by_checkpoint: Mapping[int, tuple[bytes, ...]] = field(default_factory=dict)
    tx_index: Mapping[bytes, Transaction] = field(default_factory=dict)
    canonical_pointer: Mapping[bytes, int] = field(default_factory=dict)
    utxo: Mapping[tuple[bytes, int], UtxoRecord] = field(default_factory=dict)
    supply: int = 0
    requests: Mapping[bytes, RequestEntry] = field(default_factory=dict)
    commitments: Mapping[tuple[bytes, bytes], Commitment] = field(default_factory=dict)
    open_checkpoint: int = 0
    settled: _Settled = field(default_factory=_Settled)

    @classmethod
    def genesis(cls, miner: bytes, issuance: IssuanceParams = IssuanceParams(),
                horizon: int = DEFAULT_HORIZON) -> "EpochDag":
        """One block at checkpoint 0 with no parents opens the ledger."""
        dag = cls(issuance=issuance, horizon=horizon)
        block = Block(checkpoint=0, parents=(), tx_pointers=(),
                      miner=miner, reward=block_reward(0, issuance))
        return _admit_block(dag, block, ())

    def block_digests_at(self, checkpoint: int) -> tuple[bytes, ...]:
        return self.by_checkpoint.get(checkpoint, ())

    def tip_checkpoint(self) -> int:
        return self.open_checkpoint

    def maturity(self) -> int:
        return self.horizon + 1


@dataclass(frozen=True)
class LedgerState:
    """Pure-value view over the DAG: balances derive from the UTXO set."""

    dag: EpochDag

    @property
    def supply(self) -> int:
        return self.dag.supply

    def balances(self) -> dict[bytes, int]:
        totals: dict[bytes, int] = {}
        for record in self.dag.utxo.values():
            owner = getattr(record.lock, "owner", None)
            if owner is not None:
                totals[owner] = totals.get(owner, 0) + record.value
        return totals

    def utxo_total(self) -> int:
        return sum(r.value for r in self.dag.utxo.values())


# --- value resolution -------------------------------------------------------

def resolve_output_value(dag: EpochDag, source_value: int,
                         concurrent_spenders: int, share: Fraction) -> int:
    """Absolute value of one output: floor(source / spenders * share).

    ``concurrent_spenders`` counts transactions spending the same output that
    become canonical at one checkpoint; sub-nanoWit remainders accrue to the
    miner fee.  Total on valid inputs.
    """
    if concurrent_spenders < 1:
        raise ValueError("at least one spender required")
    if not 0 < share <= 1:
        raise ValueError("share must lie in (0, 1]")
    return int(Fraction(source_value) * share / concurrent_spenders)


def _check_lock(record: UtxoRecord, tx: Transaction, inp: TxInput,
                now: int) -> None:
    lock = record.lock
    if isinstance(lock, PayLock):
        if not inp.unlock or digest(inp.unlock[0]) != lock.owner:
            raise LockViolation("pay lock requires the owner's key preimage")
        return
    if isinstance(lock, TimeLock):
        if now < lock.unlock_epoch:
            raise LockViolation(
                "output time-locked until epoch %d (now %d)"
                % (lock.unlock_epoch, now))
        if not inp.unlock or digest(inp.unlock[0]) != lock.owner:
            raise LockViolation("time lock requires the owner's key preimage")
        return
    if isinstance(lock, RequestLock):
        if inp.observe:
            payload = tx.payload
            if isinstance(payload, Commitment):
                if payload.request_id != lock.request_id:
                    raise LockViolation("commitment targets a different request")
                if payload.assignment_proof is None:
                    raise LockViolation("commitment lacks an assignment proof")
                return
            if isinstance(payload, Reveal):
                if payload.request_id != lock.request_id:
                    raise LockViolation("reveal targets a different request")
                return
            raise LockViolation("escrow may only be observed by commits/reveals")
        if isinstance(tx.payload, Settlement) and \
                tx.payload.request_id == lock.request_id:
            return
        raise LockViolation("escrow is spendable only by a settlement")
    if isinstance(lock, CommitLock):
        if tx.kind is TxKind.REVEAL_REDEEM:
            if len(inp.unlock) != 2:
                raise LockViolation("reveal must supply (value, prev block hash)")
            value, prev_hash = inp.unlock
            opened = verify_reveal(
                Commitment(request_id=lock.request_id, witness=lock.witness,
                           digest=lock.commitment, epoch=0),
                Reveal(request_id=lock.request_id, witness=lock.witness,
                       canonical_value=value, prev_block_hash=prev_hash))
            if not opened:
                raise LockViolation("reveal does not open the commitment")
            return
        if isinstance(tx.payload, Settlement) and \
                tx.payload.request_id == lock.request_id:
            return
        raise LockViolation("commit lock spendable only by its reveal or settlement")
    raise AssertionError("unreachable lock type %r" % lock)


def _validate_payload(tx: Transaction,
                      requests: Mapping[bytes, RequestEntry],
                      commitments: Mapping[tuple[bytes, bytes], Commitment]) -> None:
    payload = tx.payload
    if tx.kind is TxKind.RAD_REQUEST:
        if not isinstance(payload, RadRequest):
            raise MalformedPayload("request transaction needs a request payload")
        if payload.id in requests:
            raise MalformedPayload("request already registered")
        if payload.total_fee < 1:
            raise MalformedPayload("request must escrow at least 1 nanoWit")
        escrows = [o for o in tx.outputs
                   if isinstance(o.lock, RequestLock) and
                   o.lock.request_id == payload.id]
        if len(escrows) != 1:
            raise MalformedPayload("request needs exactly one escrow output")
    elif tx.kind is TxKind.COMMIT_PLEDGE:
        if not isinstance(payload, Commitment):
            raise MalformedPayload("commit transaction needs a commitment payload")
        if payload.request_id not in requests:
            raise MalformedPayload("commitment targets an unknown request")
        if (payload.request_id, payload.witness) in commitments:
            raise MalformedPayload("witness already committed to this request")
        if tx.outputs:
            raise MalformedPayload("commit transactions carry no value")
    elif tx.kind is TxKind.REVEAL_REDEEM:
        if not isinstance(payload, Reveal):
            raise MalformedPayload("reveal transaction needs a reveal payload")
        commit = commitments.get((payload.request_id, payload.witness))
        if commit is None:
            raise MalformedPayload("reveal without a matching commitment")
        if not verify_reveal(commit, payload):
            raise MalformedPayload("reveal does not open its commitment")
    elif isinstance(payload, Settlement):
        if payload.request_id not in requests:
            raise MalformedPayload("settlement targets an unknown request")
    elif payload is not None:
        raise MalformedPayload("value transfers carry no payload")


@dataclass(frozen=True)
class _Execution:
    consumed: tuple[tuple[bytes, int], ...]
    created: Mapping[tuple[bytes, int], UtxoRecord]
    fee: int


def _execute(tx: Transaction,
             available: Mapping[tuple[bytes, int], UtxoRecord],
             requests: Mapping[bytes, RequestEntry],
             commitments: Mapping[tuple[bytes, bytes], Commitment],
             now: int,
             spender_counts: Mapping[tuple[bytes, int], int] | None = None,
             ) -> _Execution:
    """Validate one transaction against a UTXO view and resolve its values."""
    _validate_payload(tx, requests, commitments)
    counts = spender_counts or {}
    total_in = 0
    consumed: list[tuple[bytes, int]] = []
    seen: set[tuple[bytes, int]] = set()
    for inp in tx.inputs:
        key = (inp.source, inp.index)
        if key in seen:
            raise UnknownInput("duplicate input %s:%d" % (inp.source.hex(), inp.index))
        seen.add(key)
        record = available.get(key)
        if record is None:
            raise UnknownInput(
                "input %s:%d is unknown or already spent"
                % (inp.source[:4].hex(), inp.index))
        _check_lock(record, tx, inp, now)
        if inp.observe:
            continue
        total_in += record.value // counts.get(key, 1)
        consumed.append(key)
    created: dict[tuple[bytes, int], UtxoRecord] = {}
    paid = 0
    for index, output in enumerate(tx.outputs):
        value = int(total_in * output.share)
        if value == 0:
            continue  # zero-value outputs are unspendable dust; never materialized
        created[(tx.id, index)] = UtxoRecord(value=value, lock=output.lock)
        paid += value
    if tx.kind is TxKind.RAD_REQUEST and isinstance(tx.payload, RadRequest):
        escrowed = sum(r.value for r in created.values()
                       if isinstance(r.lock, RequestLock))
        if escrowed != tx.payload.total_fee:
            raise MalformedPayload(
                "escrow resolves to %d nanoWit but the request fees total %d"
                % (escrowed, tx.payload.total_fee))
    return _Execution(consumed=tuple(consumed), created=created,
                      fee=total_in - paid)


def _registry_updates(tx: Transaction,
                      requests: dict[bytes, RequestEntry],
                      commitments: dict[tuple[bytes, bytes], Commitment]) -> None:
    payload = tx.payload
    if tx.kind is TxKind.RAD_REQUEST and isinstance(payload, RadRequest):
        for index, output in enumerate(tx.outputs):
            if isinstance(output.lock, RequestLock):
                requests[payload.id] = RequestEntry(
                    request=payload, escrow=(tx.id, index))
                break
    elif tx.kind is TxKind.COMMIT_PLEDGE and isinstance(payload, Commitment):
        commitments[(payload.request_id, payload.witness)] = payload


def apply_transaction(state: LedgerState, tx: Transaction) -> LedgerState:
    """Apply one transaction as a pure state transition.

    This is the single-spender path (the mempool view): each input resolves
    at its full value.  Same-checkpoint value splitting happens when blocks
    canonicalize transactions in ``accept_block``.
    """
    dag = state.dag
    now = dag.open_checkpoint + 1
    execution = _execute(tx, dag.utxo, dag.requests, dag.commitments, now)
    utxo = dict(dag.utxo)
    for key in execution.consumed:
        del utxo[key]
    utxo.update(execution.created)
    requests = dict(dag.requests)
    commitments = dict(dag.commitments)
    _registry_updates(tx, requests, commitments)
    tx_index = dict(dag.tx_index)
    tx_index[tx.id] = tx
    new_dag = replace(dag, utxo=utxo, requests=requests,
                      commitments=commitments, tx_index=tx_index)
    return LedgerState(dag=new_dag)


def transaction_fee(state: LedgerState, tx: Transaction) -> int:
    """Fee the transaction pays under the single-spender view."""
    dag = state.dag
    return _execute(tx, dag.utxo, dag.requests, dag.commitments,
                    dag.open_checkpoint + 1).fee


# --- block acceptance -------------------------------------------------------

def _canonical_order(txids: Sequence[bytes],
                     tx_index: Mapping[bytes, Transaction]) -> list[bytes]:
    """Topological order by intra-checkpoint dependencies, then by id."""
    pending = sorted(set(txids))
    produced: dict[bytes, bytes] = {tid: tid for tid in pending}
    deps: dict[bytes, set[bytes]] = {}
    for tid in pending:
        deps[tid] = {
            inp.source for inp in tx_index[tid].inputs
            if inp.source in produced and inp.source != tid
        }
    ordered: list[bytes] = []
    ready = [tid for tid in pending if not deps[tid]]
    done: set[bytes] = set()
    while ready:
        tid = ready.pop(0)
        ordered.append(tid)
        done.add(tid)
        newly = [t for t in pending if t not in done and t not in ready
                 and deps[t] <= done]
        ready = sorted(ready + newly)
    if len(ordered) != len(pending):
        raise MalformedPayload("cyclic dependency among checkpoint transactions")
    return ordered


def _canonicalize_checkpoint(
    settled: _Settled,
    checkpoint: int,
    block_list: Sequence[Block],
    canonical_txids: Sequence[bytes],
    tx_index: Mapping[bytes, Transaction],
    issuance: IssuanceParams,
    maturity: int,
) -> _Settled:
    """Apply one checkpoint's canonical transactions over the settled state.

    Re-run in full whenever another block lands on the same checkpoint: the
    concurrent-spender counts (the n in the v/n rule), the reward split and
    the fee split all depend on the checkpoint's complete block set.
    """
    order = _canonical_order(canonical_txids, tx_index)
    counts: dict[tuple[bytes, int], int] = {}
    for tid in order:
        for inp in tx_index[tid].inputs:
            if not inp.observe:
                key = (inp.source, inp.index)
                counts[key] = counts.get(key, 0) + 1

    utxo = dict(settled.utxo)
    requests = dict(settled.requests)
    commitments = dict(settled.commitments)
    fee_pool = 0
    consumed_total: set[tuple[bytes, int]] = set()
    for tid in order:
        tx = tx_index[tid]
        execution = _execute(tx, utxo, requests, commitments, checkpoint,
                             spender_counts=counts)
        for key in execution.consumed:
            consumed_total.add(key)
        utxo.update(execution.created)
        _registry_updates(tx, requests, commitments)
        fee_pool += execution.fee
    # Split remainders of concurrently spent outputs also go to the miners.
    for key, n in counts.items():
        if n > 1:
            record = settled.utxo.get(key) or utxo.get(key)
            if record is not None:
                fee_pool += record.value - n * (record.value // n)
    for key in consumed_total:
        utxo.pop(key, None)

    blocks = sorted(block_list, key=lambda b: b.digest)
    count = len(blocks)
    reward_each = block_reward(checkpoint, issuance) // count
    fee_each = fee_pool // count
    fee_rest = fee_pool - fee_each * count
    supply = settled.supply
    for position, block in enumerate(blocks):
        credit = reward_each + fee_each + (fee_rest if position == 0 else 0)
        supply += reward_each
        if credit > 0:
            key = (digest(b"coinbase", block.digest), 0)
            utxo[key] = UtxoRecord(
                value=credit,
                lock=TimeLock(unlock_epoch=checkpoint + maturity,
                              owner=block.miner))
    return _Settled(utxo=utxo, supply=supply, requests=requests,
                    commitments=commitments)


def _admit_block(dag: EpochDag, block: Block,
                 txs: Iterable[Transaction]) -> EpochDag:
    """Insert a verified block and re-derive the open checkpoint's state."""
    tx_index = dict(dag.tx_index)
    for tx in txs:
        tx_index[tx.id] = tx
    for pointer in block.tx_pointers:
        if pointer not in tx_index:
            raise UnknownInput("block points at unknown transaction %s"
                               % pointer[:4].hex())

    blocks = dict(dag.blocks)
    blocks[block.digest] = block
    by_checkpoint = dict(dag.by_checkpoint)
    at = sorted(by_checkpoint.get(block.checkpoint, ()) + (block.digest,))
    by_checkpoint[block.checkpoint] = tuple(at)

    canonical_pointer = dict(dag.canonical_pointer)
    for pointer in block.tx_pointers:
        existing = canonical_pointer.get(pointer)
        if existing is None or block.checkpoint < existing:
            canonical_pointer[pointer] = block.checkpoint

    if block.checkpoint > dag.open_checkpoint:
        settled = _Settled(utxo=dag.utxo, supply=dag.supply,
                           requests=dag.requests, commitments=dag.commitments)
        open_checkpoint = block.checkpoint
    elif block.checkpoint == dag.open_checkpoint:
        settled = dag.settled
        open_checkpoint = dag.open_checkpoint
    else:
        return _rebuild(replace(dag, blocks=blocks, by_checkpoint=by_checkpoint,
                                tx_index=tx_index))

    canonical_here = sorted(
        tid for tid, cp in canonical_pointer.items() if cp == open_checkpoint)
    block_list = [blocks[d] for d in by_checkpoint[open_checkpoint]]
    resolved = _canonicalize_checkpoint(
        settled, open_checkpoint, block_list, canonical_here, tx_index,
        dag.issuance, dag.maturity())
    return replace(
        dag, blocks=blocks, by_checkpoint=by_checkpoint, tx_index=tx_index,
        canonical_pointer=canonical_pointer, utxo=resolved.utxo,
        supply=resolved.supply, requests=resolved.requests,
        commitments=resolved.commitments, open_checkpoint=open_checkpoint,
        settled=settled)


def _rebuild(dag: EpochDag) -> EpochDag:
    """Recompute the canonical state from genesis, in checkpoint order.

    Only reached when a block arrives for a checkpoint behind the tip but
    within the acceptance horizon; desk-scale ledgers rebuild in linear time.
    """
    canonical_pointer: dict[bytes, int] = {}
    for checkpoint in sorted(dag.by_checkpoint):
        for block_digest in dag.by_checkpoint[checkpoint]:
            for pointer in dag.blocks[block_digest].tx_pointers:
                if pointer not in canonical_pointer:
                    canonical_pointer[pointer] = checkpoint
    settled = _Settled()
    previous = _Settled()
    open_checkpoint = 0
    for checkpoint in sorted(dag.by_checkpoint):
        previous = settled
        canonical_here = sorted(
            tid for tid, cp in canonical_pointer.items() if cp == checkpoint)
        block_list = [dag.blocks[d] for d in dag.by_checkpoint[checkpoint]]
        settled = _canonicalize_checkpoint(
            previous, checkpoint, block_list, canonical_here, dag.tx_index,
            dag.issuance, dag.maturity())
        open_checkpoint = checkpoint
    return replace(
        dag, canonical_pointer=canonical_pointer, utxo=settled.utxo,
        supply=settled.supply, requests=settled.requests,
        commitments=settled.commitments, open_checkpoint=open_checkpoint,
        settled=previous)


def accept_block(dag: EpochDag, block: Block, rep: ReputationLedger,
                 txs: Iterable[Transaction] = ()) -> EpochDag:
    """Verify a block and merge it into the DAG.

    Same-checkpoint blocks must share the lowest released backup tier; a
    block whose tier differs from an already accepted sibling is rejected,
    because accepting a lower tier later would require evicting settled
    blocks (chain reorganization is out of scope).
    """
    if block.checkpoint < dag.open_checkpoint - dag.horizon:
        raise StaleBlock(
            "checkpoint %d is more than %d epochs behind the tip %d"
            % (block.checkpoint, dag.horizon, dag.open_checkpoint))
    if block.size() > MAX_BLOCK_BYTES:
        raise OversizeBlock("block of %d bytes exceeds 1 MiB" % block.size())
    if block.digest in dag.blocks:
        return dag

    if block.checkpoint == 0 and not dag.blocks:
        pass  # genesis: no parents, no proof
    else:
        if not block.parents:
            raise UnknownParent("non-genesis blocks need at least one parent")
        for parent in block.parents:
            known = dag.blocks.get(parent)
            if known is None:
                raise UnknownParent("parent %s unknown" % parent[:4].hex())
            if known.checkpoint >= block.checkpoint:
                raise UnknownParent(
                    "parent checkpoint %d not below block checkpoint %d"
                    % (known.checkpoint, block.checkpoint))
        siblings = [dag.blocks[d] for d in dag.block_digests_at(block.checkpoint)]
        if siblings and any(s.tier != block.tier for s in siblings):
            raise BadProof(
                "checkpoint %d already settled at backup tier %d"
                % (block.checkpoint, siblings[0].tier))
        proof = block.leadership_proof
        if proof is None:
            raise BadProof("missing leadership proof")
        if proof.participant != block.miner or proof.epoch != block.checkpoint:
            raise BadProof("leadership proof does not bind the block")
        beacon = eligibility.epoch_randomness(dag, block.checkpoint)
        if not eligibility.verify_proof(proof, beacon, rep, proof.tier,
                                        expected_kind=TaskKind.MINE):
            raise BadProof("leadership proof fails the lottery threshold")
        if block.reward != block_reward(block.checkpoint, dag.issuance):
            raise MalformedPayload(
                "declared reward %d does not match the issuance schedule"
                % block.reward)
    return _admit_block(dag, block, txs)


# --- transaction algebra ----------------------------------------------------

def compose(txs: Sequence[Transaction], state: LedgerState) -> Transaction:
    """Collapse a valid transaction sequence into one equivalent transaction.

    The composed transaction spends exactly the sequence's net inputs (those
    not produced within the sequence) and re-creates its net outputs (those
    not consumed within it) at the same absolute values, so applying it to
    ``state`` yields the same UTXO effect as applying the whole sequence.
    Only payload-free value movements compose; kind-specific side effects
    cannot be merged into a single transaction.
    """
    if not txs:
        raise InvalidSequence("cannot compose an empty sequence")
    for tx in txs:
        if tx.payload is not None or tx.kind is not TxKind.VALUE_TRANSFER:
            raise InvalidSequence("only payload-free value transfers compose")

    current = state
    internal: set[bytes] = set()
    external_inputs: list[TxInput] = []
    external_total = 0
    consumed: set[tuple[bytes, int]] = set()
    for position, tx in enumerate(txs):
        for inp in tx.inputs:
            key = (inp.source, inp.index)
            if inp.source not in internal:
                external_inputs.append(inp)
                record = state.dag.utxo.get(key)
                if record is None:
                    raise InvalidSequence(
                        "transaction %d spends an unknown external output" % position)
                external_total += record.value
            consumed.add(key)
        try:
            current = apply_transaction(current, tx)
        except Exception as exc:
            raise InvalidSequence(
                "transaction %d invalid at its position: %s" % (position, exc)
            ) from exc
        internal.add(tx.id)

    outputs: list[TransactionOutput] = []
    for tx in txs:
        for index in range(len(tx.outputs)):
            key = (tx.id, index)
            if key in consumed:
                continue
            record = current.dag.utxo.get(key)
            if record is None:
                continue  # floored to zero when applied
            outputs.append(TransactionOutput(
                share=Fraction(record.value, external_total),
                lock=record.lock))
    return Transaction(kind=TxKind.VALUE_TRANSFER,
                       inputs=tuple(external_inputs),
                       outputs=tuple(outputs))


def state_effect(before: LedgerState, after: LedgerState,
                 ) -> tuple[frozenset, tuple, int]:
    """Observable effect of a transition: spends, creations, supply delta.

    Creations compare as a (value, lock) multiset because equivalent
    transactions create the same values under the same locks at different
    output keys.
    """
    spent = frozenset(k for k in before.dag.utxo if k not in after.dag.utxo)
    created = tuple(sorted(
        (record.value, record.lock.serial())
        for key, record in after.dag.utxo.items()
        if key not in before.dag.utxo))
    return spent, created, after.supply - before.supply


# --- external interface -----------------------------------------------------

def _lock_document(lock: Lock) -> dict:
    if isinstance(lock, PayLock):
        return {"kind": "pay", "owner": lock.owner.hex()}
    if isinstance(lock, TimeLock):
        return {"kind": "time", "owner": lock.owner.hex(),
                "unlock_epoch": str(lock.unlock_epoch)}
    if isinstance(lock, RequestLock):
        return {"kind": "request", "request_id": lock.request_id.hex()}
    return {"kind": "commit", "request_id": lock.request_id.hex(),
            "witness": lock.witness.hex(), "commitment": lock.commitment.hex()}


def snapshot_document(state: LedgerState) -> str:
    """Byte-stable JSON snapshot: sorted keys, integers as decimal strings."""
    dag = state.dag
    blocks = []
    for checkpoint in sorted(dag.by_checkpoint):
        for block_digest in dag.by_checkpoint[checkpoint]:
            block = dag.blocks[block_digest]
            blocks.append({
                "checkpoint": str(block.checkpoint),
                "digest": block.digest.hex(),
                "miner": block.miner.hex(),
                "parents": [p.hex() for p in block.parents],
                "reward": str(block.reward),
                "tier": str(block.tier),
                "tx_pointers": [p.hex() for p in block.tx_pointers],
            })
    utxo = [
        {"tx": key[0].hex(), "index": str(key[1]),
         "value": str(record.value), "lock": _lock_document(record.lock)}
        for key, record in sorted(state.dag.utxo.items())
    ]
    document = {
        "checkpoint": str(dag.open_checkpoint),
        "supply": str(dag.supply),
        "blocks": blocks,
        "utxo": utxo,
    }
    return json.dumps(document, sort_keys=True, separators=(",", ":"))
