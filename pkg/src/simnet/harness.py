"""Deterministic multi-agent epoch loop.

One step of the loop is one epoch: derive the randomness beacon, run the
mining lottery (relaxing through backup tiers until someone wins), let every
miner publish a block over the shared mempool selection, post scheduled
requests, run task assignment with refill, let agents retrieve and commit,
reveal one epoch after committing, resolve finished requests, update
reputation, and emit one metrics frame.

Everything is a pure function of the scenario: participant keys derive from
the seed, lotteries are keyed hashes, and all iteration orders are sorted,
so a run is bit-reproducible.  Snapshots exploit that determinism: a
snapshot records the scenario and the epoch count and restoring replays to
that point, then verifies the state digest recorded in the file.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from . import consensus, economics, eligibility, ledger, rad, reputation
from .consensus import Claim
from .economics import MAX_BLOCK_BYTES
from .eligibility import EligibilityProof, RandomBeacon, TaskKind
from .errors import CorruptSnapshot, VersionMismatch
from .hashing import digest
from .identity import ParticipantId
from .ledger import (
    Block,
    CommitLock,
    EpochDag,
    LedgerState,
    PayLock,
    RequestLock,
    Settlement,
    SettlementPhase,
    TimeLock,
    Transaction,
    TransactionOutput,
    TxInput,
    TxKind,
)
from .rad import Commitment, EventKind, RadRequest, RequestState, Reveal, SourceOracle
from .scenario import Scenario, ScheduledRequest, Strategy

SNAPSHOT_VERSION = "simnet-snapshot-1"
METRICS_HEADER = "epoch,miners,blocks,resolved,correct,supply_nanowit,pool_carry"


@dataclass(frozen=True)
class MetricsFrame:
    epoch: int
    miners: int
    blocks: int
    resolved: int
    correct: int
    supply_nanowit: int
    pool_carry: Fraction
    reputations: Mapping[str, str] = field(default_factory=dict)

    def csv_row(self) -> str:
        return "%d,%d,%d,%d,%d,%d,%s" % (
            self.epoch, self.miners, self.blocks, self.resolved, self.correct,
            self.supply_nanowit, repr(float(self.pool_carry)))


@dataclass(frozen=True)
class RunResult:
    frames: tuple[MetricsFrame, ...]
    state: LedgerState
    rep: reputation.ReputationLedger
    verdict_log: tuple[str, ...]
    delivery_log: tuple[str, ...]

    def metrics_csv(self) -> str:
        rows = [METRICS_HEADER]
        rows.extend(frame.csv_row() for frame in self.frames)
        return "\n".join(rows) + "\n"

    def summary(self) -> dict:
        resolved = sum(f.resolved for f in self.frames)
        correct = sum(f.correct for f in self.frames)
        mean_miners = (sum(f.miners for f in self.frames) / len(self.frames)
                       if self.frames else 0.0)
        return {
            "accuracy": (correct / resolved) if resolved else 1.0,
            "mean_miners": mean_miners,
            "final_reputations": {
                pk.hex(): float(score)
                for pk, score in sorted(self.rep.scores.items())
            },
        }


@dataclass
class _Track:
    """Everything the harness remembers about one scheduled request."""

    request: RadRequest
    scheduled: ScheduledRequest
    client: bytes
    tx_id: bytes | None = None
    mined_epoch: int | None = None
    activation_epoch: int | None = None
    truth: bytes | None = None
    assigned: dict[bytes, EligibilityProof] = field(default_factory=dict)
    claims: dict[bytes, tuple[bytes, bytes]] = field(default_factory=dict)
    committed: dict[bytes, bytes] = field(default_factory=dict)  # pk -> digest
    commit_epochs: dict[bytes, int] = field(default_factory=dict)
    division_tx: bytes | None = None
    division_epoch: int | None = None
    commit_outputs: dict[bytes, tuple[bytes, int]] = field(default_factory=dict)
    bridge_output: tuple[bytes, int] | None = None
    revealed: dict[bytes, bytes] = field(default_factory=dict)  # pk -> value
    reveal_txids: dict[bytes, bytes] = field(default_factory=dict)
    resolved_epoch: int | None = None
    winning: bytes | None = None
    contested: bool = False
    delivery_deficit: int = 0


class SimHarness:
    """Mutable simulation state; ``run`` drives it for a scenario."""

    def __init__(self, scenario: Scenario):
        self.scenario = scenario
        self.participants = tuple(
            ParticipantId.derive(scenario.seed, index)
            for index in range(scenario.population))
        strategies = scenario.strategies()
        self.strategy: dict[bytes, Strategy] = {
            p.public_key: strategies[i] for i, p in enumerate(self.participants)
        }
        roster = tuple(sorted(self.participants, key=lambda p: p.public_key))
        self.rep = reputation.ReputationLedger(
            participants=roster, decay=scenario.decay)
        self.source = SourceOracle(scenario.sources)
        self.state = LedgerState(dag=EpochDag.genesis(
            miner=roster[0].public_key, issuance=scenario.issuance))
        self.epoch = 0
        self.mempool: list[Transaction] = []
        self.mempool_meta: dict[bytes, tuple[int, int]] = {}  # id -> (fee, size)
        self.overlay = self.state
        self.tracks: dict[bytes, _Track] = {}
        self.pending_schedule = sorted(
            enumerate(scenario.requests), key=lambda e: (e[1].post_epoch, e[0]))
        self.deferred: list[tuple[int, ScheduledRequest]] = []
        self.frames: list[MetricsFrame] = []
        self.verdict_log: list[str] = []
        self.delivery_log: list[str] = []
        self.pending_verdicts: list[reputation.EpochVerdict] = []
        self.pending_bridge_fulfillers: set[bytes] = set()
        self.roster = {p.public_key: p for p in self.participants}

    # -- mempool ------------------------------------------------------------

    def _broadcast(self, tx: Transaction) -> bool:
        """Validate against the overlay and append to the mempool."""
        try:
            fee = ledger.transaction_fee(self.overlay, tx)
            self.overlay = ledger.apply_transaction(self.overlay, tx)
        except Exception:
            return False
        self.mempool.append(tx)
        self.mempool_meta[tx.id] = (fee, tx.size())
        return True

    def _rebuild_overlay(self) -> None:
        """Re-apply surviving mempool entries over the new canonical state."""
        self.overlay = self.state
        surviving: list[Transaction] = []
        for tx in self.mempool:
            if tx.id in self.state.dag.canonical_pointer:
                continue
            try:
                fee = ledger.transaction_fee(self.overlay, tx)
                self.overlay = ledger.apply_transaction(self.overlay, tx)
            except Exception:
                self.mempool_meta.pop(tx.id, None)
                continue
            self.mempool_meta[tx.id] = (fee, tx.size())
            surviving.append(tx)
        self.mempool = surviving

    def _evict(self, tx_id: bytes) -> None:
        self.mempool = [tx for tx in self.mempool if tx.id != tx_id]
        self.mempool_meta.pop(tx_id, None)
        self._rebuild_overlay()

    # -- funding --------------------------------------------------------------

    def _spendable(self, now: int) -> dict[bytes, list[tuple[int, tuple[bytes, int]]]]:
        """Per-owner spendable outputs under the overlay at epoch ``now``."""
        holdings: dict[bytes, list[tuple[int, tuple[bytes, int]]]] = {}
        for key, record in self.overlay.dag.utxo.items():
            lock = record.lock
            if isinstance(lock, PayLock):
                owner = lock.owner
            elif isinstance(lock, TimeLock) and now >= lock.unlock_epoch:
                owner = lock.owner
            else:
                continue
            holdings.setdefault(owner, []).append((record.value, key))
        for outputs in holdings.values():
            outputs.sort(key=lambda e: (-e[0], e[1]))
        return holdings

    def _fund_request(self, nonce: int, scheduled: ScheduledRequest,
                      now: int) -> bool:
        """Build and broadcast the request transaction if someone can pay."""
        holdings = self._spendable(now + 1)
        candidates = sorted(
            ((sum(v for v, _ in outputs), owner)
             for owner, outputs in holdings.items()),
            key=lambda e: (-e[0], e[1]))
        if not candidates:
            return False
        balance, owner = candidates[0]
        client = self.roster.get(owner)
        if client is None or client.secret_key is None:
            return False
        request = RadRequest(
            paths=scheduled.paths,
            aggregation=scheduled.aggregation,
            replication=scheduled.replication,
            witness_fee=scheduled.witness_fee,
            bridge_fee=scheduled.bridge_fee,
            time_lock=scheduled.time_lock,
            undecidable=scheduled.undecidable,
            deliver=scheduled.deliver,
            client=owner,
            nonce=nonce,
        )
        try:
            rad.validate_request(request, balance, self.scenario.fees,
                                 self.scenario.replication_cap)
        except Exception:
            return False

        picked: list[tuple[int, tuple[bytes, int]]] = []
        total_in = 0
        # Size is share-value independent, so one sizing pass suffices.
        for value, key in holdings[owner]:
            picked.append((value, key))
            total_in += value
            probe = self._request_tx(request, client, picked, total_in, 0)
            miner_fee = self.scenario.fees.min_miner_fee_rate * probe.size()
            if total_in >= request.total_fee + miner_fee:
                tx = self._request_tx(request, client, picked, total_in, miner_fee)
                if self._broadcast(tx):
                    track = _Track(request=request, scheduled=scheduled,
                                   client=owner, tx_id=tx.id)
                    track.request = rad.lifecycle_step(
                        track.request, rad.Event(EventKind.POSTED))
                    self.tracks[request.id] = track
                    return True
                return False
        return False

    def _request_tx(self, request: RadRequest, client: ParticipantId,
                    picked: Sequence[tuple[int, tuple[bytes, int]]],
                    total_in: int, miner_fee: int) -> Transaction:
        inputs = tuple(
            TxInput(source=key[0], index=key[1], unlock=(client.secret_key,))
            for _, key in picked)
        outputs = [TransactionOutput(
            share=Fraction(request.total_fee, total_in),
            lock=RequestLock(request_id=request.id))]
        change = total_in - request.total_fee - miner_fee
        if change > 0:
            outputs.append(TransactionOutput(
                share=Fraction(change, total_in),
                lock=PayLock(owner=client.public_key)))
        return Transaction(kind=TxKind.RAD_REQUEST, inputs=inputs,
                           outputs=tuple(outputs), payload=request)

    # -- agents ---------------------------------------------------------------

    def _agent_claim_value(self, pk: bytes, track: _Track, epoch: int) -> bytes:
        strategy = self.strategy[pk]
        honest = rad.execute_retrieval(
            track.request, self.source, epoch, witness=pk).canonical_value
        if strategy.kind == "LIAR":
            return b"FALSE:" + pk[:8].hex().encode()
        if strategy.kind == "COLLUDER":
            return b"FALSE:CARTEL:" + str(strategy.cartel).encode()
        return honest

    def _prev_block_hash(self) -> bytes:
        dag = self.state.dag
        for checkpoint in range(dag.open_checkpoint, -1, -1):
            digests = dag.block_digests_at(checkpoint)
            if digests:
                return digests[0]
        raise AssertionError("ledger has no blocks")

    # -- epoch step ----------------------------------------------------------

    def step(self) -> MetricsFrame:
        self.epoch += 1
        epoch = self.epoch
        beacon = eligibility.epoch_randomness(self.state.dag, epoch)

        miners, elected = self._mining_lottery(epoch, beacon)
        accepted = self._produce_blocks(epoch, miners)
        self._post_scheduled(epoch)
        self._assign_tasks(epoch, beacon)
        self._commit_phase(epoch)
        self._reveal_phase(epoch)
        resolved, correct = self._resolve_phase(epoch)
        self._deliver_phase(epoch, beacon)
        self._update_reputation(epoch)

        frame = MetricsFrame(
            epoch=epoch,
            miners=elected,
            blocks=accepted,
            resolved=resolved,
            correct=correct,
            supply_nanowit=self.state.supply,
            pool_carry=self.rep.pool,
            reputations={
                pk.hex(): str(score)
                for pk, score in sorted(self.rep.scores.items())
            },
        )
        self.frames.append(frame)
        return frame

    def _mining_lottery(self, epoch: int, beacon: RandomBeacon,
                        ) -> tuple[list[tuple[ParticipantId, EligibilityProof]], int]:
        """Block producers for the epoch, plus the elected (tier-1) count.

        Producers come from the lowest backup tier with at least one winner;
        the elected count is the tier-1 lottery outcome, whose long-run mean
        is 1 per epoch.  The two differ exactly when backup tiers rescue an
        epoch nobody won outright.
        """
        influences = eligibility.influence_map(self.rep)
        elected = 0
        for tier in range(1, self.scenario.backup_cap + 1):
            winners = []
            for participant in self.rep.participants:
                inf = influences.get(participant.public_key)
                if inf is None:
                    continue
                proof = eligibility.check_eligibility(
                    participant, epoch, beacon, TaskKind.MINE, tier, inf)
                if proof is not None:
                    winners.append((participant, proof))
            if tier == 1:
                elected = len(winners)
            if winners:
                return winners, elected
        return [], elected

    def _division_candidates(self, epoch: int) -> None:
        """Build escrow divisions for requests whose commitments are all in."""
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.division_tx is not None or track.tx_id is None:
                continue
            if track.request.state is not RequestState.COMMITTING:
                continue
            if len(track.committed) < track.request.replication:
                continue
            entry = self.overlay.dag.requests.get(rid)
            if entry is None:
                continue
            committers = sorted(track.committed)
            escrow_value = track.request.total_fee
            witness_total = track.request.witness_fee
            share_each = witness_total // len(committers)
            outputs = []
            for pk in committers:
                if share_each > 0:
                    outputs.append(TransactionOutput(
                        share=Fraction(share_each, escrow_value),
                        lock=CommitLock(request_id=rid, witness=pk,
                                        commitment=track.committed[pk])))
            if track.request.bridge_fee > 0:
                outputs.append(TransactionOutput(
                    share=Fraction(track.request.bridge_fee, escrow_value),
                    lock=RequestLock(request_id=rid)))
            tx = Transaction(
                kind=TxKind.VALUE_TRANSFER,
                inputs=(TxInput(source=entry.escrow[0], index=entry.escrow[1]),),
                outputs=tuple(outputs),
                payload=Settlement(request_id=rid, phase=SettlementPhase.DIVISION))
            if self._broadcast(tx):
                track.division_tx = tx.id
                for index, output in enumerate(tx.outputs):
                    if isinstance(output.lock, CommitLock):
                        track.commit_outputs[output.lock.witness] = (tx.id, index)
                    elif isinstance(output.lock, RequestLock):
                        track.bridge_output = (tx.id, index)
                track.request = rad.lifecycle_step(
                    track.request, rad.Event(EventKind.ALL_COMMITTED))

    def _produce_blocks(self, epoch: int,
                        miners: list[tuple[ParticipantId, EligibilityProof]],
                        ) -> int:
        self._division_candidates(epoch)
        if not miners:
            return 0
        candidates = [
            (tx.id, self.mempool_meta[tx.id][0], self.mempool_meta[tx.id][1])
            for tx in self.mempool
        ]
        selected = set(economics.select_transactions(candidates, MAX_BLOCK_BYTES))
        # Dependency closure: drop anything whose in-mempool parent was cut.
        in_pool = {tx.id: tx for tx in self.mempool}
        changed = True
        while changed:
            changed = False
            for tx_id in sorted(selected):
                tx = in_pool[tx_id]
                for inp in tx.inputs:
                    if inp.source in in_pool and inp.source not in selected:
                        selected.discard(tx_id)
                        changed = True
                        break
        pointers = tuple(tid for tid in (tx.id for tx in self.mempool)
                         if tid in selected)
        parents = self._parent_digests(epoch)
        reward = economics.block_reward(epoch, self.scenario.issuance)
        accepted = 0
        dag = self.state.dag
        for participant, proof in sorted(miners, key=lambda m: m[0].public_key):
            block = Block(checkpoint=epoch, parents=parents,
                          tx_pointers=pointers, miner=participant.public_key,
                          reward=reward, leadership_proof=proof)
            dag = ledger.accept_block(dag, block, self.rep,
                                      txs=[in_pool[t] for t in pointers])
            accepted += 1
        if accepted:
            self.state = LedgerState(dag=dag)
            self._rebuild_overlay()
            self._note_mined(epoch)
        return accepted

    def _parent_digests(self, epoch: int) -> tuple[bytes, ...]:
        dag = self.state.dag
        for checkpoint in range(epoch - 1, -1, -1):
            digests = dag.block_digests_at(checkpoint)
            if digests:
                return digests
        return ()

    def _note_mined(self, epoch: int) -> None:
        """React to canonicalization: requests mined, commits settled."""
        dag = self.state.dag
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.mined_epoch is None and rid in dag.requests:
                track.mined_epoch = epoch
                lock = track.request.time_lock
                track.activation_epoch = max(epoch, lock) if lock else epoch
            if track.division_tx is not None and track.division_epoch is None:
                if track.division_tx in dag.canonical_pointer:
                    track.division_epoch = dag.canonical_pointer[track.division_tx]

    def _post_scheduled(self, epoch: int) -> None:
        due = [e for e in self.pending_schedule if e[1].post_epoch <= epoch]
        self.pending_schedule = [e for e in self.pending_schedule
                                 if e[1].post_epoch > epoch]
        retry, self.deferred = self.deferred, []
        for nonce, scheduled in retry + due:
            if not self._fund_request(nonce, scheduled, epoch):
                self.deferred.append((nonce, scheduled))

    def _assign_tasks(self, epoch: int, beacon: RandomBeacon) -> None:
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.activation_epoch is None or epoch < track.activation_epoch:
                continue
            if track.request.undecidable:
                continue
            if track.division_tx is not None:
                continue
            state = track.request.state
            if state is RequestState.POSTED:
                track.request = rad.lifecycle_step(
                    track.request, rad.Event(EventKind.LOCK_EXPIRED, epoch=epoch))
                state = track.request.state
            if state not in (RequestState.ASSIGNABLE, RequestState.ASSIGNED,
                             RequestState.COMMITTING):
                continue
            need = track.request.replication - len(track.committed)
            if need <= 0:
                continue
            proofs, _ = eligibility.assign_task(
                track.request, epoch, beacon, self.rep,
                required=need, exclude=frozenset(track.assigned))
            if not proofs:
                continue
            if track.request.state is RequestState.ASSIGNABLE:
                track.request = rad.lifecycle_step(
                    track.request, rad.Event(EventKind.ASSIGNED, epoch=epoch))
            if track.truth is None:
                track.truth = rad.execute_retrieval(
                    track.request, self.source, epoch).canonical_value
            for proof in proofs:
                track.assigned[proof.participant] = proof

    def _commit_phase(self, epoch: int) -> None:
        prev_hash = self._prev_block_hash()
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.division_tx is not None:
                continue
            for pk in sorted(track.assigned):
                if pk in track.committed:
                    continue
                if self.strategy[pk].kind == "LAZY":
                    continue
                value = self._agent_claim_value(pk, track, epoch)
                commit_digest = rad.commitment_digest(value, pk, prev_hash)
                tx = Transaction(
                    kind=TxKind.COMMIT_PLEDGE,
                    inputs=(TxInput(
                        source=self._escrow_of(track)[0],
                        index=self._escrow_of(track)[1],
                        observe=True),),
                    outputs=(),
                    payload=Commitment(
                        request_id=rid, witness=pk, digest=commit_digest,
                        epoch=epoch,
                        assignment_proof=track.assigned[pk]))
                if self._broadcast(tx):
                    track.claims[pk] = (value, prev_hash)
                    track.committed[pk] = commit_digest
                    track.commit_epochs[pk] = epoch
                    track.request = rad.lifecycle_step(
                        track.request,
                        rad.Event(EventKind.COMMITTED, witness=pk))

    def _escrow_of(self, track: _Track) -> tuple[bytes, int]:
        entry = self.overlay.dag.requests.get(track.request.id)
        if entry is None:
            entry = self.state.dag.requests[track.request.id]
        return entry.escrow

    def _reveal_phase(self, epoch: int) -> None:
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.division_epoch is None or track.resolved_epoch is not None:
                continue
            for pk in sorted(track.commit_outputs):
                if pk in track.revealed:
                    continue
                if self.strategy[pk].kind == "NO_REVEAL":
                    continue
                value, prev_hash = track.claims[pk]
                source, index = track.commit_outputs[pk]
                tx = Transaction(
                    kind=TxKind.REVEAL_REDEEM,
                    inputs=(TxInput(source=source, index=index,
                                    unlock=(value, prev_hash)),),
                    outputs=(TransactionOutput(
                        share=Fraction(1), lock=PayLock(owner=pk)),),
                    payload=Reveal(request_id=rid, witness=pk,
                                   canonical_value=value,
                                   prev_block_hash=prev_hash))
                if self._broadcast(tx):
                    track.revealed[pk] = value
                    track.reveal_txids[pk] = tx.id
                    track.request = rad.lifecycle_step(
                        track.request, rad.Event(EventKind.REVEALED, witness=pk))

    def _resolve_phase(self, epoch: int) -> tuple[int, int]:
        """Resolve requests whose reveals are complete or timed out."""
        due: list[_Track] = []
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.resolved_epoch is not None or track.division_epoch is None:
                continue
            committers = set(track.commit_outputs)
            all_in = committers and committers <= set(track.revealed)
            timed_out = epoch >= track.division_epoch + rad.REVEAL_TIMEOUT_EPOCHS
            if all_in or timed_out:
                due.append(track)
        if not due:
            return 0, 0

        claims: list[Claim] = []
        refundable: list[_Track] = []
        for track in due:
            if len(track.revealed) >= 2:
                claims.extend(
                    Claim(request_id=track.request.id, witness=pk,
                          canonical_value=value)
                    for pk, value in sorted(track.revealed.items()))
            else:
                refundable.append(track)

        verdicts: dict[bytes, consensus.Verdict] = {}
        epoch_verdict = reputation.EpochVerdict()
        if claims:
            verdicts, epoch_verdict = consensus.resolve_epoch(claims, self.rep)

        refund_ids = {track.request.id for track in refundable}
        dishonest = dict(epoch_verdict.dishonest)
        resolved = correct = 0
        for track in due:
            rid = track.request.id
            track.resolved_epoch = epoch
            resolved += 1
            non_revealers = sorted(set(track.commit_outputs) - set(track.revealed))
            for pk in non_revealers:
                dishonest[pk] = Fraction(1)
            verdict = verdicts.get(rid)
            if rid in refund_ids or verdict is None or verdict.contested:
                track.contested = True
                self._settle_refund(track)
                self.verdict_log.append(
                    "epoch=%d request=%s winner=CONTESTED supporters=0 deviators=%d"
                    % (epoch, rid[:8].hex(), len(non_revealers)))
            else:
                track.winning = verdict.winning_value
                if track.winning == track.truth:
                    correct += 1
                forfeiters = sorted(
                    set(verdict.deviators) | set(non_revealers))
                self._settle_forfeits(track, forfeiters,
                                      sorted(verdict.supporters))
                self.verdict_log.append(
                    "epoch=%d request=%s winner=%s supporters=%d deviators=%d"
                    % (epoch, rid[:8].hex(),
                       digest(track.winning)[:8].hex(),
                       len(verdict.supporters),
                       len(forfeiters)))
            track.request = rad.lifecycle_step(
                track.request, rad.Event(EventKind.RESOLVED, epoch=epoch))
            if track.request.deliver is None:
                track.request = rad.lifecycle_step(
                    track.request, rad.Event(EventKind.DELIVERED, epoch=epoch))
                if track.bridge_output is not None:
                    self._settle_bridge_refund(track)

        honest = frozenset(epoch_verdict.honest - set(dishonest))
        self.pending_verdicts.append(reputation.EpochVerdict(
            honest=honest,
            dishonest=dishonest,
            task_fulfillers=honest,
        ))
        return resolved, correct

    def _settle_forfeits(self, track: _Track, forfeiters: Sequence[bytes],
                         supporters: Sequence[bytes]) -> None:
        """Deviators' pledges are re-paid to the request's supporters."""
        for pk in forfeiters:
            if pk in track.reveal_txids:
                self._evict(track.reveal_txids[pk])
                track.reveal_txids.pop(pk, None)
        keys = [track.commit_outputs[pk] for pk in forfeiters
                if pk in track.commit_outputs]
        keys = [key for key in keys if key in self.overlay.dag.utxo]
        if not keys:
            return
        recipients = list(supporters) or [track.client]
        outputs = tuple(
            TransactionOutput(share=Fraction(1, len(recipients)),
                              lock=PayLock(owner=pk))
            for pk in recipients)
        tx = Transaction(
            kind=TxKind.VALUE_TRANSFER,
            inputs=tuple(TxInput(source=k[0], index=k[1]) for k in sorted(keys)),
            outputs=outputs,
            payload=Settlement(request_id=track.request.id,
                               phase=SettlementPhase.FORFEIT))
        self._broadcast(tx)

    def _settle_refund(self, track: _Track) -> None:
        """Contested or starved request: remaining escrow back to the client."""
        rid = track.request.id
        for pk in sorted(track.reveal_txids):
            self._evict(track.reveal_txids[pk])
        track.reveal_txids.clear()
        keys: list[tuple[bytes, int]] = []
        entry = self.overlay.dag.requests.get(rid)
        if track.division_tx is None and entry is not None:
            keys.append(entry.escrow)
        keys.extend(track.commit_outputs.values())
        if track.bridge_output is not None:
            keys.append(track.bridge_output)
        keys = [key for key in sorted(set(keys)) if key in self.overlay.dag.utxo]
        if not keys:
            return
        tx = Transaction(
            kind=TxKind.VALUE_TRANSFER,
            inputs=tuple(TxInput(source=k[0], index=k[1]) for k in keys),
            outputs=(TransactionOutput(share=Fraction(1),
                                       lock=PayLock(owner=track.client)),),
            payload=Settlement(request_id=rid, phase=SettlementPhase.REFUND))
        self._broadcast(tx)

    def _settle_bridge_refund(self, track: _Track) -> None:
        """No deliver clause: the bridge reserve goes back to the client."""
        key = track.bridge_output
        if key is None or key not in self.overlay.dag.utxo:
            return
        tx = Transaction(
            kind=TxKind.VALUE_TRANSFER,
            inputs=(TxInput(source=key[0], index=key[1]),),
            outputs=(TransactionOutput(share=Fraction(1),
                                       lock=PayLock(owner=track.client)),),
            payload=Settlement(request_id=track.request.id,
                               phase=SettlementPhase.REFUND))
        self._broadcast(tx)
        track.bridge_output = None

    def _deliver_phase(self, epoch: int, beacon: RandomBeacon) -> None:
        delivered_bridges: list[bytes] = []
        for rid in sorted(self.tracks):
            track = self.tracks[rid]
            if track.request.state is not RequestState.RESOLVED:
                continue
            if track.request.deliver is None:
                continue
            if track.resolved_epoch == epoch:
                continue  # delivery lottery starts the epoch after resolution
            multiplier = 1 + track.delivery_deficit
            proofs, _ = eligibility.assign_task(
                track.request, epoch, beacon, self.rep,
                required=multiplier, kind=TaskKind.DELIVER)
            if not proofs:
                track.delivery_deficit += 1
                continue
            bridge = proofs[0].participant
            self.delivery_log.append(
                "epoch=%d request=%s bridge=%s target=%s"
                % (epoch, rid[:8].hex(), bridge[:8].hex(), track.request.deliver))
            if track.bridge_output is not None and \
                    track.bridge_output in self.overlay.dag.utxo:
                tx = Transaction(
                    kind=TxKind.VALUE_TRANSFER,
                    inputs=(TxInput(source=track.bridge_output[0],
                                    index=track.bridge_output[1]),),
                    outputs=(TransactionOutput(share=Fraction(1),
                                               lock=PayLock(owner=bridge)),),
                    payload=Settlement(request_id=rid,
                                       phase=SettlementPhase.BRIDGE))
                self._broadcast(tx)
            track.request = rad.lifecycle_step(
                track.request, rad.Event(EventKind.DELIVERED, epoch=epoch))
            delivered_bridges.append(bridge)
        self.pending_bridge_fulfillers.update(delivered_bridges)

    def _update_reputation(self, epoch: int) -> None:
        if epoch % self.scenario.recomputation_period != 0:
            return
        honest: set[bytes] = set()
        dishonest: dict[bytes, Fraction] = {}
        fulfillers: set[bytes] = set(self.pending_bridge_fulfillers)
        for v in self.pending_verdicts:
            honest |= v.honest
            fulfillers |= v.task_fulfillers
            for pk, deviation in v.dishonest.items():
                dishonest[pk] = max(dishonest.get(pk, Fraction(0)), deviation)
        honest -= set(dishonest)
        fulfillers -= set(dishonest)
        verdict = reputation.EpochVerdict(
            honest=frozenset(honest),
            dishonest=dishonest,
            task_fulfillers=frozenset(fulfillers))
        self.pending_verdicts = []
        self.pending_bridge_fulfillers = set()
        self.rep = reputation.epoch_update(self.rep, verdict,
                                           self.scenario.penalty_rate)

    # -- run / snapshot -------------------------------------------------------

    def run_to(self, epochs: int) -> None:
        while self.epoch < epochs:
            self.step()

    def result(self) -> RunResult:
        return RunResult(frames=tuple(self.frames), state=self.state,
                         rep=self.rep, verdict_log=tuple(self.verdict_log),
                         delivery_log=tuple(self.delivery_log))

    def state_digest(self) -> str:
        ledger_doc = ledger.snapshot_document(self.state)
        rep_doc = json.dumps(
            {pk.hex(): str(score) for pk, score in sorted(self.rep.scores.items())}
            | {"pool": str(self.rep.pool)},
            sort_keys=True)
        frames = "\n".join(f.csv_row() for f in self.frames)
        return digest(ledger_doc.encode(), rep_doc.encode(), frames.encode()).hex()


def run(scenario: Scenario, epochs: int | None = None) -> RunResult:
    """Run a scenario end to end and return frames plus final state."""
    harness = SimHarness(scenario)
    harness.run_to(scenario.epochs if epochs is None else epochs)
    return harness.result()


# --- snapshots ---------------------------------------------------------------

def scenario_document(scenario: Scenario) -> dict:
    """JSON-stable rendering of a scenario (for snapshots)."""
    return {
        "population": scenario.population,
        "epochs": scenario.epochs,
        "seed": scenario.seed,
        "decay": str(scenario.decay),
        "penalty_rate": str(scenario.penalty_rate),
        "behavior_mix": {k: str(v) for k, v in sorted(scenario.behavior_mix.items())},
        "backup_cap": scenario.backup_cap,
        "replication_cap": scenario.replication_cap,
        "recomputation_period": scenario.recomputation_period,
        "issuance": {
            "initial_reward_nanowit": scenario.issuance.initial_reward,
            "halving_period": scenario.issuance.halving_period,
        },
        "fees": {
            "witness_fee_rate_nanowit": scenario.fees.witness_fee_rate,
            "min_miner_fee_rate_nanowit": scenario.fees.min_miner_fee_rate,
        },
        "sources": {
            key: list(value) if not isinstance(value, str) else value
            for key, value in sorted(scenario.sources.items())
        },
        "requests": [
            {
                "post_epoch": r.post_epoch,
                "paths": [
                    {
                        "source_key": p.source_key,
                        "normalization": p.normalization.value,
                        "parameter": p.parameter,
                        "complexity": p.declared_complexity,
                    }
                    for p in r.paths
                ],
                "aggregation": r.aggregation.value,
                "replication": r.replication,
                "witness_fee_nanowit": r.witness_fee,
                "bridge_fee_nanowit": r.bridge_fee,
                "time_lock": r.time_lock,
                "undecidable": r.undecidable,
                "deliver": r.deliver,
            }
            for r in scenario.requests
        ],
    }


def scenario_from_document(doc: dict) -> Scenario:
    from .economics import FeeParams, IssuanceParams
    from .rad import Aggregation, Normalization, RetrievalPath

    requests = tuple(
        ScheduledRequest(
            post_epoch=r["post_epoch"],
            paths=tuple(
                RetrievalPath(
                    source_key=p["source_key"],
                    normalization=Normalization(p["normalization"]),
                    parameter=p["parameter"],
                    declared_complexity=p["complexity"],
                )
                for p in r["paths"]
            ),
            aggregation=Aggregation(r["aggregation"]),
            replication=r["replication"],
            witness_fee=r["witness_fee_nanowit"],
            bridge_fee=r["bridge_fee_nanowit"],
            time_lock=r["time_lock"],
            undecidable=r["undecidable"],
            deliver=r["deliver"],
        )
        for r in doc["requests"]
    )
    return Scenario(
        population=doc["population"],
        epochs=doc["epochs"],
        seed=doc["seed"],
        behavior_mix={k: Fraction(v) for k, v in doc["behavior_mix"].items()},
        decay=Fraction(doc["decay"]),
        penalty_rate=Fraction(doc["penalty_rate"]),
        requests=requests,
        sources={
            key: tuple(value) if isinstance(value, list) else value
            for key, value in doc["sources"].items()
        },
        issuance=IssuanceParams(
            initial_reward=doc["issuance"]["initial_reward_nanowit"],
            halving_period=doc["issuance"]["halving_period"],
        ),
        fees=FeeParams(
            witness_fee_rate=doc["fees"]["witness_fee_rate_nanowit"],
            min_miner_fee_rate=doc["fees"]["min_miner_fee_rate_nanowit"],
        ),
        backup_cap=doc["backup_cap"],
        replication_cap=doc["replication_cap"],
        recomputation_period=doc["recomputation_period"],
    )


def snapshot(harness: SimHarness) -> str:
    """Serialize a run point as scenario + epoch + state digest.

    Restoring replays the scenario to the recorded epoch (bit-determinism
    makes the replay exact) and verifies the digest, so a tampered or
    truncated file cannot restore silently.
    """
    body = {
        "version": SNAPSHOT_VERSION,
        "scenario": scenario_document(harness.scenario),
        "epoch": harness.epoch,
        "state_digest": harness.state_digest(),
    }
    payload = json.dumps(body, sort_keys=True, separators=(",", ":"))
    checksum = digest(payload.encode()).hex()
    return json.dumps({"checksum": checksum, "body": body},
                      sort_keys=True, separators=(",", ":")) + "\n"


def restore(text: str) -> SimHarness:
    try:
        document = json.loads(text)
        body = document["body"]
        checksum = document["checksum"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CorruptSnapshot("snapshot cannot be decoded: %s" % exc) from exc
    payload = json.dumps(body, sort_keys=True, separators=(",", ":"))
    if digest(payload.encode()).hex() != checksum:
        raise CorruptSnapshot("snapshot checksum mismatch")
    if body.get("version") != SNAPSHOT_VERSION:
        raise VersionMismatch(
            "snapshot version %r, expected %r"
            % (body.get("version"), SNAPSHOT_VERSION))
    scenario = scenario_from_document(body["scenario"])
    harness = SimHarness(scenario)
    harness.run_to(body["epoch"])
    if harness.state_digest() != body["state_digest"]:
        raise CorruptSnapshot("replayed state does not match the snapshot digest")
    return harness


def write_outputs(result: RunResult, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(result.metrics_csv(), encoding="utf-8")
    (out / "summary.json").write_text(
        json.dumps(result.summary(), sort_keys=True, indent=2) + "\n",
        encoding="utf-8")
    (out / "verdicts.log").write_text(
        "".join(line + "\n" for line in result.verdict_log), encoding="utf-8")
    (out / "deliveries.log").write_text(
        "".join(line + "\n" for line in result.delivery_log), encoding="utf-8")
    (out / "ledger.json").write_text(
        ledger.snapshot_document(result.state) + "\n", encoding="utf-8")
