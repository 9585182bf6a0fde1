"""Retrieve-attest-deliver request model and lifecycle.

Retrieval is simulated: a request's paths read keys from a deterministic
source oracle instead of fetching URLs, then apply a fixed set of
normalizations and one aggregation.  The commit/reveal scheme hides each
witness's claim behind a nonced hash (claim, witness key, previous block
hash) until every assigned witness has committed.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from decimal import Decimal, ROUND_HALF_EVEN, InvalidOperation
from statistics import median
from typing import Callable, Mapping, Sequence

from .consensus import Claim
from .eligibility import EligibilityProof
from .errors import (
    IllegalTransition,
    InsufficientFee,
    NoPaths,
    ReplicationTooHigh,
    ReplicationTooLow,
    SourceUnavailable,
)
from .economics import FeeParams
from .hashing import canonical, digest

MIN_REPLICATION = 2
DEFAULT_REPLICATION_CAP = 100
REVEAL_TIMEOUT_EPOCHS = 2

ERROR_CLAIM = b"\x00ERROR:SOURCE_UNAVAILABLE"


# --- retrieval ------------------------------------------------------------

class Normalization(enum.Enum):
    IDENTITY = "identity"
    SELECT_FIELD = "select-field"
    TO_LOWERCASE = "to-lowercase"
    ROUND_DECIMAL = "round-decimal"


class Aggregation(enum.Enum):
    FIRST = "first"
    MEDIAN_NUMERIC = "median-numeric"
    MODE = "mode"
    CONCAT_SORTED = "concat-sorted"


@dataclass(frozen=True)
class RetrievalPath:
    """One acquisition (a source oracle key) plus one normalization."""

    source_key: str
    normalization: Normalization = Normalization.IDENTITY
    parameter: str | None = None
    declared_complexity: int = 1

    def __post_init__(self) -> None:
        if self.declared_complexity < 1:
            raise ValueError("declared complexity must be >= 1")
        if self.normalization in (Normalization.SELECT_FIELD,
                                  Normalization.ROUND_DECIMAL):
            if self.parameter is None:
                raise ValueError("%s requires a parameter" % self.normalization.value)

    def serial(self) -> bytes:
        return canonical(
            self.source_key.encode(),
            self.normalization.value.encode(),
            (self.parameter or "").encode(),
            self.declared_complexity,
        )


class SourceOracle:
    """Deterministic stand-in for the web: keys map to per-epoch values.

    A value may be a single string (constant over the run) or a sequence
    indexed by epoch, clamped to its last entry.
    """

    def __init__(self, table: Mapping[str, str | Sequence[str]]):
        self._table = dict(table)

    def value_at(self, key: str, epoch: int) -> str:
        if key not in self._table:
            raise SourceUnavailable("source oracle has no key %r" % key)
        entry = self._table[key]
        if isinstance(entry, str):
            return entry
        if not entry:
            raise SourceUnavailable("source oracle key %r has no values" % key)
        return entry[min(epoch, len(entry) - 1)]

    def table(self) -> dict[str, str | Sequence[str]]:
        return dict(self._table)


def _normalize(value: str, path: RetrievalPath) -> str:
    kind = path.normalization
    if kind is Normalization.IDENTITY:
        return value
    if kind is Normalization.TO_LOWERCASE:
        return value.lower()
    if kind is Normalization.SELECT_FIELD:
        # Record syntax: semicolon-separated "name=value" pairs.
        for part in value.split(";"):
            name, _, item = part.partition("=")
            if name.strip() == path.parameter:
                return item.strip()
        raise SourceUnavailable("field %r absent from source value" % path.parameter)
    if kind is Normalization.ROUND_DECIMAL:
        places = int(path.parameter or "0")
        try:
            quantum = Decimal(1).scaleb(-places)
            return str(Decimal(value).quantize(quantum, rounding=ROUND_HALF_EVEN))
        except InvalidOperation as exc:
            raise SourceUnavailable("value %r is not numeric" % value) from exc
    raise AssertionError("unreachable normalization %r" % kind)


def _aggregate(values: Sequence[str], aggregation: Aggregation) -> str:
    if aggregation is Aggregation.FIRST:
        return values[0]
    if aggregation is Aggregation.MEDIAN_NUMERIC:
        try:
            return str(median(Decimal(v) for v in values))
        except InvalidOperation as exc:
            raise SourceUnavailable("non-numeric value under median") from exc
    if aggregation is Aggregation.MODE:
        counts: dict[str, int] = {}
        for v in values:
            counts[v] = counts.get(v, 0) + 1
        best = max(counts.values())
        return min(v for v, c in counts.items() if c == best)
    if aggregation is Aggregation.CONCAT_SORTED:
        return "|".join(sorted(values))
    raise AssertionError("unreachable aggregation %r" % aggregation)


# --- requests ---------------------------------------------------------------

class RequestState(enum.Enum):
    POSTED = "posted"
    ASSIGNABLE = "assignable"
    ASSIGNED = "assigned"
    COMMITTING = "committing"
    REVEALING = "revealing"
    RESOLVED = "resolved"
    DELIVERED = "delivered"


@dataclass(frozen=True)
class RadRequest:
    """A retrieve-attest-deliver job plus its lifecycle state.

    ``nonce`` distinguishes separately posted jobs with identical contents;
    without it a client re-requesting the same retrieval would collide with
    its own earlier request.
    """

    paths: tuple[RetrievalPath, ...]
    aggregation: Aggregation
    replication: int
    witness_fee: int
    bridge_fee: int = 0
    time_lock: int | None = None
    undecidable: bool = False
    deliver: str | None = None          # delivery stub descriptor
    client: bytes = b"\x00" * 32        # refund / result owner key
    nonce: int = 0
    state: RequestState = RequestState.POSTED

    @property
    def id(self) -> bytes:
        """Content id over every field that defines the job (not the state)."""
        return digest(
            canonical(*(p.serial() for p in self.paths)),
            self.aggregation.value.encode(),
            self.replication,
            self.witness_fee,
            self.bridge_fee,
            0 if self.time_lock is None else self.time_lock + 1,
            int(self.undecidable),
            (self.deliver or "").encode(),
            self.client,
            self.nonce,
        )

    @property
    def total_fee(self) -> int:
        return self.witness_fee + self.bridge_fee

    def serialized_size(self) -> int:
        return len(canonical(*(p.serial() for p in self.paths))) + 64


def validate_request(
    request: RadRequest,
    attached_value: int,
    fee_params: FeeParams,
    replication_cap: int = DEFAULT_REPLICATION_CAP,
) -> None:
    """Admission check for a posted request; raises a RequestError subclass."""
    if not request.paths:
        raise NoPaths("a request needs at least one retrieval path")
    if request.replication < MIN_REPLICATION:
        raise ReplicationTooLow(
            "replication %d below the minimum of %d"
            % (request.replication, MIN_REPLICATION))
    if request.replication > replication_cap:
        raise ReplicationTooHigh(
            "replication %d above the cap of %d"
            % (request.replication, replication_cap))
    min_miner_fee = fee_params.min_miner_fee_rate * request.serialized_size()
    needed = request.total_fee + min_miner_fee
    if attached_value < needed:
        raise InsufficientFee(
            "attached %d nanoWit but %d required" % (attached_value, needed))


def execute_retrieval(
    request: RadRequest,
    source: SourceOracle,
    epoch: int,
    witness: bytes = b"\x00" * 32,
    perturb: Callable[[bytes], bytes] | None = None,
) -> Claim:
    """Run every retrieval path, aggregate, and canonicalize to a claim.

    ``perturb`` is the witness's view hook: identity for honest agents,
    value substitution for liars.  Any unavailable source turns the whole
    claim into the distinguished ERROR value, which is still committable.
    """
    try:
        results = [
            _normalize(source.value_at(path.source_key, epoch), path)
            for path in request.paths
        ]
        value = _aggregate(results, request.aggregation).encode()
    except SourceUnavailable:
        value = ERROR_CLAIM
    if perturb is not None:
        value = perturb(value)
    return Claim(request_id=request.id, witness=witness, canonical_value=value)


# --- commit / reveal --------------------------------------------------------

@dataclass(frozen=True)
class Commitment:
    request_id: bytes
    witness: bytes
    digest: bytes
    epoch: int
    assignment_proof: EligibilityProof | None = None


@dataclass(frozen=True)
class Reveal:
    request_id: bytes
    witness: bytes
    canonical_value: bytes
    prev_block_hash: bytes


def commitment_digest(claim_value: bytes, witness_pk: bytes,
                      prev_block_hash: bytes) -> bytes:
    """Nonced hash of a claim: distinct per witness, bound to chain state."""
    return digest(claim_value, witness_pk, prev_block_hash)


def verify_reveal(commit: Commitment, reveal: Reveal) -> bool:
    """True iff the reveal opens the commitment it targets."""
    if commit.request_id != reveal.request_id or commit.witness != reveal.witness:
        return False
    recomputed = commitment_digest(reveal.canonical_value, reveal.witness,
                                   reveal.prev_block_hash)
    return recomputed == commit.digest


# --- lifecycle --------------------------------------------------------------

class EventKind(enum.Enum):
    POSTED = "posted"
    LOCK_EXPIRED = "lock_expired"
    ASSIGNED = "assigned"
    COMMITTED = "committed"
    ALL_COMMITTED = "all_committed"
    REVEALED = "revealed"
    RESOLVED = "resolved"
    DELIVERED = "delivered"
    RELAUNCHED = "relaunched"
    REPLACED_BY_FEE = "replaced_by_fee"


@dataclass(frozen=True)
class Event:
    kind: EventKind
    epoch: int | None = None
    witness: bytes | None = None
    new_reward: int | None = None
    new_paths: tuple[RetrievalPath, ...] | None = None


_COMMIT_PHASE = (RequestState.ASSIGNED, RequestState.COMMITTING)


def lifecycle_step(request: RadRequest, event: Event) -> RadRequest:
    """Advance a request through its legal lifecycle transitions.

    Undecidable requests accept only RELAUNCHED (which clears the flag and
    restarts the request); everything else on them is illegal because no
    witness may pledge a solution.  Replace-by-fee raises the reward, keeps
    the state, and demands identical retrieval paths.
    """
    kind = event.kind

    if kind is EventKind.RELAUNCHED:
        return replace(request, undecidable=False, state=RequestState.POSTED)

    if kind is EventKind.REPLACED_BY_FEE:
        if event.new_paths is not None and event.new_paths != request.paths:
            raise IllegalTransition("replace-by-fee must keep the retrieval paths")
        if event.new_reward is None or event.new_reward <= request.witness_fee:
            raise IllegalTransition("replace-by-fee must raise the reward")
        return replace(request, witness_fee=event.new_reward)

    if request.undecidable:
        if kind is EventKind.POSTED and request.state is RequestState.POSTED:
            return request  # posting is legal; the request then sits idle
        raise IllegalTransition(
            "undecidable request accepts only a relaunch, not %s" % kind.value)

    state = request.state
    if kind is EventKind.POSTED:
        if state is not RequestState.POSTED:
            raise IllegalTransition("request already posted")
        if request.time_lock is None:
            return replace(request, state=RequestState.ASSIGNABLE)
        return request

    if kind is EventKind.LOCK_EXPIRED:
        if state is not RequestState.POSTED:
            raise IllegalTransition("lock expiry only applies to posted requests")
        if request.time_lock is not None and (
                event.epoch is None or event.epoch < request.time_lock):
            raise IllegalTransition("time lock has not expired yet")
        return replace(request, state=RequestState.ASSIGNABLE)

    if kind is EventKind.ASSIGNED:
        if state is not RequestState.ASSIGNABLE:
            raise IllegalTransition("cannot assign a request in state %s" % state.value)
        return replace(request, state=RequestState.ASSIGNED)

    if kind is EventKind.COMMITTED:
        if state not in _COMMIT_PHASE:
            raise IllegalTransition("cannot commit in state %s" % state.value)
        return replace(request, state=RequestState.COMMITTING)

    if kind is EventKind.ALL_COMMITTED:
        if state not in _COMMIT_PHASE:
            raise IllegalTransition("cannot close commits in state %s" % state.value)
        return replace(request, state=RequestState.REVEALING)

    if kind is EventKind.REVEALED:
        if state is not RequestState.REVEALING:
            raise IllegalTransition("cannot reveal in state %s" % state.value)
        return request

    if kind is EventKind.RESOLVED:
        if state is not RequestState.REVEALING:
            raise IllegalTransition("cannot resolve in state %s" % state.value)
        return replace(request, state=RequestState.RESOLVED)

    if kind is EventKind.DELIVERED:
        if state is not RequestState.RESOLVED:
            raise IllegalTransition("cannot deliver in state %s" % state.value)
        return replace(request, state=RequestState.DELIVERED)

    raise AssertionError("unreachable event %r" % kind)
