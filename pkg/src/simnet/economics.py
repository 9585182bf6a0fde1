"""Token issuance schedule, fee computation and block transaction selection.

All token amounts are unsigned integers in nanoWit (10^9 nanoWit = 1 Wit);
arithmetic is exact and every division floors, with remainders routed to the
block miner so that value conservation holds to the nanoWit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

NANOWIT_PER_WIT = 10**9
MAX_BLOCK_BYTES = 1_048_576


def wit(amount: int) -> int:
    """Whole Wit expressed in nanoWit."""
    return amount * NANOWIT_PER_WIT


@dataclass(frozen=True)
class IssuanceParams:
    """Geometric issuance: the block reward halves every ``halving_period``."""

    initial_reward: int = wit(500)      # nanoWit per block at height 0
    halving_period: int = 1_750_000     # blocks between halvings

    def __post_init__(self) -> None:
        if self.initial_reward <= 0 or self.halving_period <= 0:
            raise ValueError("issuance parameters must be positive")


@dataclass(frozen=True)
class FeeParams:
    witness_fee_rate: int = wit(1)      # nanoWit per work unit per witness
    min_miner_fee_rate: int = 0         # nanoWit per serialized byte

    def __post_init__(self) -> None:
        if self.witness_fee_rate < 0 or self.min_miner_fee_rate < 0:
            raise ValueError("fee rates must be non-negative")


def block_reward(height: int, params: IssuanceParams = IssuanceParams()) -> int:
    """Reward in nanoWit for the block at ``height``; 0 once it underflows."""
    if height < 0:
        raise ValueError("height must be non-negative")
    age = height // params.halving_period
    if age >= params.initial_reward.bit_length():
        return 0
    return params.initial_reward >> age


def cumulative_supply(height: int, params: IssuanceParams = IssuanceParams()) -> int:
    """Exact sum of block rewards for all heights below ``height``."""
    if height < 0:
        raise ValueError("height must be non-negative")
    total = 0
    age = 0
    while True:
        reward = params.initial_reward >> age
        if reward == 0:
            break
        start = age * params.halving_period
        if start >= height:
            break
        count = min(params.halving_period, height - start)
        total += reward * count
        age += 1
    return total


def supply_limit(params: IssuanceParams = IssuanceParams()) -> int:
    """Limit of ``cumulative_supply`` once the reward has underflowed to 0."""
    horizon = params.initial_reward.bit_length() * params.halving_period
    return cumulative_supply(horizon, params)


def witness_fee(replication: int, path_costs: Iterable[int],
                params: FeeParams = FeeParams()) -> int:
    """Fee proportional to the replication factor times total path complexity."""
    if replication < 2:
        raise ValueError("replication factor must be at least 2")
    costs = list(path_costs)
    if any(c < 1 for c in costs):
        raise ValueError("path complexity costs must be >= 1")
    return params.witness_fee_rate * replication * sum(costs)


def bridge_fee(delivery_cost: int, params: FeeParams = FeeParams()) -> int:
    """Delivery fee; same rate structure as witness fees with one bridge."""
    if delivery_cost < 0:
        raise ValueError("delivery cost must be non-negative")
    return params.witness_fee_rate * delivery_cost


def split_witness_reward(fee: int, committers: int) -> tuple[int, int]:
    """Per-witness share and the remainder that accrues to the block miner."""
    if committers < 1:
        raise ValueError("at least one committer required")
    share = fee // committers
    return share, fee - share * committers


def select_transactions(
    mempool: Sequence[tuple[bytes, int, int]],
    limit: int = MAX_BLOCK_BYTES,
) -> list[bytes]:
    """Greedy fee-per-byte selection of (tx id, fee, size) entries.

    Orders candidates by descending fee per byte with ascending tx id as the
    tie break, then takes each one that still fits.  Zero-fee transactions
    are ordinary candidates: they rank last but are included whenever space
    remains.
    """
    if limit > MAX_BLOCK_BYTES:
        raise ValueError("selection limit exceeds the block size cap")
    for _, fee, size in mempool:
        if size <= 0:
            raise ValueError("transaction size must be positive")
        if fee < 0:
            raise ValueError("transaction fee must be non-negative")
    ranked = sorted(mempool, key=lambda e: (-(e[1] / e[2]), e[0]))
    chosen: list[bytes] = []
    used = 0
    for tx_id, _, size in ranked:
        if used + size <= limit:
            chosen.append(tx_id)
            used += size
    return chosen
