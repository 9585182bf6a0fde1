"""Deterministic desk-scale simulator for a reputation-weighted oracle network.

The package splits along protocol boundaries:

* ``ledger``      -- DAG of blocks, percentage-valued outputs, tx algebra
* ``reputation``  -- conserved scores, demurrage, redistribution
* ``eligibility`` -- beacons and reputation-weighted lotteries
* ``consensus``   -- truth-by-consensus claim resolution with weighted PCA
* ``rad``         -- retrieve-attest-deliver requests and commit/reveal
* ``economics``   -- issuance schedule, fees, block transaction selection
* ``harness``     -- the scenario-driven multi-agent epoch loop
"""

from .economics import (
    FeeParams,
    IssuanceParams,
    block_reward,
    cumulative_supply,
    select_transactions,
    split_witness_reward,
    wit,
    witness_fee,
)
from .errors import SimnetError
from .harness import RunResult, SimHarness, restore, run, snapshot
from .identity import ParticipantId
from .scenario import Scenario, Strategy, load_scenario

__version__ = "0.1.0"

__all__ = [
    "FeeParams",
    "IssuanceParams",
    "ParticipantId",
    "RunResult",
    "Scenario",
    "SimHarness",
    "SimnetError",
    "Strategy",
    "block_reward",
    "cumulative_supply",
    "load_scenario",
    "restore",
    "run",
    "select_transactions",
    "snapshot",
    "split_witness_reward",
    "wit",
    "witness_fee",
]
