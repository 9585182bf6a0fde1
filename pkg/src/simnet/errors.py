"""Exception hierarchy shared by all protocol modules.

The CLI maps ``ScenarioError`` subclasses to exit code 2 and every other
``SimnetError`` to exit code 3.
"""

from __future__ import annotations


class SimnetError(Exception):
    """Base class for all protocol and harness errors."""


# --- ledger ---------------------------------------------------------------

class LedgerError(SimnetError):
    pass


class UnknownInput(LedgerError):
    """Transaction input references a missing or already spent output."""


class LockViolation(LedgerError):
    """Unlock witness data does not satisfy the output's lock."""


class MalformedPayload(LedgerError):
    """Kind-specific transaction payload fails validation."""


class InvalidSequence(LedgerError):
    """A transaction in a composition sequence is invalid at its position."""


class BadProof(LedgerError):
    """Block leadership proof fails verification or tier ordering."""


class UnknownParent(LedgerError):
    """Block references an unknown or structurally impossible parent."""


class OversizeBlock(LedgerError):
    """Serialized block exceeds the 1 MiB cap."""


class StaleBlock(LedgerError):
    """Block checkpoint is older than the acceptance horizon."""


# --- eligibility ----------------------------------------------------------

class NoHistory(SimnetError):
    """Epoch randomness requested for epoch 0 or an empty ledger."""


# --- consensus ------------------------------------------------------------

class NoConvergence(SimnetError):
    """Power iteration exceeded its iteration budget."""


# --- rad ------------------------------------------------------------------

class RequestError(SimnetError):
    pass


class ReplicationTooLow(RequestError):
    pass


class ReplicationTooHigh(RequestError):
    pass


class InsufficientFee(RequestError):
    pass


class NoPaths(RequestError):
    pass


class SourceUnavailable(SimnetError):
    """The simulated source oracle holds no value for a key."""


class IllegalTransition(SimnetError):
    """Request lifecycle event not legal in the current state."""


# --- scenario / harness ---------------------------------------------------

class ScenarioError(SimnetError):
    """Base for scenario loading problems; maps to CLI exit code 2."""


class ParseError(ScenarioError):
    pass


class ValidationError(ScenarioError):
    pass


class VersionMismatch(SimnetError):
    """Snapshot produced by a different artifact version."""


class CorruptSnapshot(SimnetError):
    """Snapshot file fails its integrity digest or cannot be decoded."""
