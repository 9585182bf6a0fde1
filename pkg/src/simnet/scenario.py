"""Declarative scenario files driving a simulation run.

A scenario is a TOML document naming the population, the behavior mix, the
economics, the simulated web sources and the scheduled requests.  Unknown
keys are errors: a typo in a scenario must fail loudly rather than silently
run a different experiment.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

import tomli

from .economics import NANOWIT_PER_WIT, FeeParams, IssuanceParams
from .errors import ParseError, ValidationError
from .rad import Aggregation, Normalization, RetrievalPath

DEFAULT_BACKUP_CAP = 8
DEFAULT_REPLICATION_CAP = 100


@dataclass(frozen=True)
class Strategy:
    """Fixed per-participant behavior for the whole run."""

    kind: str                 # HONEST | LAZY | LIAR | COLLUDER | NO_REVEAL
    cartel: int | None = None

    KINDS = ("HONEST", "LAZY", "LIAR", "COLLUDER", "NO_REVEAL")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise ParseError("unknown strategy %r" % self.kind)
        if (self.kind == "COLLUDER") != (self.cartel is not None):
            raise ParseError("COLLUDER strategies carry a cartel id; others do not")

    @classmethod
    def parse(cls, name: str) -> "Strategy":
        kind, _, cartel = name.partition(":")
        if kind == "COLLUDER":
            return cls(kind=kind, cartel=int(cartel) if cartel else 0)
        if cartel:
            raise ParseError("only COLLUDER strategies take a cartel id: %r" % name)
        return cls(kind=kind)

    def label(self) -> str:
        if self.kind == "COLLUDER":
            return "COLLUDER:%d" % self.cartel
        return self.kind


@dataclass(frozen=True)
class ScheduledRequest:
    """A request descriptor plus the epoch at which a client posts it."""

    post_epoch: int
    paths: tuple[RetrievalPath, ...]
    aggregation: Aggregation
    replication: int
    witness_fee: int
    bridge_fee: int = 0
    time_lock: int | None = None
    undecidable: bool = False
    deliver: str | None = None


@dataclass(frozen=True)
class Scenario:
    population: int
    epochs: int
    seed: int
    behavior_mix: Mapping[str, Fraction]
    decay: Fraction = Fraction(99, 100)
    penalty_rate: Fraction = Fraction(1, 5)
    requests: tuple[ScheduledRequest, ...] = ()
    sources: Mapping[str, str | Sequence[str]] = field(default_factory=dict)
    issuance: IssuanceParams = IssuanceParams()
    fees: FeeParams = FeeParams()
    backup_cap: int = DEFAULT_BACKUP_CAP
    replication_cap: int = DEFAULT_REPLICATION_CAP
    recomputation_period: int = 1

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValidationError("population must be at least 2")
        if self.epochs < 1:
            raise ValidationError("epochs must be at least 1")
        if not 0 <= self.seed < 2**64:
            raise ValidationError("seed must fit in 64 bits")
        if not 0 <= self.decay <= 1:
            raise ValidationError("decay must lie in [0, 1]")
        if not 0 <= self.penalty_rate <= 1:
            raise ValidationError("penalty_rate must lie in [0, 1]")
        if self.backup_cap < 1:
            raise ValidationError("backup_cap must be at least 1")
        if self.recomputation_period < 1:
            raise ValidationError("recomputation_period must be at least 1")
        total = sum(self.behavior_mix.values(), Fraction(0))
        if total != 1:
            raise ValidationError(
                "behavior fractions sum to %s, expected exactly 1" % total)
        for fraction in self.behavior_mix.values():
            if fraction < 0:
                raise ValidationError("behavior fractions must be non-negative")
        for request in self.requests:
            if request.replication > self.replication_cap:
                raise ValidationError(
                    "scheduled request replication %d above the cap %d"
                    % (request.replication, self.replication_cap))
            if request.post_epoch < 1:
                raise ValidationError("requests post at epoch 1 or later")

    def strategies(self) -> tuple[Strategy, ...]:
        """Deterministic strategy per participant index.

        Counts are fractions of the population rounded down, with leftover
        slots distributed by largest remainder (ties by strategy label).
        """
        labels = sorted(self.behavior_mix)
        counts = {}
        remainders = []
        assigned = 0
        for label in labels:
            exact = self.behavior_mix[label] * self.population
            counts[label] = int(exact)
            assigned += int(exact)
            remainders.append((-(exact - int(exact)), label))
        for _, label in sorted(remainders)[: self.population - assigned]:
            counts[label] += 1
        out: list[Strategy] = []
        for label in labels:
            out.extend([Strategy.parse(label)] * counts[label])
        return tuple(out)


_TOP_KEYS = {
    "population", "epochs", "seed", "decay", "penalty_rate", "behavior_mix",
    "requests", "sources", "issuance", "fees", "backup_cap",
    "replication_cap", "recomputation_period",
}
_ISSUANCE_KEYS = {"initial_reward_wit", "initial_reward_nanowit", "halving_period"}
_FEE_KEYS = {"witness_fee_rate_wit", "witness_fee_rate_nanowit",
             "min_miner_fee_rate_nanowit"}
_REQUEST_KEYS = {"post_epoch", "paths", "aggregation", "replication",
                 "witness_fee_wit", "witness_fee_nanowit",
                 "bridge_fee_wit", "bridge_fee_nanowit",
                 "time_lock", "undecidable", "deliver"}
_PATH_KEYS = {"source_key", "normalization", "parameter", "complexity"}


def _reject_unknown(table: Mapping, allowed: set[str], where: str) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ParseError("unknown key %r in %s" % (unknown[0], where))


def _fraction(value: object, where: str) -> Fraction:
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise ParseError("%s must be a number, got %r" % (where, value))
    try:
        return Fraction(str(value))
    except (ValueError, ZeroDivisionError) as exc:
        raise ParseError("%s is not a valid rational: %r" % (where, value)) from exc


def _int(value: object, where: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError("%s must be an integer, got %r" % (where, value))
    return value


def _amount(table: Mapping, wit_key: str, nano_key: str, where: str,
            default: int | None = None) -> int:
    if wit_key in table and nano_key in table:
        raise ParseError("%s: give %s or %s, not both" % (where, wit_key, nano_key))
    if wit_key in table:
        return _int(table[wit_key], wit_key) * NANOWIT_PER_WIT
    if nano_key in table:
        return _int(table[nano_key], nano_key)
    if default is None:
        raise ParseError("%s requires %s or %s" % (where, wit_key, nano_key))
    return default


def _parse_path(table: Mapping, where: str) -> RetrievalPath:
    if not isinstance(table, Mapping):
        raise ParseError("%s must be a table" % where)
    _reject_unknown(table, _PATH_KEYS, where)
    if "source_key" not in table:
        raise ParseError("%s requires source_key" % where)
    try:
        normalization = Normalization(table.get("normalization", "identity"))
    except ValueError as exc:
        raise ParseError("%s has unknown normalization %r"
                         % (where, table.get("normalization"))) from exc
    parameter = table.get("parameter")
    if parameter is not None and not isinstance(parameter, str):
        raise ParseError("%s parameter must be a string" % where)
    try:
        return RetrievalPath(
            source_key=str(table["source_key"]),
            normalization=normalization,
            parameter=parameter,
            declared_complexity=_int(table.get("complexity", 1), where),
        )
    except ValueError as exc:
        raise ParseError("%s: %s" % (where, exc)) from exc


def _parse_request(table: Mapping, position: int) -> ScheduledRequest:
    where = "requests[%d]" % position
    _reject_unknown(table, _REQUEST_KEYS, where)
    for required in ("post_epoch", "paths", "aggregation", "replication"):
        if required not in table:
            raise ParseError("%s requires %s" % (where, required))
    paths = table["paths"]
    if not isinstance(paths, Sequence) or isinstance(paths, (str, bytes)):
        raise ParseError("%s paths must be an array of tables" % where)
    try:
        aggregation = Aggregation(table["aggregation"])
    except ValueError as exc:
        raise ParseError("%s has unknown aggregation %r"
                         % (where, table["aggregation"])) from exc
    time_lock = table.get("time_lock")
    if time_lock is not None:
        time_lock = _int(time_lock, where + ".time_lock")
    undecidable = table.get("undecidable", False)
    if not isinstance(undecidable, bool):
        raise ParseError("%s undecidable must be a boolean" % where)
    return ScheduledRequest(
        post_epoch=_int(table["post_epoch"], where + ".post_epoch"),
        paths=tuple(_parse_path(p, "%s.paths[%d]" % (where, i))
                    for i, p in enumerate(paths)),
        aggregation=aggregation,
        replication=_int(table["replication"], where + ".replication"),
        witness_fee=_amount(table, "witness_fee_wit", "witness_fee_nanowit", where),
        bridge_fee=_amount(table, "bridge_fee_wit", "bridge_fee_nanowit",
                           where, default=0),
        time_lock=time_lock,
        undecidable=undecidable,
        deliver=table.get("deliver"),
    )


def parse_scenario(text: str) -> Scenario:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError("scenario is not valid TOML: %s" % exc) from exc
    _reject_unknown(raw, _TOP_KEYS, "scenario")
    for required in ("population", "epochs", "seed", "behavior_mix"):
        if required not in raw:
            raise ParseError("scenario requires %s" % required)

    mix_table = raw["behavior_mix"]
    if not isinstance(mix_table, Mapping):
        raise ParseError("behavior_mix must be a table")
    behavior_mix: dict[str, Fraction] = {}
    for name, fraction in mix_table.items():
        Strategy.parse(name)  # validates the label
        behavior_mix[name] = _fraction(fraction, "behavior_mix.%s" % name)

    issuance_table = raw.get("issuance", {})
    _reject_unknown(issuance_table, _ISSUANCE_KEYS, "issuance")
    issuance = IssuanceParams(
        initial_reward=_amount(issuance_table, "initial_reward_wit",
                               "initial_reward_nanowit", "issuance",
                               default=IssuanceParams().initial_reward),
        halving_period=_int(issuance_table.get(
            "halving_period", IssuanceParams().halving_period), "halving_period"),
    )
    fee_table = raw.get("fees", {})
    _reject_unknown(fee_table, _FEE_KEYS, "fees")
    fees = FeeParams(
        witness_fee_rate=_amount(fee_table, "witness_fee_rate_wit",
                                 "witness_fee_rate_nanowit", "fees",
                                 default=FeeParams().witness_fee_rate),
        min_miner_fee_rate=_int(fee_table.get("min_miner_fee_rate_nanowit", 0),
                                "min_miner_fee_rate_nanowit"),
    )

    sources_table = raw.get("sources", {})
    if not isinstance(sources_table, Mapping):
        raise ParseError("sources must be a table")
    sources: dict[str, str | tuple[str, ...]] = {}
    for key, value in sources_table.items():
        if isinstance(value, str):
            sources[key] = value
        elif isinstance(value, Sequence) and all(isinstance(v, str) for v in value):
            sources[key] = tuple(value)
        else:
            raise ParseError("sources.%s must be a string or array of strings" % key)

    request_list = raw.get("requests", [])
    if not isinstance(request_list, Sequence):
        raise ParseError("requests must be an array of tables")

    try:
        return Scenario(
            population=_int(raw["population"], "population"),
            epochs=_int(raw["epochs"], "epochs"),
            seed=_int(raw["seed"], "seed"),
            behavior_mix=behavior_mix,
            decay=_fraction(raw.get("decay", "0.99"), "decay"),
            penalty_rate=_fraction(raw.get("penalty_rate", "0.2"), "penalty_rate"),
            requests=tuple(_parse_request(t, i) for i, t in enumerate(request_list)),
            sources=sources,
            issuance=issuance,
            fees=fees,
            backup_cap=_int(raw.get("backup_cap", DEFAULT_BACKUP_CAP), "backup_cap"),
            replication_cap=_int(raw.get("replication_cap",
                                         DEFAULT_REPLICATION_CAP),
                                 "replication_cap"),
            recomputation_period=_int(raw.get("recomputation_period", 1),
                                      "recomputation_period"),
        )
    except ValueError as exc:
        if isinstance(exc, (ParseError, ValidationError)):
            raise
        raise ValidationError(str(exc)) from exc


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file."""
    file_path = Path(path)
    if not file_path.exists():
        raise ParseError("scenario file %s does not exist" % file_path)
    return parse_scenario(file_path.read_text(encoding="utf-8"))
