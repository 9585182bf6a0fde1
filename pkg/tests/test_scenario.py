"""Scenario file parsing and validation."""

from __future__ import annotations

from fractions import Fraction

import pytest

from simnet.errors import ParseError, ValidationError
from simnet.scenario import Scenario, Strategy, parse_scenario, load_scenario

MINIMAL = """
population = 4
epochs = 10
seed = 1

[behavior_mix]
HONEST = 1.0

[sources]
price = "42"

[[requests]]
post_epoch = 3
paths = [{ source_key = "price" }]
aggregation = "first"
replication = 2
witness_fee_wit = 4
"""


def test_minimal_valid_scenario():
    scenario = parse_scenario(MINIMAL)
    assert scenario.population == 4
    assert scenario.requests[0].replication == 2
    assert scenario.requests[0].witness_fee == 4 * 10**9
    assert scenario.decay == Fraction(99, 100)


def test_fractions_must_sum_to_one():
    text = MINIMAL.replace("HONEST = 1.0", "HONEST = 0.9")
    with pytest.raises(ValidationError):
        parse_scenario(text)


def test_unknown_strategy_is_parse_error():
    text = MINIMAL.replace("HONEST = 1.0", "SAINT = 1.0")
    with pytest.raises(ParseError):
        parse_scenario(text)


def test_unknown_top_level_key_rejected():
    with pytest.raises(ParseError):
        parse_scenario(MINIMAL + "\nwormhole = 3\n")


def test_unknown_request_key_rejected():
    text = MINIMAL.replace("witness_fee_wit = 4",
                           "witness_fee_wit = 4\nspin = 1")
    with pytest.raises(ParseError):
        parse_scenario(text)


def test_invalid_toml_is_parse_error():
    with pytest.raises(ParseError):
        parse_scenario("population = [broken")


def test_population_minimum():
    with pytest.raises(ValidationError):
        parse_scenario(MINIMAL.replace("population = 4", "population = 1"))


def test_replication_cap_checked_against_requests():
    text = MINIMAL.replace("replication = 2", "replication = 512")
    with pytest.raises(ValidationError):
        parse_scenario(text)


def test_unknown_aggregation_rejected():
    with pytest.raises(ParseError):
        parse_scenario(MINIMAL.replace('aggregation = "first"',
                                       'aggregation = "average"'))


def test_colluder_labels():
    strategy = Strategy.parse("COLLUDER:3")
    assert strategy.kind == "COLLUDER" and strategy.cartel == 3
    assert strategy.label() == "COLLUDER:3"
    with pytest.raises(ParseError):
        Strategy.parse("LIAR:2")


def test_strategy_assignment_counts_and_determinism():
    scenario = Scenario(
        population=10, epochs=1, seed=0,
        behavior_mix={"HONEST": Fraction(7, 10), "LIAR": Fraction(2, 10),
                      "COLLUDER:1": Fraction(1, 10)})
    strategies = scenario.strategies()
    assert strategies == scenario.strategies()
    kinds = [s.kind for s in strategies]
    assert kinds.count("HONEST") == 7
    assert kinds.count("LIAR") == 2
    assert kinds.count("COLLUDER") == 1


def test_strategy_assignment_largest_remainder():
    scenario = Scenario(
        population=3, epochs=1, seed=0,
        behavior_mix={"HONEST": Fraction(1, 2), "LIAR": Fraction(1, 2)})
    kinds = sorted(s.kind for s in scenario.strategies())
    assert kinds in (["HONEST", "HONEST", "LIAR"], ["HONEST", "LIAR", "LIAR"])
    assert len(kinds) == 3


def test_time_indexed_sources_parse():
    text = MINIMAL.replace('price = "42"', 'price = ["1", "2", "3"]')
    scenario = parse_scenario(text)
    assert scenario.sources["price"] == ("1", "2", "3")


def test_load_scenario_missing_file(tmp_path):
    with pytest.raises(ParseError):
        load_scenario(tmp_path / "absent.toml")


def test_load_scenario_round_trip(tmp_path):
    path = tmp_path / "scenario.toml"
    path.write_text(MINIMAL, encoding="utf-8")
    assert load_scenario(path).population == 4


def test_issuance_and_fee_overrides():
    text = """
population = 4
epochs = 10
seed = 1
decay = 0.95
penalty_rate = 0.25

[behavior_mix]
HONEST = 1.0

[issuance]
initial_reward_wit = 100
halving_period = 1000

[fees]
witness_fee_rate_wit = 2
min_miner_fee_rate_nanowit = 3
"""
    scenario = parse_scenario(text)
    assert scenario.decay == Fraction(95, 100)
    assert scenario.penalty_rate == Fraction(1, 4)
    assert scenario.issuance.initial_reward == 100 * 10**9
    assert scenario.issuance.halving_period == 1000
    assert scenario.fees.witness_fee_rate == 2 * 10**9
    assert scenario.fees.min_miner_fee_rate == 3


def test_wit_and_nanowit_amounts_exclusive():
    text = MINIMAL.replace(
        "witness_fee_wit = 4",
        "witness_fee_wit = 4\nwitness_fee_nanowit = 4000000000")
    with pytest.raises(ParseError):
        parse_scenario(text)


def test_unknown_issuance_key_rejected():
    text = MINIMAL + "\n[issuance]\nreward = 5\n"
    with pytest.raises(ParseError):
        parse_scenario(text)
