import numpy as np
import pytest

from skinfer import (BoundaryViolation, ChainSpec, EventSpec, FireFromZeroHazard, ModelSpec, Reactant, SystemState,
                     UnknownChain, ValidationError, apply_event, chain_factor, hazard, total_hazard)

from _models import sis_model


def population_model():
    """Infection counted on population chains; the state change is left out so
    the per-chain boundary check does not apply."""
    chains = (ChainSpec("I", tuple(range(6))), ChainSpec("S", tuple(range(6))))
    infection = EventSpec("infect", 0.1, {"I": 1, "S": 1}, {})
    return ModelSpec(chains, (infection,))


@pytest.mark.parametrize("order,state,expected", [(1, 3, 3.0), (0, 7, 1.0), (2, 3, 9.0), (0, 0, 1.0)])
def test_chain_factor_is_a_power(order, state, expected):
    chain = ChainSpec("x", tuple(range(10)))
    event = EventSpec("e", 1.0, {"x": Reactant(order)}, {})
    assert chain_factor(event, chain, state) == expected


def test_chain_factor_indicator_reactant():
    chain = ChainSpec("x", (0, 1))
    event = EventSpec("e", 1.0, {"x": Reactant(1, 0)}, {"x": 1})
    assert chain_factor(event, chain, 0) == 1.0
    assert chain_factor(event, chain, 1) == 0.0


def test_hazard_is_rate_times_reactant_counts():
    model = population_model()
    assert hazard(model, 0, SystemState((2, 3))) == pytest.approx(0.6)


def test_pure_source_hazard_is_constant():
    chain = ChainSpec("n", (0, 1))
    model = ModelSpec((chain,), (EventSpec("src", 0.4, {"n": Reactant(1, 0)}, {"n": 1}),
                                 EventSpec("other", 0.4, {}, {})))
    for x in (0, 1):
        assert hazard(model, 1, SystemState((x,))) == pytest.approx(0.4)


def test_total_hazard_sums_events():
    model = sis_model()
    # a infectious, b susceptible: inf_ab 0.5, rec_a 0.2, ext_b 0.1
    assert total_hazard(model, SystemState((1, 0))) == pytest.approx(0.8)


def test_apply_event_moves_state_and_keeps_time():
    model = sis_model()
    out = apply_event(model, 0, SystemState((1, 0), 1.5))
    assert out.values == (1, 1) and out.time == 1.5


def test_apply_event_with_zero_hazard_fails():
    with pytest.raises(FireFromZeroHazard):
        apply_event(sis_model(), 0, SystemState((0, 0)))


def test_population_infection_blocked_at_the_top_state():
    chains = (ChainSpec("I", tuple(range(6))), ChainSpec("S", tuple(range(6))))
    with pytest.raises(BoundaryViolation):
        ModelSpec(chains, (EventSpec("infect", 0.1, {"I": 1, "S": 1}, {"I": 1, "S": -1}),))


def test_unknown_chain_is_rejected():
    with pytest.raises(UnknownChain, match="ghost"):
        ModelSpec((ChainSpec("a", (0, 1)),), (EventSpec("e", 1.0, {"ghost": 1}, {"a": 1}),))


def test_boundary_violation_is_rejected():
    # a source event with no reactant can push the chain past its top state
    with pytest.raises(BoundaryViolation):
        ModelSpec((ChainSpec("a", (0, 1)),), (EventSpec("e", 1.0, {}, {"a": 1}),))


@pytest.mark.parametrize("states", [(), (0, 0), (-1, 0)])
def test_bad_state_spaces(states):
    with pytest.raises(ValidationError):
        ChainSpec("a", states)


def test_duplicate_names_are_rejected():
    with pytest.raises(ValidationError):
        ModelSpec((ChainSpec("a", (0, 1)), ChainSpec("a", (0, 1))), ())


def test_negative_rate_is_rejected():
    with pytest.raises(ValidationError):
        EventSpec("e", -0.1)


def test_state_outside_space_is_rejected():
    with pytest.raises(ValidationError):
        sis_model().check_state(SystemState((2, 0)))


def test_compiled_factors_match_hazard():
    model = sis_model()
    cm = model.compiled
    for a in (0, 1):
        for b in (0, 1):
            g = cm.event_factors(cm.state_indices((a, b), model))
            direct = [hazard(model, v, SystemState((a, b))) for v in range(model.V)]
            np.testing.assert_allclose(cm.rates * g, direct)


def test_rate_groups_follow_first_appearance():
    cm = sis_model().compiled
    assert list(cm.group_names) == ["infection", "recovery", "external"]
    assert list(cm.group_of) == [0, 0, 1, 1, 2, 2]


def test_with_rates_keeps_structure():
    model = sis_model()
    other = model.with_rates([1, 2, 3, 4, 5, 6])
    assert [c.name for c in other.chains] == ["a", "b"]
    np.testing.assert_array_equal(other.rates, [1, 2, 3, 4, 5, 6])
