import numpy as np
import pytest

from skinfer import ChainSpec, EventSpec, ModelSpec, EventPath, SystemState, ValidationError, ZeroHazardEvent, gillespie, path_log_likelihood, total_hazard
from skinfer.model import apply_event
from skinfer.rng import RNG_SCHEME, make_rng

from _models import birth_death, sis_model

# Seed 42, a infectious and b susceptible at time 0, horizon 10.  Any change
# here means the random stream layout changed; bump RNG_SCHEME with it.
GOLDEN = [(1.9790727105286499, "ext_b"), (7.942757419544312, "rec_b"), (8.198460445474812, "inf_ab")]


def test_golden_path_seed_42():
    model = sis_model()
    path = gillespie(model, SystemState((1, 0)), 10.0, seed=42)
    assert RNG_SCHEME == "pcg64-seedseq-v1"
    assert [model.events[v].name for v in path.events] == [name for _, name in GOLDEN]
    np.testing.assert_allclose(path.times, [t for t, _ in GOLDEN], rtol=1e-14)


def test_same_seed_same_path_and_different_seed_differs():
    model = sis_model()
    p1 = gillespie(model, SystemState((1, 0)), 50.0, seed=7)
    p2 = gillespie(model, SystemState((1, 0)), 50.0, seed=7)
    p3 = gillespie(model, SystemState((1, 0)), 50.0, seed=8)
    assert p1.records == p2.records
    assert p1.records != p3.records


def test_times_increase_and_states_stay_valid():
    model = sis_model()
    path = gillespie(model, SystemState((1, 1)), 100.0, seed=3)
    assert len(path) > 10
    assert np.all(np.diff(path.times) > 0) and path.times[0] > 0 and path.times[-1] < 100.0
    path.validate(model)
    for s in path.states(model):
        model.check_state(s)


def test_absorbing_state_stops_simulation():
    model = sis_model(c3=0.0)
    path = gillespie(model, SystemState((0, 0)), 10.0, seed=1)
    assert len(path) == 0


def test_max_events_caps_the_path():
    path = gillespie(sis_model(), SystemState((1, 1)), 1e6, seed=2, max_events=5)
    assert len(path) == 5


def test_nonpositive_horizon_is_rejected():
    with pytest.raises(ValidationError):
        gillespie(sis_model(), SystemState((1, 0)), 0.0, seed=0)


def test_replicas_are_independent_streams():
    a = make_rng(5, "gillespie", 0).random(4)
    b = make_rng(5, "gillespie", 1).random(4)
    c = make_rng(5, "observations", 0).random(4)
    assert not np.allclose(a, b) and not np.allclose(a, c)


def test_path_log_likelihood_matches_hand_computation():
    model = sis_model()
    path = EventPath(SystemState((1, 0)), [1.0, 3.0], [model.event_index("inf_ab"), model.event_index("rec_a")], 5.0)
    # (1,0): h0 = 0.5 + 0.2 + 0.1 = 0.8 over 1.0; fire inf_ab (0.5)
    # (1,1): h0 = 0.4 over 2.0; fire rec_a (0.2)
    # (0,1): h0 = 0.5 + 0.2 + 0.1 = 0.8 over 2.0
    expected = np.log(0.5) - 0.8 * 1.0 + np.log(0.2) - 0.4 * 2.0 - 0.8 * 2.0
    assert path_log_likelihood(model, path) == pytest.approx(expected, abs=1e-12)


def test_path_log_likelihood_rejects_impossible_events():
    model = sis_model()
    path = EventPath(SystemState((0, 0)), [1.0], [model.event_index("rec_a")], 2.0)
    with pytest.raises(ZeroHazardEvent):
        path_log_likelihood(model, path)


def test_waiting_time_mean_matches_total_hazard():
    """First-event times from a fixed state are exponential with rate h0."""
    model = sis_model()
    state = SystemState((1, 0))
    h0 = total_hazard(model, state)
    firsts = []
    for seed in range(2000):
        p = gillespie(model, state, 1e3, seed=seed, max_events=1)
        firsts.append(p.times[0])
    firsts = np.array(firsts)
    se = firsts.std(ddof=1) / np.sqrt(len(firsts))
    assert abs(firsts.mean() - 1 / h0) < 4 * se


def test_event_choice_is_proportional_to_hazard():
    model = sis_model()
    state = SystemState((1, 0))
    counts = np.zeros(model.V)
    for seed in range(3000):
        counts[gillespie(model, state, 1e3, seed=seed, max_events=1).events[0]] += 1
    p = np.array([0.5, 0, 0.2, 0, 0, 0.1]) / 0.8
    se = np.sqrt(p * (1 - p) / 3000)
    assert np.all(np.abs(counts / 3000 - p) <= 4 * se + 1e-12)


def test_birth_death_states_follow_events():
    model = birth_death()
    path = gillespie(model, SystemState((0,)), 20.0, seed=4)
    states = path.states(model)
    for (t, v), before, after in zip(path.records, states[:-1], states[1:]):
        assert apply_event(model, v, before).values == after.values


def constant_hazard_model(rate):
    chain = ChainSpec("x", (0,))
    return ModelSpec((chain,), (EventSpec("e", rate, {}, {}),))


def test_log_likelihood_of_empty_path_is_survival():
    model = constant_hazard_model(2.0)
    assert path_log_likelihood(model, EventPath(SystemState((0,)), [], [], 3.0)) == pytest.approx(-6.0)


def test_log_likelihood_of_single_unit_hazard_event():
    model = constant_hazard_model(1.0)
    assert path_log_likelihood(model, EventPath(SystemState((0,)), [1.0], [0], 1.0)) == pytest.approx(-1.0)


def test_generating_rates_beat_perturbed_rates():
    model = sis_model()
    doubled = model.with_rates(model.rates * np.array([2, 2, 1, 1, 1, 1]))
    wins = 0
    for seed in range(20):
        path = gillespie(model, SystemState((1, 0)), 200.0, seed=seed)
        wins += path_log_likelihood(model, path) > path_log_likelihood(doubled, path)
    assert wins >= 18


def test_birth_death_time_average_matches_stationary_mean():
    a, b = 2.0, 0.5
    model = birth_death(a, b, cap=40)
    path = gillespie(model, SystemState((0,)), 1e9, seed=11, max_events=10_000)
    times = np.concatenate([[0.0], path.times])
    counts = np.array([s.values[0] for s in path.states(model)])[:-1]
    dwell = np.diff(times)
    burn = 200
    mean = np.average(counts[burn:], weights=dwell[burn:])
    # batch means for the standard error of a correlated time average
    batches = np.array_split(np.arange(burn, len(dwell)), 20)
    bm = np.array([np.average(counts[i], weights=dwell[i]) for i in batches])
    se = bm.std(ddof=1) / np.sqrt(len(bm))
    assert abs(mean - a / b) < 3 * se
