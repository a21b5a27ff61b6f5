import logging

import numpy as np
import pytest

from skinfer import (ChainSpec, EventPath, EventSpec, FrameSeries, ModelSpec, NoNullEvents, Reactant, SystemState,
                     exact_em, gillespie, grid_path, mf_em, ml_rates_continuous, ml_rates_discrete)
from skinfer.learn import solve_null_weighted
from skinfer.observations import ObservationSet

from _models import birth_death, noisy_sis_observations, random_independent_model, sample_grid_frames, sis_model

TRUE = np.array([0.5, 0.2, 0.1])


def one_event_model(rate=1.0):
    chain = ChainSpec("x", (0, 1))
    return ModelSpec((chain,), (EventSpec("e", rate, {}, {}),))


def test_continuous_formula_three_events_over_exposure_six():
    model = one_event_model()
    e = model.event_index("e")
    path = EventPath(SystemState((0,)), [1.0, 2.5, 4.0], [e, e, e], 6.0)
    est = ml_rates_continuous(model, path)
    assert est.rates[0] == pytest.approx(0.5)
    assert est.objective_kind == "continuous-ML"


def test_continuous_zero_occurrences_is_zero_and_unflagged():
    model = one_event_model()
    est = ml_rates_continuous(model, EventPath(SystemState((0,)), [], [], 4.0))
    assert est.rates[0] == 0.0 and not est.flags[0]


def test_continuous_zero_exposure_is_flagged():
    model = sis_model()
    path = EventPath(SystemState((0, 0)), [], [], 5.0)
    est = ml_rates_continuous(model.with_rates([0.5, 0.5, 0.2, 0.2, 0.0, 0.0]), path)
    # infection and recovery need an infectious agent: no exposure at all
    assert est.as_dict()["unidentifiable_groups"] == ["infection", "recovery"]
    assert est.group_rates[0] == 0.0


def test_continuous_recovers_generating_rates():
    model = sis_model()
    path = gillespie(model, SystemState((1, 0)), 20_000.0, seed=0)
    est = ml_rates_continuous(model, path)
    np.testing.assert_allclose(est.group_rates, TRUE, rtol=0.10)


def test_continuous_is_permutation_equivariant():
    model = sis_model()
    path = gillespie(model, SystemState((1, 0)), 300.0, seed=1)
    perm = np.array([3, 5, 0, 1, 4, 2])
    shuffled = ModelSpec(model.chains, tuple(model.events[i] for i in perm))
    inverse = np.argsort(perm)
    relabelled = EventPath(path.initial_state, path.times, [int(inverse[v]) for v in path.events], path.horizon)
    a = ml_rates_continuous(model, path)
    b = ml_rates_continuous(shuffled, relabelled)
    np.testing.assert_allclose(b.rates, a.rates[perm], rtol=1e-12)


def test_discrete_single_event_fixed_point():
    # 5 firings and 95 null steps at constant g = 1, tau = 0.1:
    # c = 5 (1 - 0.1 c) / 9.5 has the root c = 0.5
    model = one_event_model()
    events = np.full(100, -1)
    events[::20] = 0
    fs = FrameSeries(0.1, np.zeros((101, 1), dtype=int), events)
    est = ml_rates_discrete(model, fs)
    assert est.rates[0] == pytest.approx(0.5, rel=1e-9)
    assert ml_rates_discrete(model, fs, small_tau=True).rates[0] == pytest.approx(0.5)


def test_discrete_zero_firings():
    fs = FrameSeries(0.1, np.zeros((11, 1), dtype=int), np.full(10, -1))
    assert ml_rates_discrete(one_event_model(), fs).rates[0] == 0.0


def test_discrete_every_step_an_event():
    fs = FrameSeries(0.1, np.zeros((4, 1), dtype=int), np.zeros(3, dtype=int))
    with pytest.raises(NoNullEvents):
        ml_rates_discrete(one_event_model(), fs)


def test_solve_null_weighted_scalar_root():
    c = solve_null_weighted(np.array([5.0]), np.array([[1.0]]), np.array([95.0]), 0.1, start=np.array([1.0]))
    assert c[0] == pytest.approx(0.5, rel=1e-10)


def test_discrete_approaches_continuous_as_tau_halves():
    model = sis_model()
    path = gillespie(model, SystemState((1, 0)), 300.0, seed=2)
    cont = ml_rates_continuous(model, path).group_rates
    gap = np.diff(np.concatenate([[0.0], path.times])).min()
    k0 = int(np.ceil(-np.log2(gap)))
    errs = []
    for k in range(k0, k0 + 4):
        d = ml_rates_discrete(model, grid_path(model, path, 2.0 ** -k)).group_rates
        errs.append(np.abs(d / cont - 1).max())
    assert errs[-1] < 0.02


def test_mf_em_first_iteration_matches_small_tau_ml_on_noiseless_frames():
    rng = np.random.default_rng(3)
    model = random_independent_model(rng, 2)
    path = gillespie(model, SystemState(tuple(0 for _ in model.chains)), 60.0, seed=5)
    fs = grid_path(model, path, 0.01, horizon=60.0)
    obs = ObservationSet.from_values(model, fs.frames)
    first = mf_em(model, 0.01, obs, max_iters=1)
    ml = ml_rates_discrete(model, fs, small_tau=True)
    np.testing.assert_allclose(first.rates, ml.rates, atol=1e-6)


def test_mf_em_matches_exact_em_for_single_chain():
    rng = np.random.default_rng(4)
    model = birth_death(a=1.0, b=0.3, cap=6)
    lik = [rng.uniform(0.05, 1.0, (81, 7))]
    obs = ObservationSet(lik)
    a = mf_em(model, 0.02, obs, max_iters=6, tol=0, sweep_tol=1e-13)
    b = exact_em(model, 0.02, obs, update="small_tau", max_iters=6, tol=0)
    assert len(a.trace) == len(b.trace) == 6
    for (ra, ea), (rb, eb) in zip(a.trace, b.trace):
        np.testing.assert_allclose(ra, rb, rtol=1e-9)
        assert ea == pytest.approx(eb, abs=1e-9)


def test_mf_em_bethe_trace_rises_on_standard_instance():
    model = sis_model()
    path = gillespie(model, SystemState((1, 0)), 100.0, seed=2)
    fs = grid_path(model, path, 0.01, horizon=100.0)
    obs = noisy_sis_observations(model, fs, 3)
    est = mf_em(model, 0.01, obs, init_rates=np.full(model.V, 0.3), max_iters=10, tol=0)
    ev = [e for _, e in est.trace]
    assert len(ev) == 10 and min(np.diff(ev)) >= -1e-9
    assert est.objective_kind == "bethe-evidence"


def test_mf_em_zero_init_group_is_flagged(caplog):
    model = sis_model()
    path = gillespie(model, SystemState((1, 0)), 30.0, seed=2)
    fs = grid_path(model, path, 0.01, horizon=30.0)
    obs = noisy_sis_observations(model, fs, 1)
    init = np.array([0.5, 0.5, 0.2, 0.2, 0.0, 0.0])
    with caplog.at_level(logging.WARNING):
        est = mf_em(model, 0.01, obs, init_rates=init, max_iters=3)
    assert "cannot move" in caplog.text
    assert est.as_dict()["zero_init_groups"] == ["external"]
    assert est.group_rates[2] == 0.0 and est.flags[4]


def test_mf_em_warns_on_large_step_mass(caplog):
    model = sis_model()
    obs = ObservationSet.empty(model, 5)
    with caplog.at_level(logging.WARNING):
        mf_em(model, 0.2, obs, max_iters=1)
    assert "small-tau update is biased" in caplog.text


def test_exact_em_unreachable_event_is_flagged():
    chain = ChainSpec("x", (0, 1))
    model = ModelSpec((chain,), (
        EventSpec("up", 0.5, {"x": Reactant(1, 0)}, {"x": 1}),
        EventSpec("down", 0.5, {"x": Reactant(1, 1)}, {"x": -1}),
    ))
    obs = ObservationSet.from_values(model, np.zeros((21, 1), dtype=int))
    est = exact_em(model, 0.05, obs, max_iters=3)
    assert est.rates[1] == 0.0 and est.flags[1] and not est.flags[0]


def test_exact_em_recovers_rates_from_noisy_reports():
    model = sis_model()
    tau = 0.5
    fs = sample_grid_frames(model, (1, 0), tau, 20_000, seed=0)
    obs = noisy_sis_observations(model, fs, 0, accuracy=0.95)
    est = exact_em(model, tau, obs, init_rates=np.full(model.V, 0.3), max_iters=300, tol=1e-5)
    assert est.converged
    np.testing.assert_allclose(est.group_rates, TRUE, rtol=0.15)
