"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines as they are
produced; they are also repeated in the terminal summary.
"""

import os
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pytest

from skinfer import (EpidemicConfig, SystemState, exact_em, exact_forward_backward, gillespie, grid_path,
                     marginal_kernel, coupling_factors, mf_infer, ml_rates_continuous, ml_rates_discrete,
                     run_cohort_experiment, small_world_network)
from skinfer.exact import JointSpace
from skinfer.observations import ObservationSet

from _models import (birth_death, noisy_sis_observations, random_independent_model, random_tables,
                     sample_grid_frames, sis_model)
from conftest import ACCEPTANCE_LINES

SIS_TRUE = np.array([0.5, 0.2, 0.1])


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def gamma_error(exact, mf):
    return max(np.abs(a - b).max() for a, b in zip(exact.chain_marginals(), mf.gamma))


def max_constraint_violation(mf):
    worst = 0.0
    for m, g in enumerate(mf.gamma):
        for t in range(1, g.shape[0]):
            tab = mf.chain_xi(m, t)
            worst = max(worst, np.abs(tab.sum(axis=(0, 1)) - g[t]).max(), np.abs(tab.sum(axis=(1, 2)) - g[t - 1]).max())
    return worst


def test_criterion_1_factorizable_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        model = random_independent_model(rng, int(rng.integers(2, 5)))
        obs = random_tables(rng, model, 20)
        ex = exact_forward_backward(model, 0.05, obs)
        mf = mf_infer(model, 0.05, obs, tol=1e-12, max_sweeps=500)
        worst = max(worst, gamma_error(ex, mf))
    elapsed = time.perf_counter() - t0
    verdict(1, worst <= 1e-8 and elapsed < 60,
            f"20 single-chain-event models, max |gamma error| {worst:.3g} (bound 1e-8), {elapsed:.1f}s")


def test_criterion_2_single_chain_collapse():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10):
        model = random_independent_model(rng, 1)
        obs = random_tables(rng, model, 50)
        ex = exact_forward_backward(model, 0.05, obs)
        mf = mf_infer(model, 0.05, obs, tol=1e-13)
        worst = max(worst, gamma_error(ex, mf), abs(ex.log_evidence - mf.bethe_evidence),
                    np.abs(ex.event_marginals - mf.event_marginals).max())
    verdict(2, worst <= 1e-10, f"10 single-chain models, T=50, max discrepancy {worst:.3g} (bound 1e-10)")


def sis_instance(seed):
    model = sis_model()
    fs = sample_grid_frames(model, (1, 0), 0.1, 20, seed)
    return model, noisy_sis_observations(model, fs, seed, accuracy=0.9)


def test_criterion_3_coupled_closeness():
    worst_tv = worst_ev = 0.0
    for seed in range(20):
        model, obs = sis_instance(seed)
        ex = exact_forward_backward(model, 0.1, obs)
        mf = mf_infer(model, 0.1, obs)
        tv = max(0.5 * np.abs(a - b).sum(axis=1).max() for a, b in zip(ex.chain_marginals(), mf.gamma))
        worst_tv = max(worst_tv, tv)
        worst_ev = max(worst_ev, abs(ex.log_evidence - mf.bethe_evidence))
    verdict(3, worst_tv <= 0.05 and worst_ev <= 0.5,
            f"2-agent SIS, 20 seeds, worst TV {worst_tv:.4f} (<=0.05), worst evidence gap {worst_ev:.4f} (<=0.5)")


def test_criterion_4_joint_identity():
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        model = sis_model(*rng.uniform(0.1, 1.0, 3))
        tau, T = 0.2, 3
        obs = random_tables(rng, model, T)
        alpha = [rng.uniform(0.1, 1, (T + 1, 2)) for _ in range(2)]
        beta = [rng.uniform(0.1, 1, (T + 1, 2)) for _ in range(2)]
        cf = coupling_factors(model, obs, alpha, beta, tau)
        sp = JointSpace(model)
        w = model.rates * tau
        for t in range(1, T + 1):
            a = sp.product([al[t - 1] for al in alpha])
            nb = sp.product([obs.lik[m][t] * beta[m][t] for m in range(2)])
            marg = [np.zeros((2, model.V + 1, 2)) for _ in range(2)]
            total = 0.0
            for j in range(sp.N):
                for v in range(model.V):
                    hit = np.flatnonzero(sp.src[v] == j)
                    if len(hit):
                        dst = sp.dst[v][hit[0]]
                        val = a[j] * w[v] * sp.g[v, j] * nb[dst]
                        total += val
                        for m in range(2):
                            marg[m][sp.chain_idx[m, j], v, sp.chain_idx[m, dst]] += val
                val = a[j] * (1 - w @ sp.g[:, j]) * nb[j]
                total += val
                for m in range(2):
                    marg[m][sp.chain_idx[m, j], -1, sp.chain_idx[m, j]] += val
            D = cf.stay[:, t - 1]
            worst = max(worst, abs(total - D.prod() * cf.z[t - 1]) / total)
            for m in range(2):
                kern = marginal_kernel(model, tau, m, t, cf)
                pred = alpha[m][t - 1][:, None, None] * kern * (obs.lik[m][t] * beta[m][t])[None, None, :]
                worst = max(worst, np.abs(pred * D[1 - m] - marg[m]).max() / total)
    verdict(4, worst <= 1e-10, f"coupling/kernel vs joint-space marginalization, max relative error {worst:.3g}")


def test_criterion_5_constraint_satisfaction():
    worst = 0.0
    runs = 0
    rng = np.random.default_rng(5)
    for seed in range(10):
        model, obs = sis_instance(seed)
        mf = mf_infer(model, 0.1, obs)
        assert mf.converged
        worst = max(worst, max_constraint_violation(mf))
        ex = exact_forward_backward(model, 0.1, obs)
        for t in range(1, ex.T + 1):
            for m, tab in enumerate(ex.chain_xi(t)):
                marg = ex.chain_marginals()[m]
                worst = max(worst, np.abs(tab.sum(axis=(0, 1)) - marg[t]).max(),
                            np.abs(tab.sum(axis=(1, 2)) - marg[t - 1]).max())
        runs += 2
    for _ in range(5):
        model = random_independent_model(rng, 3)
        mf = mf_infer(model, 0.05, random_tables(rng, model, 20))
        worst = max(worst, max_constraint_violation(mf))
        runs += 1
    verdict(5, worst <= 1e-9, f"{runs} converged runs, max marginal-consistency violation {worst:.3g} (<=1e-9)")


def test_criterion_6_exact_em_monotone():
    worst = np.inf
    for seed in range(5):
        model = sis_model()
        fs = sample_grid_frames(model, (1, 0), 0.1, 300, seed)
        obs = noisy_sis_observations(model, fs, seed, accuracy=0.9, observe_prob=0.5)
        est = exact_em(model, 0.1, obs, init_rates=np.full(model.V, 0.3), max_iters=30, tol=1e-10)
        ev = np.array([e for _, e in est.trace])
        worst = min(worst, np.diff(ev).min())
    verdict(6, worst >= -1e-9, f"5 partially observed instances, smallest evidence step {worst:.3g} (>= -1e-9)")


def test_criterion_7_rate_recovery():
    model = sis_model()
    long_path = gillespie(model, SystemState((1, 0)), 20_000.0, seed=0)
    cont = ml_rates_continuous(model, long_path).group_rates
    rel = np.abs(cont / SIS_TRUE - 1).max()

    path = gillespie(model, SystemState((1, 0)), 1500.0, seed=1)
    ref = ml_rates_continuous(model, path).group_rates
    k0 = int(np.ceil(-np.log2(np.diff(np.concatenate([[0.0], path.times])).min())))
    gaps = []
    for k in range(k0, k0 + 4):
        est = ml_rates_discrete(model, grid_path(model, path, 2.0 ** -k)).group_rates
        gaps.append(np.abs(est / ref - 1).max())
    ok = len(long_path) >= 500 and len(path) >= 500 and rel <= 0.10 and gaps[-1] < 0.02
    verdict(7, ok, f"continuous ML {len(long_path)} events, max rel error {rel:.3f} (<=0.10); discrete vs "
                   f"continuous on {len(path)} events over tau=2^-{k0}..2^-{k0 + 3}: "
                   f"{', '.join(f'{g:.2g}' for g in gaps)} (final <0.02)")


def test_criterion_8_birth_death_mean():
    a, b = 2.0, 0.5
    model = birth_death(a, b, cap=40)
    path = gillespie(model, SystemState((0,)), 1e9, seed=11, max_events=10_000)
    times = np.concatenate([[0.0], path.times])
    counts = np.array([s.values[0] for s in path.states(model)])[:-1]
    dwell = np.diff(times)
    burn = 200
    mean = np.average(counts[burn:], weights=dwell[burn:])
    batches = np.array_split(np.arange(burn, len(dwell)), 20)
    bm = np.array([np.average(counts[i], weights=dwell[i]) for i in batches])
    se = bm.std(ddof=1) / np.sqrt(len(bm))
    verdict(8, abs(mean - a / b) < 3 * se,
            f"birth-death, 10000 events, time-average {mean:.3f} vs a/b = {a / b} (3 s.e. = {3 * se:.3f})")


def cohort(seed):
    net = small_world_network(num_agents=100, days=60, seed=seed)
    cfg = EpidemicConfig.calibrated(net, volunteer_fraction=0.1)
    rep = run_cohort_experiment(net, cfg, seed)
    return rep.auc_variational, rep.auc_baseline


def test_criterion_9_cohort_detector():
    t0 = time.perf_counter()
    workers = min(10, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(cohort, range(10)))
    elapsed = time.perf_counter() - t0
    wins = sum(v > b for v, b in results)
    diffs = ", ".join(f"{v - b:+.3f}" for v, b in results)
    verdict(9, wins >= 9 and elapsed < 600,
            f"100 agents, 60 days, 10 seeds: variational beats baseline on {wins}/10 (AUC diffs {diffs}), "
            f"{elapsed:.0f}s")
