"""Rate-constant estimation.

Events may share a rate constant through ``EventSpec.group``; every
estimator works on the group level (sums of counts over sums of
exposures) and broadcasts the result back to the events.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .discretize import NULL, FrameSeries
from .errors import NoNullEvents, ValidationError, ZeroHazardEvent
from .meanfield import DAMPING, MAX_SWEEPS, TOL, MeanFieldPosterior, mf_infer
from .model import ModelSpec
from .observations import ObservationSet
from .simulate import EventPath

log = logging.getLogger(__name__)


@dataclass
class RateEstimate:
    """Fitted rate constants, one per rate group, broadcast to events."""

    group_names: list[str]
    group_rates: np.ndarray
    group_of: np.ndarray
    objective_kind: str
    group_flags: np.ndarray
    trace: list[tuple[np.ndarray, float]] = field(default_factory=list)
    iterations: int = 0
    converged: bool = True
    zero_init: np.ndarray | None = None

    @property
    def rates(self) -> np.ndarray:
        return self.group_rates[self.group_of]

    @property
    def flags(self) -> np.ndarray:
        return self.group_flags[self.group_of]

    def as_dict(self) -> dict:
        out = {
            "objective_kind": self.objective_kind,
            "rates": self.rates.tolist(),
            "groups": dict(zip(self.group_names, self.group_rates.tolist())),
            "unidentifiable_groups": [g for g, f in zip(self.group_names, self.group_flags) if f],
            "iterations": self.iterations,
            "converged": self.converged,
        }
        if self.zero_init is not None:
            out["zero_init_groups"] = [g for g, z in zip(self.group_names, self.zero_init) if z]
        return out


def _estimate(model: ModelSpec, group_rates, group_flags, kind, **kw) -> RateEstimate:
    cm = model.compiled
    return RateEstimate(list(cm.group_names), np.asarray(group_rates, dtype=float), cm.group_of, kind,
                        np.asarray(group_flags, dtype=bool), **kw)


def _ratio(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """num/den with 0/0 -> 0 flagged."""
    flags = (den <= 0) & (num <= 0)
    if np.any((den <= 0) & (num > 0)):
        raise ZeroHazardEvent("events observed with zero exposure")
    rates = np.divide(num, den, out=np.zeros_like(num, dtype=float), where=den > 0)
    return rates, flags


def _group_sum(cm, per_event: np.ndarray) -> np.ndarray:
    """Sum the last axis (events) into rate groups."""
    out = np.zeros(per_event.shape[:-1] + (len(cm.group_names),))
    for v, gi in enumerate(cm.group_of):
        out[..., gi] += per_event[..., v]
    return out


def ml_rates_continuous(model: ModelSpec, path: EventPath) -> RateEstimate:
    """Event counts over integrated chain-factor exposure along the path."""
    cm = model.compiled
    idx = cm.state_indices(path.initial_state.values, model)
    counts = np.zeros(model.V)
    exposure = np.zeros(model.V)
    prev = float(path.initial_state.time)
    for t, v in zip(path.times, path.events):
        g = cm.event_factors(idx)
        if g[v] <= 0:
            raise ZeroHazardEvent(f"event {model.events[v].name!r} fired from a state where it cannot")
        exposure += g * (t - prev)
        counts[v] += 1
        for i in cm.event_inc[v]:
            if i < 0:
                break
            m = cm.inc_chain[i]
            idx[m] = cm.inc_shift[i, idx[m]]
        prev = t
    exposure += cm.event_factors(idx) * (path.horizon - prev)
    rates, flags = _ratio(_group_sum(cm, counts), _group_sum(cm, exposure))
    return _estimate(model, rates, flags, "continuous-ML")


def solve_null_weighted(counts: np.ndarray, rows: np.ndarray, weights: np.ndarray, tau: float,
                        start: np.ndarray | None = None, rtol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Maximize ``sum_G n_G log c_G + sum_r w_r log(1 - tau * rows[r] @ c)``.

    This is the discrete-time likelihood in the rate constants: ``counts``
    are (expected) event counts per group, ``rows`` the per-group chain
    factors of the states in which the null event occurred, ``weights``
    how often.  The stationarity condition is the fixed point
    ``c_G = n_G / sum_r w_r tau F_rG / (1 - tau F_r . c)``.  Solved by
    Newton's method from ``start`` (the small-tau estimate by default),
    stopping when the largest relative change drops below ``rtol``.
    """
    counts = np.asarray(counts, dtype=float)
    G = len(counts)
    active = counts > 0
    c = np.zeros(G)
    if not active.any():
        return c
    keep = weights > 0
    rows, weights = rows[keep], weights[keep]
    expo = tau * weights @ rows
    if np.any(active & (expo <= 0)):
        raise NoNullEvents("an event group has no null-step exposure; tau is far too large")
    if start is None:
        start = np.where(active, counts / np.where(expo > 0, expo, 1.0), 0.0)
    c = np.where(active, start, 0.0).astype(float)
    F = rows[:, active]
    n = counts[active]
    x = c[active]

    def objective(x):
        s = 1.0 - tau * F @ x
        if np.any(s <= 0) or np.any(x <= 0):
            return -np.inf
        return float(n @ np.log(x) + weights @ np.log(s))

    while objective(x) == -np.inf:
        x = x / 2
    for _ in range(max_iter):
        s = 1.0 - tau * F @ x
        grad = n / x - tau * (weights / s) @ F
        hess = -np.diag(n / x**2) - tau**2 * (F.T * (weights / s**2)) @ F
        step = np.linalg.solve(hess, -grad)
        f0 = objective(x)
        lam = 1.0
        while lam > 1e-12:
            cand = x + lam * step
            if objective(cand) >= f0 - 1e-15 * abs(f0):
                break
            lam /= 2
        change = np.max(np.abs(cand - x) / np.maximum(np.abs(cand), 1e-300))
        x = cand
        if change < rtol:
            break
    c[active] = x
    return c


def _null_rows(model: ModelSpec, frames: FrameSeries):
    """Event counts, distinct null-step factor rows with their multiplicities, and exposure."""
    cm = model.compiled
    idx = np.empty((frames.T, model.M), dtype=np.intp)
    for m, chain in enumerate(model.chains):
        lookup = {x: k for k, x in enumerate(chain.states)}
        idx[:, m] = [lookup[x] for x in frames.frames[:-1, m]]
    states, inverse = np.unique(idx, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    g = np.array([cm.event_factors(row) for row in states]).reshape(len(states), model.V)
    ev = np.asarray(frames.events)
    fired = ev != NULL
    if np.any(g[inverse[fired], ev[fired]] <= 0):
        t = int(np.flatnonzero(fired & (g[inverse, np.where(fired, ev, 0)] <= 0))[0]) + 1
        raise ZeroHazardEvent(f"step {t}: event {model.events[ev[t - 1]].name!r} cannot fire")
    counts = np.bincount(ev[fired], minlength=model.V).astype(float)
    exposure = np.bincount(inverse, minlength=len(states)) @ g
    null_mult = np.bincount(inverse[~fired], minlength=len(states)).astype(float)
    keep = null_mult > 0
    F = _group_sum(cm, g[keep])
    return _group_sum(cm, counts), F, null_mult[keep], _group_sum(cm, exposure)


def ml_rates_discrete(model: ModelSpec, frames: FrameSeries, small_tau: bool = False) -> RateEstimate:
    """Maximum likelihood under the grid kernel from labelled frames.

    ``small_tau=True`` returns the closed form ``counts / sum_t tau g``.
    """
    if frames.events is None:
        raise ValidationError("frames carry no event labels")
    n, F, w, expo = _null_rows(model, frames)
    tau = frames.tau
    if small_tau:
        rates, flags = _ratio(n, tau * expo)
        return _estimate(model, rates, flags, "discrete-ML")
    if n.sum() > 0 and w.sum() == 0:
        raise NoNullEvents("every step carries an event; tau is far too large")
    start, flags = _ratio(n, tau * expo)
    rates = solve_null_weighted(n, F, w, tau, start=np.where(start > 0, start, 1.0))
    return _estimate(model, rates, flags & (n <= 0), "discrete-ML")


def _expected_factors(post: MeanFieldPosterior, model: ModelSpec) -> np.ndarray:
    """prod_m E_{gamma_{t-1}^(m)}[g_v^(m)] for every event, shape (T, V)."""
    cm = model.compiled
    T = post.event_marginals.shape[0]
    out = np.ones((T, model.V))
    for i in range(cm.n_incidences):
        m, v = cm.inc_chain[i], cm.inc_event[i]
        gam = post.chains[m].gamma[:-1]
        out[:, v] *= gam @ cm.inc_g[i, : gam.shape[1]]
    return out


def _rel_change(new, old) -> float:
    scale = np.maximum(np.abs(old), 1e-300)
    diff = np.abs(new - old)
    return float(np.max(np.where((new == 0) & (old == 0), 0.0, diff / scale))) if len(new) else 0.0


def mf_em(model: ModelSpec, tau: float, obs: ObservationSet, init_rates=None, max_iters: int = 50,
          tol: float = 1e-6, init=None, activity=None, max_sweeps: int = MAX_SWEEPS,
          sweep_tol: float = TOL, damping: float = DAMPING, max_step_mass: float = 0.1,
          backend: str | None = None) -> RateEstimate:
    """EM with mean-field E-steps and the small-tau M-step.

    Each iteration runs :func:`mf_infer` at the current rates, then sets
    each group rate to its expected event count over its expected
    exposure ``sum_t tau prod_m E[g^(m)]``.  The trace stores the rates
    used in each E-step with the resulting Bethe evidence.
    """
    cm = model.compiled
    rates = model.rates if init_rates is None else np.asarray(init_rates, dtype=float)
    if rates.shape != (model.V,) or np.any(rates < 0):
        raise ValidationError("init_rates must be a non-negative vector with one entry per event")
    zero_init = _group_sum(cm, (rates > 0).astype(float)) == 0
    if zero_init.any():
        log.warning("rate groups %s start at 0 and cannot move under EM",
                    [g for g, z in zip(cm.group_names, zero_init) if z])
    act = np.ones((obs.T, model.V)) if activity is None else np.asarray(activity, dtype=float)
    trace = []
    post = None
    converged = False
    it = 0
    flags = zero_init.copy()
    group_rates = _group_sum(cm, rates) / np.maximum(_group_sum(cm, np.ones(model.V)), 1)
    for it in range(1, max_iters + 1):
        current = model.with_rates(rates)
        mass = float((current.rates * cm.max_factors()).sum() * tau)
        if mass > max_step_mass:
            log.warning("worst-case step mass %.3g exceeds %.3g; the small-tau update is biased", mass, max_step_mass)
        post = mf_infer(current, tau, obs, init=init, activity=activity, max_sweeps=max_sweeps, tol=sweep_tol,
                        damping=damping, start=post, backend=backend)
        trace.append((rates.copy(), post.bethe_evidence))
        num = _group_sum(cm, post.event_marginals[:, :-1].sum(axis=0))
        den = _group_sum(cm, tau * (act * _expected_factors(post, model)).sum(axis=0))
        g_new, g_flags = _ratio(num, den)
        flags = g_flags | zero_init
        group_rates = g_new
        new = g_new[cm.group_of]
        change = _rel_change(new, rates)
        rates = new
        if change < tol:
            converged = True
            break
    return _estimate(model, group_rates, flags, "bethe-evidence",
                     trace=trace, iterations=it, converged=converged, zero_init=zero_init)
