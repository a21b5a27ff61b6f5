"""Exact continuous-time simulation and path likelihood."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError, ZeroHazardEvent
from .model import ModelSpec, SystemState, apply_event
from .rng import make_rng


@dataclass
class EventPath:
    """Initial state plus ``(time, event index)`` records on ``(0, horizon)``."""

    initial_state: SystemState
    times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    events: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    horizon: float = 0.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.events = np.asarray(self.events, dtype=np.intp)

    def __len__(self):
        return len(self.times)

    @property
    def records(self) -> list[tuple[float, int]]:
        return list(zip(self.times.tolist(), self.events.tolist()))

    def states(self, model: ModelSpec) -> list[SystemState]:
        """States after each record, starting with the initial state."""
        out = [self.initial_state]
        for t, v in zip(self.times, self.events):
            nxt = apply_event(model, int(v), out[-1])
            out.append(SystemState(nxt.values, float(t)))
        return out

    def validate(self, model: ModelSpec) -> None:
        model.check_state(self.initial_state)
        if len(self.times) and (np.any(np.diff(self.times) <= 0) or self.times[0] <= 0 or self.times[-1] > self.horizon):
            raise ValidationError("path times must be strictly increasing inside (0, horizon]")
        if len(self.events) and (self.events.min() < 0 or self.events.max() >= model.V):
            raise ValidationError("path references unknown events")
        self.states(model)


def gillespie(model: ModelSpec, init: SystemState, horizon: float, seed: int,
              max_events: int | None = None, rates: np.ndarray | None = None, replica: int = 0) -> EventPath:
    """Sample a path on ``(0, horizon)``; events at exactly ``horizon`` are dropped.

    ``horizon`` is a duration measured from ``init.time``.  ``rates``
    overrides the model's rate constants (used for time-windowed models that
    share one event list); ``replica`` selects an independent random stream
    for the same seed.
    """
    if horizon <= 0:
        raise ValidationError("horizon must be positive")
    init = model.check_state(init)
    cm = model.compiled
    c = cm.rates if rates is None else np.asarray(rates, dtype=float)
    idx = cm.state_indices(init.values, model)
    rng = make_rng(seed, "gillespie", replica)
    t = float(init.time)
    end = t + horizon
    times, events = [], []
    while max_events is None or len(times) < max_events:
        h = c * cm.event_factors(idx)
        h0 = h.sum()
        if h0 <= 0:
            break
        t += rng.exponential(1.0 / h0)
        if t >= end:
            break
        v = int(np.searchsorted(np.cumsum(h), rng.random() * h0, side="right"))
        v = min(v, model.V - 1)
        while h[v] <= 0:  # guard against landing on a zero-width bin through rounding
            v -= 1
        for i in cm.event_inc[v]:
            if i < 0:
                break
            m = cm.inc_chain[i]
            idx[m] = cm.inc_shift[i, idx[m]]
        times.append(t)
        events.append(v)
    return EventPath(init, np.array(times), np.array(events, dtype=np.intp), float(end))


def path_log_likelihood(model: ModelSpec, path: EventPath) -> float:
    """log of prod_i h_{v_i}(x_{t_{i-1}}) exp(-int_0^T h_0(x_t) dt)."""
    cm = model.compiled
    idx = cm.state_indices(path.initial_state.values, model)
    c = cm.rates
    prev = float(path.initial_state.time)
    ll = 0.0
    for t, v in zip(path.times, path.events):
        h = c * cm.event_factors(idx)
        if h[v] <= 0:
            raise ZeroHazardEvent(f"event {model.events[v].name!r} at t={t} has zero hazard")
        ll += np.log(h[v]) - h.sum() * (t - prev)
        for i in cm.event_inc[v]:
            if i < 0:
                break
            m = cm.inc_chain[i]
            idx[m] = cm.inc_shift[i, idx[m]]
        prev = t
    ll -= (c * cm.event_factors(idx)).sum() * (path.horizon - prev)
    return float(ll)
