"""First-order time discretization on a uniform grid of width ``tau``."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import MultipleEventsInCell, TauTooLarge, ValidationError
from .model import ModelSpec, SystemState
from .simulate import EventPath

log = logging.getLogger(__name__)

MAX_STEP_MASS = 0.1
NULL = -1


@dataclass
class FrameSeries:
    """Chain states on the grid.

    ``frames[t]`` holds the state values at time ``t * tau`` for
    ``t = 0..T``; ``events[t-1]`` is the event fired in ``((t-1)tau, t tau]``
    or ``-1`` for the null event.
    """

    tau: float
    frames: np.ndarray
    events: np.ndarray | None = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64)
        if self.events is not None:
            self.events = np.asarray(self.events, dtype=np.intp)

    @property
    def T(self) -> int:
        return self.frames.shape[0] - 1

    def validate(self, model: ModelSpec) -> None:
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if self.frames.ndim != 2 or self.frames.shape[1] != model.M:
            raise ValidationError(f"frames must be (T+1, {model.M})")
        for m, c in enumerate(model.chains):
            if not np.isin(self.frames[:, m], c.states).all():
                raise ValidationError(f"frames leave the state space of chain {c.name!r}")
        if self.events is None:
            return
        if self.events.shape != (self.T,):
            raise ValidationError("events must have one entry per step")
        deltas = _delta_matrix(model)
        for t in range(1, self.T + 1):
            v = self.events[t - 1]
            step = self.frames[t] - self.frames[t - 1]
            want = np.zeros(model.M, dtype=np.int64) if v == NULL else deltas[v]
            if not np.array_equal(step, want):
                raise ValidationError(f"step {t}: frame change does not match event {v}")


def _delta_matrix(model: ModelSpec) -> np.ndarray:
    out = np.zeros((model.V, model.M), dtype=np.int64)
    for v, e in enumerate(model.events):
        for c, d in e.delta.items():
            out[v, model.chain_index(c)] = d
    return out


def _cell(t: float, tau: float) -> int:
    q = t / tau
    r = round(q)
    return int(r) if abs(q - r) < 1e-9 * max(1.0, abs(q)) else int(np.ceil(q))


def grid_path(model: ModelSpec, path: EventPath, tau: float, horizon: float | None = None) -> FrameSeries:
    """Bin a path into right-closed cells ``((t-1)tau, t tau]``."""
    if tau <= 0:
        raise ValidationError("tau must be positive")
    t0 = float(path.initial_state.time)
    span = (path.horizon if horizon is None else horizon) - t0
    T = max(_cell(span, tau), 0)
    events = np.full(T, NULL, dtype=np.intp)
    deltas = _delta_matrix(model)
    frames = np.empty((T + 1, model.M), dtype=np.int64)
    for time, v in zip(path.times, path.events):
        k = _cell(time - t0, tau)
        if k > T:
            break
        if events[k - 1] != NULL:
            raise MultipleEventsInCell(f"two events fall in grid cell {k} (tau={tau}); use a smaller tau")
        events[k - 1] = v
    steps = np.where((events != NULL)[:, None], deltas[events], 0)
    frames[0] = path.initial_state.values
    frames[1:] = frames[0] + np.cumsum(steps, axis=0)
    return FrameSeries(tau, frames, events)


def step_kernel(model: ModelSpec, prev: SystemState, tau: float, max_step_mass: float = MAX_STEP_MASS) -> np.ndarray:
    """Probabilities of each event then the null event (last entry)."""
    cm = model.compiled
    p = cm.rates * tau * cm.event_factors(cm.state_indices(model.check_state(prev).values, model))
    mass = p.sum()
    _check_mass(mass, max_step_mass)
    return np.append(p, 1.0 - mass)


def _check_mass(mass: float, max_step_mass: float) -> None:
    if mass >= 1.0:
        raise TauTooLarge(f"event mass {mass:.6g} per step is not below 1; reduce tau")
    if mass > max_step_mass:
        log.warning("event mass %.4g per step exceeds %.4g; first-order error may be large", mass, max_step_mass)


def worst_case_rate(model: ModelSpec) -> float:
    cm = model.compiled
    return float((cm.rates * cm.max_factors()).sum())


def suggest_tau(model: ModelSpec, bound: float = MAX_STEP_MASS) -> float:
    """Largest ``2**-k`` (``k >= 0``) whose worst-case event mass is at most ``bound``."""
    if not 0 < bound < 1:
        raise ValidationError("bound must lie in (0, 1)")
    w = worst_case_rate(model)
    tau = 1.0
    while tau * w > bound:
        tau /= 2
    return tau


def discrete_log_likelihood(model: ModelSpec, frames: FrameSeries, density: bool = False) -> float:
    """Log probability of a labelled frame series under the grid kernel.

    With ``density=True`` each fired event contributes ``log h`` instead of
    ``log(h tau)``, making the value comparable to the continuous-time path
    log-density.
    """
    if frames.events is None:
        raise ValidationError("frames carry no event labels")
    cm = model.compiled
    tau = frames.tau
    ll = 0.0
    for t in range(1, frames.T + 1):
        idx = cm.state_indices(frames.frames[t - 1], model)
        p = cm.rates * tau * cm.event_factors(idx)
        if p.sum() >= 1.0:
            raise TauTooLarge(f"event mass {p.sum():.6g} at step {t}")
        v = frames.events[t - 1]
        if v == NULL:
            ll += np.log1p(-p.sum())
        else:
            ll += np.log(p[v]) - (np.log(tau) if density else 0.0)
    return float(ll)
