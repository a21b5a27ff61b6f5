"""Stochastic kinetic model types and hazard evaluation.

A model is a set of chains (agents or species populations), each with a
finite ordered set of non-negative integer states, and a set of events.
Event ``v`` fires with hazard

    h_v(x) = c_v * prod_m g_v^(m)(x^(m))

where each chain factor is a power of a per-chain species count.  The
species count is either the chain state itself (a population) or the
indicator of one particular state (an agent in a given category, e.g. a
susceptible person on a binary infected/not-infected chain).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .errors import BoundaryViolation, FireFromZeroHazard, UnknownChain, ValidationError


@dataclass(frozen=True)
class ChainSpec:
    name: str
    states: tuple[int, ...]
    label: str = ""

    def __post_init__(self):
        states = tuple(int(s) for s in self.states)
        object.__setattr__(self, "states", states)
        if not states:
            raise ValidationError(f"chain {self.name!r}: empty state space")
        if len(set(states)) != len(states):
            raise ValidationError(f"chain {self.name!r}: duplicate states")
        if min(states) < 0:
            raise ValidationError(f"chain {self.name!r}: states must be non-negative")

    @property
    def size(self) -> int:
        return len(self.states)

    def index_of(self, value: int) -> int:
        try:
            return self.states.index(int(value))
        except ValueError:
            raise ValidationError(f"state {value} not in chain {self.name!r}") from None


@dataclass(frozen=True)
class Reactant:
    """Reactant order on one chain.

    ``state=None`` counts the chain value itself; otherwise the count is
    ``1`` when the chain sits in ``state`` and ``0`` elsewhere.
    """

    order: int = 1
    state: int | None = None

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 0:
            raise ValidationError(f"reactant order must be a non-negative integer, got {self.order}")

    def count(self, x: int) -> int:
        return int(x) if self.state is None else int(int(x) == self.state)

    def factor(self, x: int) -> float:
        # python's 0 ** 0 == 1, the convention we want
        return float(self.count(x) ** int(self.order))


@dataclass(frozen=True)
class EventSpec:
    name: str
    rate_constant: float
    reactants: Mapping[str, Reactant] = field(default_factory=dict)
    delta: Mapping[str, int] = field(default_factory=dict)
    group: str | None = None
    label: str = ""

    def __post_init__(self):
        if not np.isfinite(self.rate_constant) or self.rate_constant < 0:
            raise ValidationError(f"event {self.name!r}: rate constant must be finite and >= 0")
        reactants = {}
        for chain, r in dict(self.reactants).items():
            if isinstance(r, Reactant):
                reactants[chain] = r
            elif isinstance(r, Mapping):
                reactants[chain] = Reactant(int(r.get("order", 1)), r.get("state"))
            else:
                reactants[chain] = Reactant(int(r))
        object.__setattr__(self, "reactants", reactants)
        object.__setattr__(self, "delta", {k: int(d) for k, d in dict(self.delta).items()})

    @property
    def rate_group(self) -> str:
        return self.group if self.group is not None else self.name

    def touched(self) -> set[str]:
        """Chains whose factor is not identically one or whose state changes."""
        out = {c for c, r in self.reactants.items() if r.order > 0}
        out |= {c for c, d in self.delta.items() if d != 0}
        return out


@dataclass(frozen=True)
class SystemState:
    values: tuple[int, ...]
    time: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))


def chain_factor(event: EventSpec, chain: ChainSpec, state: int) -> float:
    r = event.reactants.get(chain.name)
    if r is None:
        return 1.0
    return r.factor(state)


@dataclass(frozen=True)
class ModelSpec:
    chains: tuple[ChainSpec, ...]
    events: tuple[EventSpec, ...]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "chains", tuple(self.chains))
        object.__setattr__(self, "events", tuple(self.events))
        self.validate()

    @property
    def M(self) -> int:
        return len(self.chains)

    @property
    def V(self) -> int:
        return len(self.events)

    @property
    def rates(self) -> np.ndarray:
        return np.array([e.rate_constant for e in self.events], dtype=float)

    @cached_property
    def _chain_pos(self) -> dict[str, int]:
        return {c.name: i for i, c in enumerate(self.chains)}

    def chain_index(self, name: str) -> int:
        try:
            return self._chain_pos[name]
        except KeyError:
            raise UnknownChain(f"unknown chain {name!r}") from None

    def event_index(self, name: str) -> int:
        for i, e in enumerate(self.events):
            if e.name == name:
                return i
        raise ValidationError(f"unknown event {name!r}")

    def validate(self) -> None:
        names = [c.name for c in self.chains]
        if len(set(names)) != len(names):
            raise ValidationError("duplicate chain names")
        enames = [e.name for e in self.events]
        if len(set(enames)) != len(enames):
            raise ValidationError("duplicate event names")
        pos = {n: i for i, n in enumerate(names)}
        for e in self.events:
            for c in list(e.reactants) + list(e.delta):
                if c not in pos:
                    raise UnknownChain(f"event {e.name!r} references unknown chain {c!r}")
            for c in e.touched():
                chain = self.chains[pos[c]]
                d = e.delta.get(c, 0)
                space = set(chain.states)
                for x in chain.states:
                    if chain_factor(e, chain, x) > 0 and (x + d) not in space:
                        raise BoundaryViolation(
                            f"event {e.name!r} moves chain {c!r} from state {x} to {x + d}, "
                            f"outside its state space"
                        )

    def with_rates(self, rates: Sequence[float]) -> "ModelSpec":
        rates = np.asarray(rates, dtype=float)
        if rates.shape != (self.V,):
            raise ValidationError(f"expected {self.V} rates, got shape {rates.shape}")
        events = tuple(replace(e, rate_constant=float(r)) for e, r in zip(self.events, rates))
        return ModelSpec(self.chains, events, dict(self.metadata))

    def check_state(self, state: SystemState | Sequence[int]) -> SystemState:
        if not isinstance(state, SystemState):
            state = SystemState(tuple(state))
        if len(state.values) != self.M:
            raise ValidationError(f"state has {len(state.values)} entries, model has {self.M} chains")
        for c, x in zip(self.chains, state.values):
            if x not in c.states:
                raise ValidationError(f"state {x} not in chain {c.name!r}")
        return state

    @cached_property
    def compiled(self) -> "CompiledModel":
        return CompiledModel(self)


def _event(model: ModelSpec, event: EventSpec | int) -> EventSpec:
    return model.events[event] if isinstance(event, (int, np.integer)) else event


def hazard(model: ModelSpec, event: EventSpec | int, state: SystemState | Sequence[int]) -> float:
    e = _event(model, event)
    values = state.values if isinstance(state, SystemState) else tuple(state)
    h = e.rate_constant
    for c, x in zip(model.chains, values):
        h *= chain_factor(e, c, x)
    return float(h)


def total_hazard(model: ModelSpec, state: SystemState | Sequence[int]) -> float:
    return float(sum(hazard(model, e, state) for e in model.events))


def apply_event(model: ModelSpec, event: EventSpec | int, state: SystemState) -> SystemState:
    e = _event(model, event)
    if hazard(model, e, state) <= 0:
        raise FireFromZeroHazard(f"event {e.name!r} has zero hazard at state {tuple(state.values)}")
    values = list(state.values)
    for c, d in e.delta.items():
        values[model.chain_index(c)] += d
    return SystemState(tuple(values), state.time)


class CompiledModel:
    """Dense array view of a model used by the numerical engines.

    States are addressed by their position in each chain's state tuple.
    Each (event, touched chain) pair is an *incidence* carrying the chain
    factor table ``g`` and the index map ``shift`` (``-1`` where the
    factor is zero and the move would leave the state space).
    """

    def __init__(self, model: ModelSpec):
        self.M = model.M
        self.V = model.V
        self.sizes = np.array([c.size for c in model.chains], dtype=np.intp)
        self.smax = int(self.sizes.max()) if self.M else 1
        self.rates = model.rates
        inc_event, inc_chain, inc_g, inc_shift, inc_delta = [], [], [], [], []
        event_inc: list[list[int]] = [[] for _ in range(self.V)]
        pos = {c.name: i for i, c in enumerate(model.chains)}
        for v, e in enumerate(model.events):
            for name in sorted(e.touched(), key=pos.__getitem__):
                m = pos[name]
                chain = model.chains[m]
                g = np.zeros(self.smax)
                shift = np.full(self.smax, -1, dtype=np.intp)
                d = e.delta.get(name, 0)
                for s, x in enumerate(chain.states):
                    g[s] = chain_factor(e, chain, x)
                    if g[s] > 0:
                        shift[s] = chain.states.index(x + d)
                event_inc[v].append(len(inc_event))
                inc_event.append(v)
                inc_chain.append(m)
                inc_g.append(g)
                inc_shift.append(shift)
                inc_delta.append(d)
        self.inc_event = np.array(inc_event, dtype=np.intp)
        self.inc_chain = np.array(inc_chain, dtype=np.intp)
        self.inc_g = np.array(inc_g, dtype=float).reshape(-1, self.smax)
        self.inc_shift = np.array(inc_shift, dtype=np.intp).reshape(-1, self.smax)
        self.inc_moves = np.array(inc_delta, dtype=np.intp) != 0
        self.kmax = max((len(x) for x in event_inc), default=0)
        self.event_inc = np.full((self.V, max(self.kmax, 1)), -1, dtype=np.intp)
        for v, incs in enumerate(event_inc):
            self.event_inc[v, : len(incs)] = incs
        groups: dict[str, int] = {}
        self.group_of = np.array([groups.setdefault(e.rate_group, len(groups)) for e in model.events], dtype=np.intp)
        self.group_names = list(groups)
        self.chain_values = [np.array(c.states) for c in model.chains]

    @property
    def n_incidences(self) -> int:
        return len(self.inc_event)

    def state_indices(self, values: Sequence[int], model: ModelSpec) -> np.ndarray:
        return np.array([c.index_of(x) for c, x in zip(model.chains, values)], dtype=np.intp)

    def event_factors(self, idx: np.ndarray) -> np.ndarray:
        """g_v(x) for every event at the joint state given by index vector ``idx``."""
        g = np.ones(self.V)
        if self.n_incidences:
            vals = self.inc_g[np.arange(self.n_incidences), idx[self.inc_chain]]
            np.multiply.at(g, self.inc_event, vals)
        return g

    def max_factors(self) -> np.ndarray:
        """Per-event product over chains of max_x g_v^(m)(x)."""
        g = np.ones(self.V)
        if self.n_incidences:
            np.multiply.at(g, self.inc_event, self.inc_g.max(axis=1))
        return g
