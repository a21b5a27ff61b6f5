"""Observation models and per-step likelihood tables."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import UnknownChain, ValidationError
from .model import ModelSpec
from .rng import make_rng

MISSING = -1


@dataclass(frozen=True)
class ChainObservation:
    """How one chain is observed.

    ``matrix[s, j]`` is P(symbol j | state index s); ``None`` means the
    identity model (symbols are the chain states themselves).
    ``observe_prob`` masks steps missing-at-random.
    """

    matrix: np.ndarray | None = None
    symbols: tuple[int, ...] | None = None
    observe_prob: float = 1.0

    def table(self, states: tuple[int, ...]) -> tuple[np.ndarray, tuple[int, ...]]:
        if self.matrix is None:
            return np.eye(len(states)), tuple(states)
        mat = np.asarray(self.matrix, dtype=float)
        symbols = self.symbols if self.symbols is not None else tuple(range(mat.shape[1]))
        return mat, tuple(symbols)


@dataclass(frozen=True)
class ObservationModelSpec:
    chains: Mapping[str, ChainObservation] = field(default_factory=dict)
    volunteer_fraction: float | None = None

    def validate(self, model: ModelSpec) -> None:
        for name, obs in self.chains.items():
            m = model.chain_index(name)
            mat, symbols = obs.table(model.chains[m].states)
            if mat.shape != (model.chains[m].size, len(symbols)):
                raise ValidationError(f"observation matrix for chain {name!r} has shape {mat.shape}")
            if np.any(mat < 0) or not np.allclose(mat.sum(axis=1), 1.0):
                raise ValidationError(f"observation matrix rows for chain {name!r} must be distributions")
            if not 0 <= obs.observe_prob <= 1:
                raise ValidationError(f"observe_prob for chain {name!r} outside [0, 1]")
        if self.volunteer_fraction is not None and not 0 <= self.volunteer_fraction <= 1:
            raise ValidationError("volunteer_fraction outside [0, 1]")


@dataclass
class ObservationSet:
    """Observed symbols ``y`` (``-1`` where missing) and likelihood tables.

    ``lik[m][t, s]`` is P(y_t^(m) | x_t^(m) = s-th state); rows of ones mark
    missing observations.  Steps run over ``t = 0..T``.
    """

    lik: list[np.ndarray]
    y: np.ndarray | None = None

    @property
    def T(self) -> int:
        return self.lik[0].shape[0] - 1 if self.lik else 0

    @property
    def M(self) -> int:
        return len(self.lik)

    @classmethod
    def empty(cls, model: ModelSpec, T: int) -> "ObservationSet":
        return cls([np.ones((T + 1, c.size)) for c in model.chains], np.full((T + 1, model.M), MISSING))

    @classmethod
    def from_values(cls, model: ModelSpec, y, obs_model: ObservationModelSpec | None = None) -> "ObservationSet":
        y = np.asarray(y, dtype=np.int64)
        if y.ndim != 2 or y.shape[1] != model.M:
            raise ValidationError(f"observations must be (T+1, {model.M}), got {y.shape}")
        obs_model = obs_model or ObservationModelSpec()
        lik = []
        for m, chain in enumerate(model.chains):
            spec = obs_model.chains.get(chain.name, ChainObservation())
            mat, symbols = spec.table(chain.states)
            col = {s: j for j, s in enumerate(symbols)}
            tab = np.ones((y.shape[0], chain.size))
            for t in np.flatnonzero(y[:, m] != MISSING):
                j = col.get(int(y[t, m]))
                if j is None:
                    raise ValidationError(f"symbol {y[t, m]} not observable on chain {chain.name!r}")
                tab[t] = mat[:, j]
            lik.append(tab)
        return cls(lik, y)

    def validate(self, model: ModelSpec, T: int | None = None) -> None:
        if self.M != model.M:
            raise ValidationError(f"observations cover {self.M} chains, model has {model.M}")
        for m, (tab, c) in enumerate(zip(self.lik, model.chains)):
            if tab.shape[1] != c.size:
                raise ValidationError(f"likelihood table of chain {c.name!r} has {tab.shape[1]} columns")
            if tab.shape[0] != self.lik[0].shape[0]:
                raise ValidationError("likelihood tables disagree on the number of steps")
            if np.any(tab < 0) or not np.all(np.isfinite(tab)):
                raise ValidationError(f"likelihood table of chain {c.name!r} has invalid entries")
        if T is not None and self.T != T:
            raise ValidationError(f"observations span {self.T} steps, expected {T}")

    def padded(self, smax: int) -> np.ndarray:
        out = np.zeros((self.M, self.T + 1, smax))
        for m, tab in enumerate(self.lik):
            out[m, :, : tab.shape[1]] = tab
        return out


def select_volunteers(n: int, fraction: float, seed: int) -> np.ndarray:
    """Sorted indices of ``floor(fraction * n)`` chains chosen by ``seed``."""
    k = int(np.floor(fraction * n + 1e-12))
    rng = make_rng(seed, "volunteers")
    return np.sort(rng.choice(n, size=k, replace=False))


def sample_observations(frames, model: ModelSpec, obs_model: ObservationModelSpec, seed: int) -> ObservationSet:
    """Draw noisy observations of the chains listed in ``obs_model``."""
    obs_model.validate(model)
    for name in obs_model.chains:
        if name not in {c.name for c in model.chains}:
            raise UnknownChain(f"observation model names unknown chain {name!r}")
    listed = [model.chain_index(n) for n in obs_model.chains]
    listed.sort()
    if obs_model.volunteer_fraction is not None:
        pick = select_volunteers(len(listed), obs_model.volunteer_fraction, seed)
        listed = [listed[i] for i in pick]
    rng = make_rng(seed, "observations")
    states = np.asarray(frames.frames)
    y = np.full(states.shape, MISSING, dtype=np.int64)
    for m in listed:
        chain = model.chains[m]
        spec = obs_model.chains[chain.name]
        mat, symbols = spec.table(chain.states)
        idx = np.searchsorted(np.array(chain.states), states[:, m]) if list(chain.states) == sorted(chain.states) \
            else np.array([chain.index_of(x) for x in states[:, m]])
        u = rng.random(len(idx))
        seen = rng.random(len(idx)) < spec.observe_prob
        cdf = np.cumsum(mat, axis=1)[idx]
        j = np.minimum((u[:, None] >= cdf).sum(axis=1), len(symbols) - 1)
        col = np.asarray(symbols)[j]
        y[seen, m] = col[seen]
    return ObservationSet.from_values(model, y, obs_model)
