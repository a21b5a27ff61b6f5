"""SIS epidemics on time-varying contact networks.

Each person is one binary chain (0 = susceptible, 1 = infectious).  Every
contact edge carries two infection events, one per direction, and every
person has a recovery and an external-infection event.  Time is measured
in days; contact windows are measured in grid steps of width ``tau``.

A time-varying network becomes one model over the union of all edges plus
an activity mask that switches infection events off outside the windows in
which their edge is present.  Both inference engines and the simulator
accept that mask, so the chains run uninterrupted across window
boundaries.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import networkx as nx
import numpy as np
from sklearn.metrics import roc_curve as _sk_roc_curve

from .discretize import FrameSeries, _delta_matrix
from .errors import DegenerateLabels, ValidationError
from .meanfield import MeanFieldPosterior, mf_infer
from .model import ChainSpec, EventSpec, ModelSpec, Reactant, SystemState
from .observations import MISSING, ChainObservation, ObservationModelSpec, ObservationSet, sample_observations, \
    select_volunteers
from .rng import make_rng
from .simulate import EventPath, gillespie

log = logging.getLogger(__name__)

SUSCEPTIBLE, INFECTIOUS = 0, 1
GROUPS = ("infection", "recovery", "external")


@dataclass(frozen=True)
class ContactWindow:
    """Edges present during grid cells ``start+1 .. stop`` (i.e. times ``(start tau, stop tau]``)."""

    start: int
    stop: int
    edges: tuple[tuple[int, int], ...] = ()


@dataclass(frozen=True)
class ContactNetwork:
    """Agents ``0..num_agents-1`` with contiguous contact windows on a ``tau`` grid (days per step)."""

    num_agents: int
    windows: tuple[ContactWindow, ...]
    tau: float

    def __post_init__(self):
        wins = tuple(ContactWindow(int(w.start), int(w.stop), tuple(_edge(p, q) for p, q in w.edges))
                     for w in self.windows)
        object.__setattr__(self, "windows", wins)
        self.validate()

    def validate(self) -> None:
        if self.num_agents < 1:
            raise ValidationError("a contact network needs at least one agent")
        if self.tau <= 0:
            raise ValidationError("tau must be positive")
        if not self.windows:
            raise ValidationError("a contact network needs at least one window")
        pos = 0
        for w in self.windows:
            if w.start != pos or w.stop <= w.start:
                raise ValidationError(f"window ({w.start}, {w.stop}) leaves a gap or overlaps; windows must be contiguous from 0")
            pos = w.stop
            for p, q in w.edges:
                if p == q:
                    raise ValidationError(f"self-edge on agent {p}")
                if not (0 <= p < self.num_agents and 0 <= q < self.num_agents):
                    raise ValidationError(f"edge ({p}, {q}) names an agent outside 0..{self.num_agents - 1}")

    @property
    def T(self) -> int:
        return self.windows[-1].stop

    @property
    def steps_per_day(self) -> int:
        return max(int(round(1.0 / self.tau)), 1)

    @property
    def days(self) -> int:
        return self.T // self.steps_per_day

    def union_edges(self) -> list[tuple[int, int]]:
        return sorted({e for w in self.windows for e in w.edges})

    def mean_degree(self) -> float:
        """Time-averaged number of contacts per agent."""
        total = sum((w.stop - w.start) * 2 * len(set(w.edges)) for w in self.windows)
        return total / (self.T * self.num_agents)

    def truncate(self, T: int) -> "ContactNetwork":
        """The first ``T`` steps."""
        if not 0 < T <= self.T:
            raise ValidationError(f"cannot truncate a {self.T}-step network to {T} steps")
        wins = [ContactWindow(w.start, min(w.stop, T), w.edges) for w in self.windows if w.start < T]
        return ContactNetwork(self.num_agents, tuple(wins), self.tau)

    def contacts(self, t0: int, t1: int) -> list[set[int]]:
        """Neighbour sets of every agent over the cells ``t0+1 .. t1``."""
        out = [set() for _ in range(self.num_agents)]
        for w in self.windows:
            if w.stop <= t0 or w.start >= t1:
                continue
            for p, q in w.edges:
                out[p].add(q)
                out[q].add(p)
        return out


def _edge(p, q) -> tuple[int, int]:
    p, q = int(p), int(q)
    return (p, q) if p <= q else (q, p)


@dataclass(frozen=True)
class EpidemicConfig:
    """Rates per day and the reporting setup.

    ``report_noise[s][y]`` is the probability that a volunteer in state
    ``s`` reports symptom ``y``.
    """

    c1: float
    c2: float
    c3: float
    volunteer_fraction: float = 0.1
    report_noise: tuple[tuple[float, float], tuple[float, float]] = ((0.95, 0.05), (0.05, 0.95))
    initial_prevalence: float | None = None

    def __post_init__(self):
        if min(self.c1, self.c2, self.c3) < 0:
            raise ValidationError("rates must be non-negative")
        if not 0 <= self.volunteer_fraction <= 1:
            raise ValidationError("volunteer_fraction must lie in [0, 1]")
        noise = np.asarray(self.report_noise, dtype=float)
        if noise.shape != (2, 2) or np.any(noise < 0) or not np.allclose(noise.sum(axis=1), 1.0):
            raise ValidationError("report_noise must be a 2x2 row-stochastic matrix")

    @classmethod
    def calibrated(cls, network: ContactNetwork, infections_per_year: float = 2.0, recovery_days: float = 7.0,
                   contact_share: float = 0.9, **kw) -> "EpidemicConfig":
        """Rates giving ``infections_per_year`` per person at the network's contact intensity.

        The force of infection on a susceptible person is ``lam = c3 + c1 k p``
        with mean degree ``k`` and steady-state prevalence
        ``p = lam / (lam + c2)``.  ``contact_share`` of ``lam`` comes from
        contacts and the rest from outside the cohort.
        """
        if not 0 <= contact_share <= 1:
            raise ValidationError("contact_share must lie in [0, 1]")
        lam = infections_per_year / 365.0
        c2 = 1.0 / recovery_days
        k = network.mean_degree()
        c1 = contact_share * (lam + c2) / k if k > 0 else 0.0
        c3 = lam if k == 0 else (1.0 - contact_share) * lam
        return cls(c1=c1, c2=c2, c3=c3, **kw)

    def prevalence(self, network: ContactNetwork) -> float:
        """Initial infectious fraction; the steady state of the calibration by default."""
        if self.initial_prevalence is not None:
            return self.initial_prevalence
        lam = self.c3 + self.c1 * network.mean_degree() * _steady(self, network)
        return lam / (lam + self.c2) if lam + self.c2 > 0 else 0.0


def _steady(cfg: EpidemicConfig, network: ContactNetwork) -> float:
    """Fixed point of ``p = lam(p) / (lam(p) + c2)`` by iteration."""
    p = 0.0
    k = network.mean_degree()
    for _ in range(200):
        lam = cfg.c3 + cfg.c1 * k * p
        nxt = lam / (lam + cfg.c2) if lam + cfg.c2 > 0 else 0.0
        if abs(nxt - p) < 1e-14:
            break
        p = nxt
    return p


@dataclass
class SISModel:
    """Union model over all edges with the per-step activity mask."""

    model: ModelSpec
    activity: np.ndarray  # (T, V)
    network: ContactNetwork
    edge_events: dict[tuple[int, int], tuple[int, int]]  # edge -> (q infects p, p infects q)

    def window_models(self) -> list[ModelSpec]:
        """One model per window holding only that window's infection events."""
        out = []
        for w in self.network.windows:
            present = set(w.edges)
            keep = [e for e in self.model.events if not e.name.startswith("inf_") or _event_edge(e.name) in present]
            out.append(ModelSpec(self.model.chains, keep, dict(self.model.metadata)))
        return out


def _event_edge(name: str) -> tuple[int, int]:
    _, src, dst = name.split("_")
    return _edge(int(src), int(dst))


def agent_name(p: int) -> str:
    return f"p{p}"


def build_sis_model(network: ContactNetwork, config: EpidemicConfig) -> SISModel:
    """SIS events for every person and every edge that appears in some window."""
    P = network.num_agents
    chains = [ChainSpec(agent_name(p), (SUSCEPTIBLE, INFECTIOUS)) for p in range(P)]
    events: list[EventSpec] = []
    edge_events = {}
    for p, q in network.union_edges():
        pair = []
        for src, dst in ((q, p), (p, q)):
            pair.append(len(events))
            events.append(EventSpec(
                f"inf_{src}_{dst}", config.c1,
                {agent_name(src): Reactant(1, INFECTIOUS), agent_name(dst): Reactant(1, SUSCEPTIBLE)},
                {agent_name(dst): 1}, group="infection"))
        edge_events[(p, q)] = tuple(pair)
    for p in range(P):
        a = agent_name(p)
        events.append(EventSpec(f"rec_{p}", config.c2, {a: Reactant(1, INFECTIOUS)}, {a: -1}, group="recovery"))
        events.append(EventSpec(f"ext_{p}", config.c3, {a: Reactant(1, SUSCEPTIBLE)}, {a: 1}, group="external"))
    model = ModelSpec(chains, events, {"kind": "SIS", "time_unit": "day"})
    activity = np.ones((network.T, model.V))
    inf = np.array([i for pair in edge_events.values() for i in pair], dtype=np.intp)
    if len(inf):
        activity[:, inf] = 0.0
        for w in network.windows:
            on = [i for e in set(w.edges) for i in edge_events[e]]
            activity[w.start:w.stop, on] = 1.0
    return SISModel(model, activity, network, edge_events)


def small_world_network(num_agents: int = 100, k: int = 4, rewire: float = 0.1, days: int = 30,
                        steps_per_day: int = 96, active_hours: tuple[float, float] = (8.0, 18.0),
                        daily_presence: float = 0.8, seed: int = 0) -> ContactNetwork:
    """Watts-Strogatz contacts that repeat every day.

    Contacts happen only between ``active_hours``; on each day every edge of
    the base graph is present independently with probability
    ``daily_presence``.
    """
    if steps_per_day < 1 or days < 1:
        raise ValidationError("days and steps_per_day must be positive")
    rng = make_rng(seed, "network")
    base = nx.watts_strogatz_graph(num_agents, k, rewire, seed=int(rng.integers(2**32)))
    edges = sorted(_edge(p, q) for p, q in base.edges())
    on = int(round(active_hours[0] / 24 * steps_per_day))
    off = int(round(active_hours[1] / 24 * steps_per_day))
    if not 0 <= on < off <= steps_per_day:
        raise ValidationError("active_hours must satisfy 0 <= start < end <= 24")
    windows = []
    for d in range(days):
        t0 = d * steps_per_day
        today = tuple(e for e, keep in zip(edges, rng.random(len(edges)) < daily_presence) if keep)
        for a, b, es in ((0, on, ()), (on, off, today), (off, steps_per_day, ())):
            if b > a:
                windows.append(ContactWindow(t0 + a, t0 + b, es))
    return ContactNetwork(num_agents, tuple(windows), 1.0 / steps_per_day)


def simulate_sis(sis: SISModel, init: SystemState, seed: int) -> EventPath:
    """Gillespie window by window; window ``w`` draws from replica stream ``w``."""
    net = sis.network
    model = sis.model
    state = model.check_state(init)
    times, events = [], []
    for w_i, w in enumerate(net.windows):
        rates = model.rates * sis.activity[w.start]
        seg = gillespie(model, SystemState(state.values, w.start * net.tau), (w.stop - w.start) * net.tau, seed,
                        rates=rates, replica=w_i)
        times.extend(seg.times.tolist())
        events.extend(seg.events.tolist())
        if len(seg):
            state = seg.states(model)[-1]
    return EventPath(init, np.array(times), np.array(events, dtype=np.intp), net.T * net.tau)


def states_on_grid(model: ModelSpec, path: EventPath, tau: float, T: int) -> np.ndarray:
    """State values at times ``t tau`` (events at exactly ``t tau`` included), shape (T+1, M)."""
    deltas = _delta_matrix(model)
    grid = path.initial_state.time + tau * np.arange(T + 1)
    steps = np.zeros((len(path) + 1, model.M), dtype=np.int64)
    steps[0] = path.initial_state.values
    if len(path):
        steps[1:] = steps[0] + np.cumsum(deltas[path.events], axis=0)
    count = np.searchsorted(path.times, grid * (1 + 1e-12), side="right")
    return steps[count]


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float


def roc_curve(scores, truth) -> RocCurve:
    """Threshold sweep over the distinct scores; AUC by the trapezoid rule."""
    scores = np.asarray(scores, dtype=float).ravel()
    truth = np.asarray(truth).ravel().astype(bool)
    if scores.shape != truth.shape:
        raise ValidationError("scores and truth must have the same length")
    if truth.all() or not truth.any():
        raise DegenerateLabels("ROC needs at least one positive and one negative label")
    fpr, tpr, thr = _sk_roc_curve(truth, scores, drop_intermediate=False)
    return RocCurve(thr, fpr, tpr, float(np.trapezoid(tpr, fpr)))


def daily_max(values: np.ndarray, steps_per_day: int) -> np.ndarray:
    """Max over the cells of each day: day ``d`` covers steps ``d*spd+1 .. (d+1)*spd``. Input (T+1, P)."""
    days = (values.shape[0] - 1) // steps_per_day
    body = values[1: days * steps_per_day + 1]
    return body.reshape(days, steps_per_day, -1).max(axis=1)


def report_steps(network: ContactNetwork) -> np.ndarray:
    """Volunteers report once per day, at the day's last step."""
    spd = network.steps_per_day
    return spd * np.arange(1, network.days + 1)


@dataclass
class BaselineScores:
    scores: np.ndarray  # (days, P)
    population: np.ndarray  # (days,)


def scaling_baseline(reports: np.ndarray, network: ContactNetwork, volunteer_fraction: float) -> BaselineScores:
    """Contact-frequency scores from daily symptom reports.

    ``reports`` is (T+1, P) with 1 for symptomatic, 0 for healthy and -1
    where nobody reported.  An agent's score on a day is the fraction of that
    day's reporting contacts who were symptomatic (0 with none); the
    population estimate is the number of symptomatic reports divided by
    ``volunteer_fraction``.
    """
    reports = np.asarray(reports)
    spd = network.steps_per_day
    days = network.days
    P = network.num_agents
    scores = np.zeros((days, P))
    population = np.zeros(days)
    for d in range(days):
        day = reports[d * spd + 1: (d + 1) * spd + 1]
        seen = (day != MISSING).any(axis=0)
        sick = (day == INFECTIOUS).any(axis=0)
        population[d] = sick.sum() / volunteer_fraction if volunteer_fraction > 0 else 0.0
        for p, nb in enumerate(network.contacts(d * spd, (d + 1) * spd)):
            rep = [q for q in nb if seen[q]]
            if rep:
                scores[d, p] = sum(bool(sick[q]) for q in rep) / len(rep)
    return BaselineScores(scores, population)


@dataclass
class ExperimentReport:
    volunteers: np.ndarray
    evaluated: np.ndarray  # agents scored in the ROC
    truth_daily: np.ndarray  # (days, P) day-max true state
    scores_variational: np.ndarray  # (days, P) day-max posterior infection probability
    scores_baseline: np.ndarray
    roc_variational: RocCurve | None
    roc_baseline: RocCurve | None
    population_truth: np.ndarray  # (days,) infectious count at each report step
    population_variational: np.ndarray
    population_baseline: np.ndarray
    sweeps: int
    converged: bool
    n_events: int
    path: EventPath = field(repr=False)
    posterior: MeanFieldPosterior | None = field(default=None, repr=False)

    @property
    def auc_variational(self) -> float:
        return self.roc_variational.auc if self.roc_variational else float("nan")

    @property
    def auc_baseline(self) -> float:
        return self.roc_baseline.auc if self.roc_baseline else float("nan")

    def summary(self) -> dict:
        return {
            "auc_variational": self.auc_variational,
            "auc_baseline": self.auc_baseline,
            "auc_difference": self.auc_variational - self.auc_baseline,
            "volunteers": len(self.volunteers),
            "evaluated_agents": len(self.evaluated),
            "positive_agent_days": int(self.truth_daily[:, self.evaluated].sum()),
            "events": self.n_events,
            "sweeps": self.sweeps,
            "converged": self.converged,
        }


def run_cohort_experiment(network: ContactNetwork, config: EpidemicConfig, seed: int, horizon: float | None = None,
                          tol: float = 1e-6, max_sweeps: int = 200, keep_posterior: bool = False,
                          backend: str | None = None) -> ExperimentReport:
    """Simulate a cohort, sample volunteer reports, infer, and score both detectors.

    ``horizon`` (days) truncates the network.  The ROC is computed over the
    non-volunteers (everyone when all agents volunteer) and each day's
    maximum; it is ``None`` when those labels are all equal.
    """
    if horizon is not None:
        network = network.truncate(int(round(horizon / network.tau)))
    sis = build_sis_model(network, config)
    model = sis.model
    P, T, spd = network.num_agents, network.T, network.steps_per_day

    prev = config.prevalence(network)
    x0 = (make_rng(seed, "initial").random(P) < prev).astype(np.int64)
    path = simulate_sis(sis, SystemState(tuple(x0.tolist()), 0.0), seed)
    frames = states_on_grid(model, path, network.tau, T)

    volunteers = select_volunteers(P, config.volunteer_fraction, seed)
    noise = ChainObservation(matrix=np.asarray(config.report_noise, dtype=float))
    obs_model = ObservationModelSpec({agent_name(p): noise for p in volunteers})
    drawn = sample_observations(FrameSeries(network.tau, frames), model, obs_model, seed)
    y = np.full_like(drawn.y, MISSING)
    steps = report_steps(network)
    y[steps] = drawn.y[steps]
    obs = ObservationSet.from_values(model, y, obs_model)

    prior = [np.array([1.0 - prev, prev])] * P
    post = mf_infer(model, network.tau, obs, init=prior, activity=sis.activity, tol=tol,
                    max_sweeps=max_sweeps, backend=backend)
    infected = np.stack([c.gamma[:, INFECTIOUS] for c in post.chains], axis=1)  # (T+1, P)

    truth_daily = daily_max(frames, spd)
    var_daily = daily_max(infected, spd)
    base = scaling_baseline(y, network, config.volunteer_fraction)
    evaluated = np.setdiff1d(np.arange(P), volunteers)
    if not len(evaluated):
        evaluated = np.arange(P)
    labels = truth_daily[:, evaluated]
    if labels.size and labels.any() and not labels.all():
        roc_var = roc_curve(var_daily[:, evaluated], labels)
        roc_base = roc_curve(base.scores[:, evaluated], labels)
    else:
        log.warning("seed %d: no usable labels among non-volunteers; ROC skipped", seed)
        roc_var = roc_base = None
    return ExperimentReport(
        volunteers=volunteers, evaluated=evaluated, truth_daily=truth_daily,
        scores_variational=var_daily, scores_baseline=base.scores,
        roc_variational=roc_var, roc_baseline=roc_base,
        population_truth=frames[steps].sum(axis=1).astype(float),
        population_variational=infected[steps].sum(axis=1),
        population_baseline=base.population,
        sweeps=post.iterations, converged=post.converged, n_events=len(path),
        path=path, posterior=post if keep_posterior else None,
    )
