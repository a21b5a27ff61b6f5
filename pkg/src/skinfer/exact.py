"""Brute-force forward-backward over the joint product state space.

This is the reference oracle for the mean-field engine.  Joint states are
enumerated row-major in chain order (the last chain varies fastest).  All
recursions are normalized per step; ``log Z_t`` accumulates the evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import StateSpaceTooLarge, TauTooLarge, ValidationError
from .model import ModelSpec
from .observations import ObservationSet

JOINT_CAP = 2**20


class JointSpace:
    """Joint enumeration of a model and the sparse per-event move maps."""

    def __init__(self, model: ModelSpec, cap: int = JOINT_CAP):
        sizes = [c.size for c in model.chains]
        n = int(np.prod(sizes, dtype=object)) if sizes else 1
        if n > cap:
            raise StateSpaceTooLarge(f"joint state space has {n} states, cap is {cap}")
        self.model = model
        self.sizes = sizes
        self.N = n
        self.strides = np.ones(len(sizes), dtype=np.int64)
        for m in range(len(sizes) - 2, -1, -1):
            self.strides[m] = self.strides[m + 1] * sizes[m + 1]
        grid = np.indices(sizes).reshape(len(sizes), -1) if sizes else np.zeros((0, 1), dtype=np.intp)
        self.chain_idx = grid  # (M, N) per-chain state index of every joint state
        cm = model.compiled
        self.g = np.ones((model.V, n))
        dst = np.tile(np.arange(n), (model.V, 1))
        for i in range(cm.n_incidences):
            v, m = cm.inc_event[i], cm.inc_chain[i]
            s = grid[m]
            self.g[v] *= cm.inc_g[i, s]
            shifted = cm.inc_shift[i, s]
            dst[v] += np.where(shifted >= 0, shifted - s, 0) * self.strides[m]
        self.src = [np.flatnonzero(self.g[v] > 0) for v in range(model.V)]
        self.dst = [dst[v, self.src[v]] for v in range(model.V)]

    def index(self, idx) -> int:
        return int(np.dot(np.asarray(idx), self.strides))

    def values(self, j: int) -> tuple[int, ...]:
        return tuple(c.states[self.chain_idx[m, j]] for m, c in enumerate(self.model.chains))

    def product(self, per_chain: list[np.ndarray]) -> np.ndarray:
        out = np.ones(self.N)
        for m, vec in enumerate(per_chain):
            out *= np.asarray(vec)[self.chain_idx[m]]
        return out

    def marginals(self, joint: np.ndarray) -> list[np.ndarray]:
        """Per-chain marginals of ``joint`` with shape (..., N)."""
        lead = joint.shape[:-1]
        full = joint.reshape(lead + tuple(self.sizes))
        out = []
        for m in range(len(self.sizes)):
            axes = tuple(len(lead) + k for k in range(len(self.sizes)) if k != m)
            out.append(full.sum(axis=axes))
        return out


@dataclass
class JointPosterior:
    space: JointSpace
    tau: float
    weights: np.ndarray  # (T, V) per-step c_v * tau (activity applied)
    lik: np.ndarray  # (T+1, N) joint observation likelihoods
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    step_log_Z: np.ndarray
    event_marginals: np.ndarray  # (T, V+1), null event last
    null_occupancy: np.ndarray = field(repr=False)  # sum_t xi_t(x, null)
    occupancy: np.ndarray = field(repr=False)  # sum_{t=1..T} gamma_{t-1}(x)

    @property
    def T(self) -> int:
        return self.gamma.shape[0] - 1

    @property
    def log_evidence(self) -> float:
        return float(self.step_log_Z.sum())

    def chain_marginals(self) -> list[np.ndarray]:
        return self.space.marginals(self.gamma)

    def xi(self, t: int) -> np.ndarray:
        """Two-slice table at step ``t`` keyed by (event, previous joint state).

        Row ``v`` holds xi_t(x_{t-1}, v, x_{t-1} + Delta_v); the last row is the
        null event.  The successor state is implied by the event.
        """
        sp = self.space
        w = self.weights[t - 1]
        nxt = self.lik[t] * self.beta[t]
        a = self.alpha[t - 1]
        z = np.exp(self.step_log_Z[t])
        out = np.zeros((sp.model.V + 1, sp.N))
        for v in range(sp.model.V):
            src = sp.src[v]
            out[v, src] = a[src] * w[v] * sp.g[v, src] * nxt[sp.dst[v]]
        out[-1] = a * (1.0 - w @ sp.g) * nxt
        return out / z

    def chain_xi(self, t: int) -> list[np.ndarray]:
        """Per-chain tables ``[x_{t-1}, v, x_t]`` marginalized from :meth:`xi`."""
        sp = self.space
        table = self.xi(t)
        out = []
        for m, size in enumerate(sp.sizes):
            arr = np.zeros((size, sp.model.V + 1, size))
            prev = sp.chain_idx[m]
            for v in range(sp.model.V + 1):
                if v < sp.model.V:
                    src = sp.src[v]
                    np.add.at(arr, (prev[src], v, sp.chain_idx[m][sp.dst[v]]), table[v, src])
                else:
                    np.add.at(arr, (prev, v, prev), table[v])
            out.append(arr)
        return out


def _joint_lik(space: JointSpace, obs: ObservationSet) -> np.ndarray:
    out = np.ones((obs.T + 1, space.N))
    for m, tab in enumerate(obs.lik):
        out *= tab[:, space.chain_idx[m]]
    return out


def _step_weights(model: ModelSpec, tau: float, T: int, activity: np.ndarray | None) -> np.ndarray:
    w = np.broadcast_to(model.rates * tau, (T, model.V)).copy()
    if activity is not None:
        activity = np.asarray(activity, dtype=float)
        if activity.shape != (T, model.V):
            raise ValidationError(f"activity must have shape {(T, model.V)}")
        w *= activity
    return w


def exact_forward_backward(model: ModelSpec, tau: float, obs: ObservationSet, init=None,
                           cap: int = JOINT_CAP, activity: np.ndarray | None = None) -> JointPosterior:
    """Exact smoothing under the first-order grid kernel.

    ``init`` is a distribution over joint states (length N), a list of
    per-chain distributions (taken as a product), or ``None`` for uniform.
    """
    if tau <= 0:
        raise ValidationError("tau must be positive")
    obs.validate(model)
    space = JointSpace(model, cap)
    T = obs.T
    weights = _step_weights(model, tau, T, activity)
    if init is None:
        prior = np.full(space.N, 1.0 / space.N)
    elif isinstance(init, (list, tuple)):
        prior = space.product([np.asarray(p, dtype=float) for p in init])
    else:
        prior = np.asarray(init, dtype=float)
    if prior.shape != (space.N,) or np.any(prior < 0) or prior.sum() <= 0:
        raise ValidationError("initial distribution is invalid")
    prior = prior / prior.sum()

    stay = 1.0 - weights @ space.g  # (T, N)
    if np.any(stay <= 0):
        raise TauTooLarge(f"event mass per step reaches {1 - stay.min():.6g}; reduce tau")
    lik = _joint_lik(space, obs)
    alpha = np.empty((T + 1, space.N))
    beta = np.empty((T + 1, space.N))
    logz = np.empty(T + 1)

    a = prior * lik[0]
    z = a.sum()
    if z <= 0:
        raise ValidationError("observations have zero probability under the initial distribution")
    alpha[0] = a / z
    logz[0] = np.log(z)
    for t in range(1, T + 1):
        prev = alpha[t - 1]
        a = prev * stay[t - 1]
        for v in range(model.V):
            src = space.src[v]
            a[space.dst[v]] += prev[src] * weights[t - 1, v] * space.g[v, src]
        a *= lik[t]
        z = a.sum()
        if z <= 0:
            raise ValidationError(f"observations at step {t} have zero probability")
        alpha[t] = a / z
        logz[t] = np.log(z)

    beta[T] = 1.0
    for t in range(T, 0, -1):
        nxt = lik[t] * beta[t]
        b = stay[t - 1] * nxt
        for v in range(model.V):
            src = space.src[v]
            b[src] += weights[t - 1, v] * space.g[v, src] * nxt[space.dst[v]]
        beta[t - 1] = b / np.exp(logz[t])

    gamma = alpha * beta
    gamma /= gamma.sum(axis=1, keepdims=True)

    ev = np.zeros((T, model.V + 1))
    null_occ = np.zeros(space.N)
    for t in range(1, T + 1):
        nxt = lik[t] * beta[t]
        zt = np.exp(logz[t])
        a = alpha[t - 1]
        for v in range(model.V):
            src = space.src[v]
            ev[t - 1, v] = np.dot(a[src] * space.g[v, src], nxt[space.dst[v]]) * weights[t - 1, v] / zt
        nul = a * stay[t - 1] * nxt / zt
        ev[t - 1, -1] = nul.sum()
        null_occ += nul
    occupancy = gamma[:-1].sum(axis=0)
    return JointPosterior(space, tau, weights, lik, alpha, beta, gamma, logz, ev, null_occ, occupancy)


def exact_em(model: ModelSpec, tau: float, obs: ObservationSet, init_rates=None, update: str = "exact",
             max_iters: int = 100, tol: float = 1e-6, init=None, activity: np.ndarray | None = None,
             cap: int = JOINT_CAP):
    """EM on the rate constants with exact joint E-steps.

    ``update="exact"`` maximizes the expected complete-data log-likelihood
    of the grid kernel (a concave problem in the rates, solved by Newton),
    so the log evidence never decreases.  ``update="small_tau"`` uses the
    closed form expected count over expected exposure.  Returns a
    :class:`~skinfer.learn.RateEstimate` whose trace holds the rates of every
    E-step with their log evidence.
    """
    from .learn import _estimate, _group_sum, _ratio, _rel_change, solve_null_weighted

    if update not in ("exact", "small_tau"):
        raise ValidationError("update must be 'exact' or 'small_tau'")
    cm = model.compiled
    rates = model.rates if init_rates is None else np.asarray(init_rates, dtype=float)
    if rates.shape != (model.V,) or np.any(rates < 0):
        raise ValidationError("init_rates must be a non-negative vector with one entry per event")
    zero_init = _group_sum(cm, (rates > 0).astype(float)) == 0
    act = np.ones((obs.T, model.V)) if activity is None else np.asarray(activity, dtype=float)
    trace = []
    converged = False
    it = 0
    group_rates = _group_sum(cm, rates) / np.maximum(_group_sum(cm, np.ones(model.V)), 1)
    flags = zero_init.copy()
    for it in range(1, max_iters + 1):
        post = exact_forward_backward(model.with_rates(rates), tau, obs, init=init, cap=cap, activity=activity)
        trace.append((rates.copy(), post.log_evidence))
        sp = post.space
        counts = _group_sum(cm, post.event_marginals[:, :-1].sum(axis=0))
        expo = _group_sum(cm, tau * (act * (post.gamma[:-1] @ sp.g.T)).sum(axis=0))
        small, g_flags = _ratio(counts, expo)
        flags = g_flags | zero_init
        if update == "small_tau":
            g_new = small
        else:
            rows, weights = _null_rows_joint(post, act)
            g_new = solve_null_weighted(counts, _group_sum(cm, rows), weights, tau,
                                        start=np.where(small > 0, small, 1.0))
        change = _rel_change(g_new[cm.group_of], rates)
        group_rates = g_new
        rates = g_new[cm.group_of]
        if change < tol:
            converged = True
            break
    return _estimate(model, group_rates, flags, "exact-EM-evidence", trace=trace, iterations=it,
                     converged=converged, zero_init=zero_init)


def _null_rows_joint(post: JointPosterior, act: np.ndarray):
    """Per-event factors and null-step posterior weight of every (step, state) pair."""
    sp = post.space
    if np.all(act == 1.0):
        return sp.g.T, post.null_occupancy
    rows, weights = [], []
    stay = 1.0 - post.weights @ sp.g
    for t in range(1, post.T + 1):
        nul = post.alpha[t - 1] * stay[t - 1] * post.lik[t] * post.beta[t] / np.exp(post.step_log_Z[t])
        rows.append(sp.g.T * act[t - 1])
        weights.append(nul)
    return np.concatenate(rows), np.concatenate(weights)
