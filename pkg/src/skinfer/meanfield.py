"""Factorized variational forward-backward for stochastic kinetic models.

Each chain keeps its own forward/backward messages.  Other chains enter a
chain's transition kernel only through two expectation ratios per event:

* ``g_tilde``: expected chain factor of the event on the other chain,
  conditioned on that chain making the event's move, relative to the
  chain's stay-put mass;
* ``g_hat``: the same expectation restricted to stay-put pairs.

Chains are updated Jacobi style (every chain reads the previous sweep's
messages), with damping on the messages.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DegenerateDenominator, NotConverged, TauTooLarge, ValidationError
from .model import ModelSpec
from .observations import ObservationSet

log = logging.getLogger(__name__)

DAMPING = 0.3
TOL = 1e-8
MAX_SWEEPS = 200
D_FLOOR = 1e-100
CLAMP = 1e-12


@dataclass
class ChainMessages:
    chain: int
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray


@dataclass
class CouplingFactors:
    """Coupling ratios for every (event, chain) incidence and step.

    Column ``t-1`` refers to step ``t`` (the transition ``t-1 -> t``).
    ``z[t-1]`` is the ratio-form normalizer
    ``sum_j c_j tau prod g_tilde + 1 - sum_j c_j tau prod g_hat``.
    """

    g_tilde: np.ndarray
    g_hat: np.ndarray
    stay: np.ndarray
    z: np.ndarray
    prod_tilde: np.ndarray = field(repr=False)
    prod_hat: np.ndarray = field(repr=False)
    loo_tilde: np.ndarray = field(repr=False)
    loo_hat: np.ndarray = field(repr=False)
    inc_event: np.ndarray = field(repr=False)
    inc_chain: np.ndarray = field(repr=False)

    def pair(self, event: int, chain: int) -> tuple[np.ndarray, np.ndarray]:
        """(g_tilde, g_hat) over steps; ones when the event ignores the chain."""
        hit = np.flatnonzero((self.inc_event == event) & (self.inc_chain == chain))
        if len(hit) == 0:
            T = self.g_tilde.shape[1] if self.g_tilde.size else len(self.z)
            return np.ones(T), np.ones(T)
        return self.g_tilde[hit[0]], self.g_hat[hit[0]]


@dataclass
class MeanFieldPosterior:
    chains: list[ChainMessages]
    event_marginals: np.ndarray
    bethe_evidence: float
    iterations: int
    converged: bool
    residual: float
    coupling: CouplingFactors = field(repr=False)
    residual_trace: list[float] = field(default_factory=list, repr=False)
    log_normalizers: np.ndarray = field(default=None, repr=False)
    _problem: "_Problem" = field(default=None, repr=False)

    @property
    def gamma(self) -> list[np.ndarray]:
        return [c.gamma for c in self.chains]

    def chain_xi(self, m: int, t: int) -> np.ndarray:
        """Per-chain two-slice table ``[x_{t-1}, v, x_t]`` (null event last).

        Uses the couplings the final messages were computed with, so the
        table's marginals reproduce ``gamma`` to rounding error.
        """
        p = self._problem
        kern = marginal_kernel(p.model, p.tau, m, t, self.coupling, activity=p.activity)
        c = self.chains[m]
        tab = c.alpha[t - 1][:, None, None] * kern * (p.obs.lik[m][t] * c.beta[t])[None, None, :]
        return tab / np.exp(self.log_normalizers[m, t])


class _Problem:
    def __init__(self, model: ModelSpec, tau: float, obs: ObservationSet, init, activity):
        if tau <= 0:
            raise ValidationError("tau must be positive")
        obs.validate(model)
        cm = model.compiled
        self.model, self.cm, self.tau, self.obs = model, cm, float(tau), obs
        self.T = obs.T
        self.S = cm.smax
        self.lik = obs.padded(cm.smax)
        self.valid = np.zeros((model.M, cm.smax), dtype=bool)
        for m, c in enumerate(model.chains):
            self.valid[m, : c.size] = True
        self.activity = None if activity is None else np.asarray(activity, dtype=float)
        w = np.broadcast_to(cm.rates * tau, (self.T, model.V)).copy()
        if self.activity is not None:
            if self.activity.shape != (self.T, model.V):
                raise ValidationError(f"activity must have shape {(self.T, model.V)}")
            w *= self.activity
        self.w = w
        self.wT = np.ascontiguousarray(w.T)
        self.init = np.zeros((model.M, cm.smax))
        for m, c in enumerate(model.chains):
            p = np.full(c.size, 1.0 / c.size) if init is None else np.asarray(init[m], dtype=float)
            if p.shape != (c.size,) or np.any(p < 0) or p.sum() <= 0:
                raise ValidationError(f"initial distribution for chain {c.name!r} is invalid")
            self.init[m, : c.size] = p / p.sum()


def _couplings_from(cm, w, N, H, D, backend=None) -> CouplingFactors:
    gt, gh, pt, ph, lt, lh = kernels.get(backend).couplings(
        np.ascontiguousarray(N), np.ascontiguousarray(H), np.ascontiguousarray(D), cm.inc_chain, cm.event_inc,
        D_FLOOR)
    z = 1.0 + np.einsum("tv,vt->t", w, pt - ph)
    return CouplingFactors(gt, gh, D, z, pt, ph, lt, lh, cm.inc_event, cm.inc_chain)


def _check_degenerate(cm, N, D) -> None:
    zero = D <= 0
    if not zero.any():
        return
    moved = np.zeros_like(D, dtype=bool)
    if cm.n_incidences:
        np.logical_or.at(moved, cm.inc_chain, N > 0)
    bad = zero & ~moved
    if bad.any():
        m, t = np.argwhere(bad)[0]
        raise DegenerateDenominator(
            f"chain {m} at step {t + 1}: no transition is compatible with the observations"
        )


def coupling_factors(model: ModelSpec, obs: ObservationSet, alpha, beta, tau: float = 1.0,
                     activity=None, backend: str | None = None) -> CouplingFactors:
    """Couplings from per-chain messages (lists of ``(T+1, S_m)`` arrays)."""
    p = _Problem(model, tau, obs, None, activity)
    a = _pad(alpha, p)
    b = _pad(beta, p)
    N, H, D = kernels.get(backend).coupling_sums(a, b, p.lik, model.compiled.inc_chain,
                                                 model.compiled.inc_g, model.compiled.inc_shift)
    _check_degenerate(p.cm, N, D)
    return _couplings_from(p.cm, p.w, N, H, D, backend)


def _pad(msgs, p: _Problem) -> np.ndarray:
    if isinstance(msgs, np.ndarray) and msgs.ndim == 3 and msgs.shape[2] == p.S:
        return np.ascontiguousarray(msgs, dtype=float)
    out = np.zeros((p.model.M, p.T + 1, p.S))
    for m, arr in enumerate(msgs):
        arr = np.asarray(arr, dtype=float)
        out[m, :, : arr.shape[1]] = arr
    return out


def marginal_kernel(model: ModelSpec, tau: float, m: int, t: int, coupling: CouplingFactors,
                    activity=None) -> np.ndarray:
    """Kernel values ``[x_{t-1}, v, x_t]`` for chain ``m`` at step ``t``.

    Direct per-branch evaluation; the last ``v`` slot is the null event.
    Raises :class:`TauTooLarge` if the null branch is negative beyond
    rounding.
    """
    cm = model.compiled
    chain = model.chains[m]
    S = chain.size
    w = cm.rates * tau
    if activity is not None:
        w = w * np.asarray(activity)[t - 1]
    out = np.zeros((S, model.V + 1, S))
    null = np.ones(S)
    for v in range(model.V):
        incs = [i for i in cm.event_inc[v] if i >= 0]
        mine = [i for i in incs if cm.inc_chain[i] == m]
        others = [i for i in incs if cm.inc_chain[i] != m]
        pt = np.prod([coupling.g_tilde[i, t - 1] for i in others]) if others else 1.0
        ph = np.prod([coupling.g_hat[i, t - 1] for i in others]) if others else 1.0
        if mine:
            i = mine[0]
            g = cm.inc_g[i, :S]
            for s in range(S):
                if g[s] > 0:
                    out[s, v, cm.inc_shift[i, s]] += w[v] * g[s] * pt
            null -= w[v] * g * ph
        else:
            out[np.arange(S), v, np.arange(S)] = w[v] * pt
            null -= w[v] * ph
    if np.any(null < -CLAMP):
        raise TauTooLarge(f"chain {chain.name!r}, step {t}: null-event weight {null.min():.3g} < 0")
    out[np.arange(S), model.V, np.arange(S)] = np.maximum(null, 0.0)
    return out


def _assemble(p: _Problem, cf: CouplingFactors, backend=None) -> np.ndarray:
    """Per-chain transition weights ``K[m, t-1, s, s']`` summed over events."""
    cm = p.cm
    K, worst, (m, s, t) = kernels.get(backend).assemble_kernels(
        p.wT, cf.prod_tilde, cf.prod_hat, cf.loo_tilde, cf.loo_hat, cm.inc_event, cm.inc_chain, cm.inc_g,
        cm.inc_shift, p.valid)
    if worst < -CLAMP:
        raise TauTooLarge(
            f"chain {p.model.chains[m].name!r}, step {t + 1}: null-event weight {worst:.3g} < 0; reduce tau"
        )
    return K


def _fb(p: _Problem, K: np.ndarray, backend):
    alpha, beta, logz = kernels.get(backend).forward_backward(K, p.lik, p.init)
    if not np.all(np.isfinite(logz)):
        m, t = np.argwhere(~np.isfinite(logz))[0]
        raise DegenerateDenominator(
            f"chain {p.model.chains[m].name!r}: observations at step {t} have zero probability"
        )
    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    return alpha, beta, gamma, logz


def _messages_couplings(p: _Problem, alpha, beta, backend) -> CouplingFactors:
    N, H, D = kernels.get(backend).coupling_sums(alpha, beta, p.lik, p.cm.inc_chain, p.cm.inc_g, p.cm.inc_shift)
    _check_degenerate(p.cm, N, D)
    return _couplings_from(p.cm, p.w, N, H, D, backend)


@dataclass
class _State:
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    logz: np.ndarray | None = None
    coupling: CouplingFactors | None = None


def _initial_state(p: _Problem, backend) -> _State:
    T = p.T
    ones = np.ones((p.cm.n_incidences, T))
    cf = _couplings_from(p.cm, p.w, ones, ones, np.ones((p.model.M, T)), backend)
    alpha, _, _, _ = _fb(p, _assemble(p, cf, backend), backend)
    beta = np.where(p.valid[:, None, :], 1.0, 0.0) * np.ones((1, T + 1, 1))
    gamma = alpha.copy()
    return _State(alpha, beta, gamma)


def _sweep(p: _Problem, state: _State, backend) -> tuple[_State, float]:
    cf = _messages_couplings(p, state.alpha, state.beta, backend)
    alpha, beta, gamma, logz = _fb(p, _assemble(p, cf, backend), backend)
    residual = float(np.abs(gamma - state.gamma).max()) if gamma.size else 0.0
    return _State(alpha, beta, gamma, logz, cf), residual


def _damp(new: _State, old: _State, lam: float) -> _State:
    if lam == 0:
        return new
    alpha = (1 - lam) * new.alpha + lam * old.alpha
    alpha /= alpha.sum(axis=2, keepdims=True)
    beta = (1 - lam) * new.beta + lam * old.beta
    gamma = alpha * beta
    gamma /= gamma.sum(axis=2, keepdims=True)
    return _State(alpha, beta, gamma, new.logz, new.coupling)


def mf_sweep(model: ModelSpec, tau: float, obs: ObservationSet, messages: MeanFieldPosterior,
             activity=None, backend: str | None = None) -> tuple[MeanFieldPosterior, float]:
    """One undamped Jacobi sweep starting from ``messages``."""
    p = _Problem(model, tau, obs, _init_from(messages, model), activity)
    old = _State(_pad([c.alpha for c in messages.chains], p), _pad([c.beta for c in messages.chains], p),
                 _pad([c.gamma for c in messages.chains], p))
    new, residual = _sweep(p, old, backend)
    post = _finish(p, new, messages.iterations + 1, residual < TOL, residual, [residual], backend)
    return post, residual


def _init_from(post: MeanFieldPosterior, model: ModelSpec):
    if post._problem is None:
        return None
    return [post._problem.init[m, : c.size] for m, c in enumerate(model.chains)]


def mf_infer(model: ModelSpec, tau: float, obs: ObservationSet, init=None, max_sweeps: int = MAX_SWEEPS,
             tol: float = TOL, damping: float = DAMPING, activity=None, start: MeanFieldPosterior | None = None,
             strict: bool = False, backend: str | None = None) -> MeanFieldPosterior:
    """Iterate sweeps until the largest change in any ``gamma`` entry is below ``tol``.

    ``init`` is a list of per-chain initial distributions (uniform when
    omitted).  ``activity`` optionally scales each event's rate per step,
    shape ``(T, V)``, which is how time-windowed models are expressed.
    With ``strict=True`` a :class:`NotConverged` carrying the best-so-far
    posterior is raised instead of returning it flagged.
    """
    if not 0 <= damping < 1:
        raise ValidationError("damping must lie in [0, 1)")
    p = _Problem(model, tau, obs, init, activity)
    if start is not None:
        state = _State(_pad([c.alpha for c in start.chains], p), _pad([c.beta for c in start.chains], p),
                       _pad([c.gamma for c in start.chains], p))
    else:
        state = _initial_state(p, backend)
    trace = []
    converged = False
    residual = np.inf
    best = None
    it = 0
    for it in range(1, max_sweeps + 1):
        new, residual = _sweep(p, state, backend)
        trace.append(residual)
        best = new
        if residual < tol:
            converged = True
            break
        state = _damp(new, state, damping)
    if best is None:
        raise ValidationError("max_sweeps must be at least 1")
    post = _finish(p, best, it, converged, residual, trace, backend)
    if not converged:
        log.warning("mean-field inference stopped after %d sweeps, residual %.3g", it, residual)
        if strict:
            raise NotConverged(f"no convergence after {it} sweeps (residual {residual:.3g})", post)
    return post


def _finish(p: _Problem, st: _State, iterations, converged, residual, trace, backend) -> MeanFieldPosterior:
    chains = []
    for m, c in enumerate(p.model.chains):
        S = c.size
        chains.append(ChainMessages(m, st.alpha[m, :, :S].copy(), st.beta[m, :, :S].copy(), st.gamma[m, :, :S].copy()))
    cf_final = _messages_couplings(p, st.alpha, st.beta, backend)
    ev = _event_marginals(p, cf_final)
    evidence = _bethe_from(p, cf_final)
    post = MeanFieldPosterior(chains, ev, evidence, iterations, converged, residual, st.coupling, trace,
                              st.logz, p)
    return post


def _event_marginals(p: _Problem, cf: CouplingFactors) -> np.ndarray:
    ev = np.empty((p.T, p.model.V + 1))
    ev[:, :-1] = p.w * cf.prod_tilde.T
    ev[:, -1] = 1.0 - np.einsum("tv,vt->t", p.w, cf.prod_hat)
    return ev / cf.z[:, None]


def _bethe_from(p: _Problem, cf: CouplingFactors) -> float:
    z0 = (p.init * p.lik[:, 0]).sum(axis=1)
    if np.any(z0 <= 0) or np.any(cf.z <= 0):
        return -np.inf
    return float(np.log(z0).sum() + np.log(np.maximum(cf.stay, D_FLOOR)).sum() + np.log(cf.z).sum())


def bethe_evidence(model: ModelSpec, tau: float, obs: ObservationSet, messages, init=None,
                   activity=None, backend: str | None = None) -> float:
    """Dual (Bethe) log-evidence from per-chain messages.

    ``messages`` is a :class:`MeanFieldPosterior` or a pair of lists
    ``(alpha, beta)``.  The joint two-slice sum of each step factorizes as
    the product of the chains' stay-put masses times the ratio normalizer
    ``z``; the joint space is never built.
    """
    if isinstance(messages, MeanFieldPosterior):
        alpha = [c.alpha for c in messages.chains]
        beta = [c.beta for c in messages.chains]
        if init is None and messages._problem is not None:
            init = [messages._problem.init[m, : c.size] for m, c in enumerate(model.chains)]
    else:
        alpha, beta = messages
    p = _Problem(model, tau, obs, init, activity)
    cf = _messages_couplings(p, _pad(alpha, p), _pad(beta, p), backend)
    return _bethe_from(p, cf)
