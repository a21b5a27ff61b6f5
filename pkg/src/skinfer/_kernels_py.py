"""Pure numpy implementations of the inner loops.

Shapes: ``M`` chains, ``T`` steps (``T+1`` time points), ``S`` padded
states per chain, ``I`` (event, chain) incidences.  The compiled module
``_ckernels`` exposes the same functions with identical semantics.
"""

import numpy as np

_CHUNK = 256


def coupling_sums(alpha, beta, lik, inc_chain, inc_g, inc_shift):
    """Stay mass ``D[m, t]`` and per-incidence sums ``N[i, t]``, ``H[i, t]``.

    With ``a = alpha[m, t-1]`` and ``b = lik[m, t] * beta[m, t]``:
    ``D = sum_s a[s] b[s]``, ``H = sum_s a[s] g[s] b[s]`` and
    ``N = sum_s a[s] g[s] b[shift[s]]``.  Column ``t-1`` holds step ``t``.
    """
    wprev = alpha[:, :-1, :]
    wnext = lik[:, 1:, :] * beta[:, 1:, :]
    D = np.einsum("mts,mts->mt", wprev, wnext)
    n_inc = len(inc_chain)
    T = alpha.shape[1] - 1
    N = np.empty((n_inc, T))
    H = np.empty((n_inc, T))
    for lo in range(0, n_inc, _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        ch = inc_chain[sl]
        ap = wprev[ch] * inc_g[sl][:, None, :]
        wn = wnext[ch]
        H[sl] = np.einsum("cts,cts->ct", ap, wn)
        sh = np.broadcast_to(np.clip(inc_shift[sl], 0, None)[:, None, :], ap.shape)
        N[sl] = np.einsum("cts,cts->ct", ap, np.take_along_axis(wn, sh, axis=2))
    return N, H, D


def forward_backward(K, lik, init):
    """Scaled forward-backward for a batch of chains with per-step kernels.

    ``K[m, t-1, s, s']`` is the (unnormalized) weight of ``s -> s'`` at step
    ``t``.  Returns ``alpha``, ``beta`` and ``logz`` where
    ``logz[m, t] = log`` of the forward normalizer (``-inf`` if it vanished).
    """
    M, T1, S = lik.shape
    alpha = np.zeros((M, T1, S))
    beta = np.zeros((M, T1, S))
    z = np.empty((M, T1))
    a = init * lik[:, 0]
    z[:, 0] = a.sum(axis=1)
    alpha[:, 0] = a / np.where(z[:, 0] > 0, z[:, 0], 1.0)[:, None]
    for t in range(1, T1):
        a = np.einsum("ms,mst->mt", alpha[:, t - 1], K[:, t - 1]) * lik[:, t]
        z[:, t] = a.sum(axis=1)
        alpha[:, t] = a / np.where(z[:, t] > 0, z[:, t], 1.0)[:, None]
    beta[:, T1 - 1] = 1.0
    for t in range(T1 - 1, 0, -1):
        b = np.einsum("mst,mt->ms", K[:, t - 1], lik[:, t] * beta[:, t])
        beta[:, t - 1] = b / np.where(z[:, t] > 0, z[:, t], 1.0)[:, None]
    with np.errstate(divide="ignore"):
        logz = np.log(z)
    return alpha, beta, logz


def couplings(N, H, D, inc_chain, event_inc, floor):
    """Ratios ``N/D`` and ``H/D`` per incidence and their products over each event.

    Returns ``g_tilde``, ``g_hat`` (I, T), per-event products ``prod_tilde``,
    ``prod_hat`` (V, T) and leave-one-out products ``loo_tilde``,
    ``loo_hat`` (I, T) over the event's other incidences.  ``D`` is
    floored at ``floor``.
    """
    dz = np.maximum(D, floor)
    T = D.shape[1]
    gt = N / dz[inc_chain] if len(inc_chain) else np.zeros((0, T))
    gh = H / dz[inc_chain] if len(inc_chain) else np.zeros((0, T))
    pt, lt = _leave_one_out(event_inc, gt, T)
    ph, lh = _leave_one_out(event_inc, gh, T)
    return gt, gh, pt, ph, lt, lh


def _leave_one_out(slots, g, T):
    pad = np.vstack([g, np.ones((1, T))])  # slot -1 picks the ones row
    V, K = slots.shape
    prod = np.ones((V, T))
    for k in range(K):
        prod *= pad[slots[:, k]]
    loo = np.ones_like(g)
    for k in range(K):
        others = np.ones((V, T))
        for j in range(K):
            if j != k:
                others *= pad[slots[:, j]]
        have = slots[:, k] >= 0
        loo[slots[have, k]] = others[have]
    return prod, loo


def assemble_kernels(wT, prod_tilde, prod_hat, loo_tilde, loo_hat, inc_event, inc_chain, inc_g, inc_shift, valid):
    """Per-chain transition weights ``K[m, t-1, s, s']`` from the couplings.

    ``wT[v, t-1]`` is the step weight ``c_v tau`` of event ``v``.  For chain
    ``m`` the null weight of state ``s`` is ``1 - sum_v w prod_hat`` over the
    events that ignore ``m`` minus ``sum_i w g_i[s] loo_hat_i`` over its
    incidences, clamped at zero.  Events that ignore ``m`` also add
    ``w prod_tilde`` to the diagonal; incidence ``i`` adds
    ``w g_i[s] loo_tilde_i`` at ``(s, shift_i[s])``.  Returns ``K`` and the
    most negative null weight with its ``(m, s, t)`` location.
    """
    valid = np.asarray(valid, dtype=bool)
    M, S = valid.shape
    T = wT.shape[1]
    qt = np.einsum("vt,vt->t", wT, prod_tilde)
    qh = np.einsum("vt,vt->t", wT, prod_hat)
    qt_m = np.zeros((M, T))
    qh_m = np.zeros((M, T))
    wi = wT[inc_event]
    if len(inc_chain):
        np.add.at(qt_m, inc_chain, wi * prod_tilde[inc_event])
        np.add.at(qh_m, inc_chain, wi * prod_hat[inc_event])
    move_w = wi * loo_tilde
    stay_w = wi * loo_hat
    null = np.repeat((1.0 - (qh[None, :] - qh_m))[:, None, :], S, axis=1)  # (M, S, T)
    flat = np.zeros((M, S * S, T))
    rows = np.arange(S)
    for lo in range(0, len(inc_chain), _CHUNK):
        sl = slice(lo, lo + _CHUNK)
        g = inc_g[sl]
        np.add.at(null, inc_chain[sl], -(g[:, :, None] * stay_w[sl][:, None, :]))
        target = rows[None, :] * S + np.clip(inc_shift[sl], 0, None)
        np.add.at(flat, (inc_chain[sl][:, None], target), g[:, :, None] * move_w[sl][:, None, :])
    null = np.where(valid[:, :, None], null, 0.0)
    loc = np.unravel_index(np.argmin(null), null.shape) if null.size else (0, 0, 0)
    worst = float(null[loc]) if null.size else 0.0
    diag = rows * S + rows
    flat[:, diag, :] += np.maximum(null, 0.0) + np.where(valid, 1.0, 0.0)[:, :, None] * (qt[None, :] - qt_m)[:, None, :]
    K = flat.reshape(M, S, S, T).transpose(0, 3, 1, 2)
    K = np.where(valid[:, None, :, None] & valid[:, None, None, :], K, 0.0)
    return np.ascontiguousarray(K), worst, tuple(int(x) for x in loc)
