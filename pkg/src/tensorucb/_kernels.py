"""Numba kernels for the two hot loops: the per-sample factor sweep and
breadth-first reachability over sampled live-edge worlds."""
from __future__ import annotations

import numpy as np
from numba import njit

OK = 0
NON_FINITE = 1
NOT_POSITIVE_DEFINITE = 2


@njit(cache=True)
def _dot(a, b, n):
    s = 0.0
    for i in range(n):
        s += a[i] * b[i]
    return s


@njit(cache=True)
def _restore(means, covs, accs, logdet, undo_cov, undo_vec, undo_logdet, cov_saved, dims, upto):
    D, R = logdet.shape
    for k in range(upto):
        l, r = k // R, k % R
        d = dims[l]
        for i in range(d):
            means[l, r, i] = undo_vec[l, r, 0, i]
            accs[l, r, i] = undo_vec[l, r, 1, i]
        if cov_saved[k]:
            for i in range(d):
                for j in range(d):
                    covs[l, r, i, j] = undo_cov[l, r, i, j]
        logdet[l, r] = undo_logdet[l, r]


@njit(cache=True)
def absorb_sweep(means, covs, accs, logdet, kappa_sq, dims, phis, y, sigma2, undo_cov, undo_vec, undo_logdet):
    """One accumulation pass over all (l, r) factors, l outer, r inner.

    Arrays are modified in place.  Each factor is saved to the undo buffers
    before it changes, so on a non-OK status every factor is back at its
    value on entry.  ``kappa_sq[l, r]`` receives the quadratic form
    (beta phi)' Sigma (beta phi) evaluated before each factor's update.
    """
    D, R, dmax = means.shape
    if not np.isfinite(y):
        return NON_FINITE
    for l in range(D):
        for i in range(dims[l]):
            if not np.isfinite(phis[l, i]):
                return NON_FINITE
    proj = np.empty((D, R))
    for l in range(D):
        for r in range(R):
            proj[l, r] = _dot(phis[l], means[l, r], dims[l])
    s = np.empty(dmax)
    cov_saved = np.zeros(D * R, dtype=np.bool_)
    for l in range(D):
        for r in range(R):
            status = _update_factor(
                means, covs, accs, logdet, kappa_sq, proj, phis, dims[l], l, r, y, sigma2, s,
                undo_cov, undo_vec, undo_logdet, cov_saved,
            )
            if status != OK:
                _restore(means, covs, accs, logdet, undo_cov, undo_vec, undo_logdet, cov_saved, dims, l * R + r + 1)
                return status
    return OK


@njit(cache=True, inline="always")
def _update_factor(means, covs, accs, logdet, kappa_sq, proj, phis, d, l, r, y, sigma2, s,
                   undo_cov, undo_vec, undo_logdet, cov_saved):
    D, R = proj.shape
    beta = 1.0
    for l2 in range(D):
        if l2 != l:
            beta *= proj[l2, r]
    y_lr = y
    for r2 in range(R):
        if r2 != r:
            other = proj[l, r2]
            for l2 in range(D):
                if l2 != l:
                    other *= proj[l2, r2]
            y_lr -= other
    if not np.isfinite(beta) or not np.isfinite(y_lr):
        return NON_FINITE
    phi = phis[l]
    cov = covs[l, r]
    mean = means[l, r]
    b = accs[l, r]
    for i in range(d):
        undo_vec[l, r, 0, i] = mean[i]
        undo_vec[l, r, 1, i] = b[i]
    undo_logdet[l, r] = logdet[l, r]
    if beta == 0.0:
        kappa_sq[l, r] = 0.0
        return OK
    # s = Sigma v with v = beta * phi; the rows are backed up on the way
    ucov = undo_cov[l, r]
    q = 0.0
    for i in range(d):
        acc = 0.0
        for j in range(d):
            c = cov[i, j]
            ucov[i, j] = c
            acc += c * phi[j]
        s[i] = beta * acc
        q += beta * phi[i] * s[i]
    cov_saved[l * R + r] = True
    denom = sigma2 + q
    if not np.isfinite(denom):
        return NON_FINITE
    if denom <= 0.0 or q < 0.0:
        return NOT_POSITIVE_DEFINITE
    kappa_sq[l, r] = q
    w = beta * y_lr
    for i in range(d):
        b[i] += phi[i] * w
    # Sherman-Morrison downdate row by row; s_i s_j is symmetric in (i, j),
    # so the covariance stays exactly symmetric.  Each finished row gives
    # one entry of the new mean Sigma b / sigma2.
    inv = 1.0 / denom
    for i in range(d):
        si = s[i]
        acc = 0.0
        for j in range(d):
            c = cov[i, j] - (si * s[j]) * inv
            cov[i, j] = c
            acc += c * b[j]
        if not cov[i, i] > 0.0:
            return NOT_POSITIVE_DEFINITE
        mean[i] = acc / sigma2
        if not np.isfinite(mean[i]):
            return NON_FINITE
    logdet[l, r] += np.log1p(q / sigma2)
    proj[l, r] = _dot(phi, mean, d)
    return OK


@njit(cache=True)
def spread_counts(indptr, dst, eid, live, seeds):
    """Number of nodes reachable from ``seeds`` in each live-edge world."""
    n_worlds = live.shape[0]
    n = indptr.shape[0] - 1
    counts = np.zeros(n_worlds, dtype=np.int64)
    stamp = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    for w in range(n_worlds):
        tag = w + 1
        top = 0
        c = 0
        for k in range(seeds.shape[0]):
            v = seeds[k]
            if stamp[v] != tag:
                stamp[v] = tag
                stack[top] = v
                top += 1
                c += 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(indptr[u], indptr[u + 1]):
                if live[w, eid[k]]:
                    t = dst[k]
                    if stamp[t] != tag:
                        stamp[t] = tag
                        stack[top] = t
                        top += 1
                        c += 1
        counts[w] = c
    return counts


@njit(cache=True)
def marginal_gain(indptr, dst, eid, live, covered, v):
    """Total (over worlds) number of uncovered nodes newly reached from ``v``.

    Nodes already covered are not entered: everything reachable through them
    is covered as well.
    """
    n_worlds = live.shape[0]
    n = indptr.shape[0] - 1
    stamp = np.zeros(n, dtype=np.int64)
    stack = np.empty(n, dtype=np.int64)
    total = 0
    for w in range(n_worlds):
        if covered[w, v]:
            continue
        tag = w + 1
        stamp[v] = tag
        stack[0] = v
        top = 1
        total += 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(indptr[u], indptr[u + 1]):
                if live[w, eid[k]]:
                    t = dst[k]
                    if stamp[t] != tag and not covered[w, t]:
                        stamp[t] = tag
                        stack[top] = t
                        top += 1
                        total += 1
    return total


@njit(cache=True)
def cover_from(indptr, dst, eid, live, covered, v):
    """Mark every node reachable from ``v`` as covered, world by world."""
    n_worlds = live.shape[0]
    n = indptr.shape[0] - 1
    stack = np.empty(n, dtype=np.int64)
    for w in range(n_worlds):
        if covered[w, v]:
            continue
        covered[w, v] = True
        stack[0] = v
        top = 1
        while top > 0:
            top -= 1
            u = stack[top]
            for k in range(indptr[u], indptr[u + 1]):
                if live[w, eid[k]]:
                    t = dst[k]
                    if not covered[w, t]:
                        covered[w, t] = True
                        stack[top] = t
                        top += 1
