"""Compiled per-zone scoring loops.

Zones are visited as nearest-neighbour prefixes (center ascending, size
ascending), matching the emission order of ``ZoneFamily``; running sums are
extended one region at a time. Output arrays are indexed by zone position.
"""

import math

import numba as nb
import numpy as np


@nb.njit(cache=True, nogil=True, inline="always")
def _xlogr(x, n):
    if x <= 0.0:
        return 0.0
    return x * math.log(x / n)


@nb.njit(cache=True, nogil=True, inline="always")
def _log_ratio(x_in, n_in, x_out, n_out):
    if n_in <= 0.0 or n_out <= 0.0:
        return 0.0
    if x_in * n_out <= x_out * n_in:
        return 0.0
    x_tot = x_in + x_out
    val = _xlogr(x_in, n_in) + _xlogr(x_out, n_out) - _xlogr(x_tot, n_in + n_out)
    return val if val > 0.0 else 0.0


@nb.njit(cache=True, nogil=True)
def scan_fixed(order, keep, max_size, x, n, out):
    """Log likelihood ratio of every zone for fixed weights (Poisson / known zeros).

    ``x`` and ``n`` are already multiplied by ``1 - d``.
    """
    k = order.shape[0]
    x_tot = 0.0
    n_tot = 0.0
    for i in range(k):
        x_tot += x[i]
        n_tot += n[i]
    z = 0
    for c in range(k):
        x_in = 0.0
        n_in = 0.0
        for j in range(max_size[c]):
            r = order[c, j]
            x_in += x[r]
            n_in += n[r]
            if keep[c, j]:
                out[z] = _log_ratio(x_in, n_in, x_tot - x_in, n_tot - n_in)
                z += 1
    return z


@nb.njit(cache=True, nogil=True)
def _xlogy(x, y):
    if x <= 0.0:
        return 0.0
    return x * math.log(y)


@nb.njit(cache=True, nogil=True)
def scan_em(order, keep, max_size, x, n, zero_class, class_pop, class_total, p_init, tol,
            max_iter, null_loglik, use_null, out, out_iter, out_conv):
    """EM-fitted log likelihood ratio of every zone.

    Zero-count regions are grouped into classes of equal population
    (``zero_class[r]`` is the class of region ``r`` or -1 if ``x[r] > 0``);
    regions of one class on the same side of the zone share a posterior, so
    each EM iteration costs one update per occupied class and side.
    With ``use_null`` the denominator is the separately fitted null
    log-likelihood ``null_loglik`` instead of the per-zone posteriors.
    """
    k = order.shape[0]
    nc = class_pop.shape[0]
    x_tot = 0.0
    n_tot = 0.0
    for i in range(k):
        x_tot += x[i]
        n_tot += n[i]
    c_in = np.zeros(nc, dtype=np.int64)
    d_in = np.empty(nc)
    d_out = np.empty(nc)
    z = 0
    for c in range(k):
        c_in[:] = 0
        x_in = 0.0
        n_in_raw = 0.0
        for j in range(max_size[c]):
            r = order[c, j]
            if zero_class[r] >= 0:
                c_in[zero_class[r]] += 1
            x_in += x[r]
            n_in_raw += n[r]
            if not keep[c, j]:
                continue
            x_out = x_tot - x_in
            n_out_raw = n_tot - n_in_raw
            n_in = n_in_raw
            n_out = n_out_raw
            th_in = x_in / n_in if n_in > 0.0 else 0.0
            th_out = x_out / n_out if n_out > 0.0 else 0.0
            p = p_init
            for t in range(nc):
                d_in[t] = 0.0
                d_out[t] = 0.0
            converged = False
            it = 0
            while it < max_iter:
                it += 1
                s_d = 0.0
                s_in = 0.0
                s_out = 0.0
                change = 0.0
                for t in range(nc):
                    npop = class_pop[t]
                    m_in = c_in[t]
                    m_out = class_total[t] - m_in
                    if m_in > 0:
                        den = p + (1.0 - p) * math.exp(-npop * th_in)
                        d = p / den if den > 0.0 else 0.0
                        diff = abs(d - d_in[t])
                        if diff > change:
                            change = diff
                        d_in[t] = d
                        s_d += m_in * d
                        s_in += m_in * npop * d
                    if m_out > 0:
                        den = p + (1.0 - p) * math.exp(-npop * th_out)
                        d = p / den if den > 0.0 else 0.0
                        diff = abs(d - d_out[t])
                        if diff > change:
                            change = diff
                        d_out[t] = d
                        s_d += m_out * d
                        s_out += m_out * npop * d
                p = s_d / k
                n_in = n_in_raw - s_in
                n_out = n_out_raw - s_out
                th_in = x_in / n_in if n_in > 0.0 else 0.0
                th_out = x_out / n_out if n_out > 0.0 else 0.0
                if change < tol:
                    converged = True
                    break
            out_iter[z] = it
            out_conv[z] = converged
            if use_null:
                if n_in <= 0.0 or n_out <= 0.0 or x_in * n_out <= x_out * n_in:
                    out[z] = 0.0
                else:
                    s_d = p * k
                    ll = 0.0
                    if s_d > 0.0:
                        ll += s_d * math.log(p)
                    if k - s_d > 0.0:
                        ll += (k - s_d) * math.log(1.0 - p)
                    ll += -th_in * n_in + _xlogy(x_in, th_in)
                    ll += -th_out * n_out + _xlogy(x_out, th_out)
                    val = ll - null_loglik
                    out[z] = val if val > 0.0 else 0.0
            else:
                out[z] = _log_ratio(x_in, n_in, x_out, n_out)
            z += 1
    return z
