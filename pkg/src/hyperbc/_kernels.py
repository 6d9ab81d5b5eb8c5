"""Numba kernels for the density engine's inner loops.

The three-agent collision term is evaluated in a conservative deposit form.
Every on-grid triple (x_i, x_{i+u}, x_{i+v}) whose discordance lies in
(0, c) carries flux = gw_i * gw_{i+u} * gw_{i+v} (trapezoid-weighted node
values); the anchor node loses 3 h^2 flux of density and the same amount is
deposited at the triple's mean opinion x_i + (u+v) h / 3.  With the pair set
closed under re-anchoring, summing over anchors makes the deposit/removal
bookkeeping per unordered triple identical to the rate equation's
"+3 at the mean, -1 at each member".  The mean is always a multiple of h/3;
when it falls between nodes it is split linearly (weights 2/3 and 1/3) onto
the bracketing pair.  That split conserves discrete mass and first moment to
rounding error, and the second moment is nonincreasing triple by triple: the
deposit's spread penalty 3*theta*(1-theta)*h^2 <= (2/3) h^2 never exceeds
the triple's own square deviation sum, with equality exactly for
adjacent-node pairs.  Those pairs are therefore inert, so a two-node cluster
is a genuine fixed point, matching the stopping criterion.

Layouts: interacting displacement pairs (u, v) are regrouped by t = u + v,
which fixes the deposit target i + t/3.  For p >= 1 each t-row is one
contiguous u-interval (the discordance condition
|t|^p + |3u - t|^p + |2t - 3u|^p < const is convex in u along the row), and
the row sum over u of gw_{i+u} * gw_{i+t-u} is a segment of the
anti-diagonal (i+u) + (i+t-u) = 2i + t of the outer product gw (x) gw, read
from running sums precomputed by diag_prefix_kernel.  For p < 1 the rows can
split into two runs, and a folded CSR pair list is used instead.
"""

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def diag_prefix_kernel(gw):
    """Running sums along every anti-diagonal of gw (x) gw.

    Diagonal s holds the products gw[a] * gw[s - a] for
    a in [max(0, s - n + 1), min(n - 1, s)].  Returns (doff, q) with
    q[doff[s] + (a - a_lo)] = sum of the diagonal's products up to a.
    """
    n = gw.size
    nd = 2 * n - 1
    doff = np.empty(nd + 1, dtype=np.int64)
    for s in range(nd):
        alo = s - (n - 1)
        if alo < 0:
            alo = 0
        ahi = s
        if ahi > n - 1:
            ahi = n - 1
        doff[s] = ahi - alo + 1
    total = 0
    for s in range(nd):
        c = doff[s]
        doff[s] = total
        total += c
    doff[nd] = total
    q = np.empty(total)
    for ss in prange(nd):
        s = np.int64(ss)  # prange indices lower as unsigned; keep arithmetic signed
        alo = s - (n - 1)
        if alo < 0:
            alo = 0
        ahi = s
        if ahi > n - 1:
            ahi = n - 1
        base = doff[s]
        acc = 0.0
        for a in range(alo, ahi + 1):
            acc += gw[a] * gw[s - a]
            q[base + (a - alo)] = acc
    return doff, q


@njit(cache=True, parallel=True)
def triadic_deposit_interval_kernel(values, gw, w, doff, q, tvals, tulo, tuhi, coef):
    """Three-agent RHS via per-t u-intervals and anti-diagonal prefix sums.

    Pass 1 accumulates, for every anchor i and every t-row, the row flux
    R[t, i] = gw_i * sum_u gw_{i+u} gw_{i+t-u}; pass 2 gathers the deposits
    (t fixes the target offset and the 2/3 / 1/3 split) and subtracts the
    anchor losses.  coef = 3 h^2; output is a density rate, so the deposit
    into a node is divided by that node's trapezoid weight.
    """
    n = values.size
    nt = tvals.size
    R = np.zeros((nt, n))
    rowsum = np.zeros(n)
    for ii in prange(n):
        i = np.int64(ii)  # prange indices lower as unsigned; keep arithmetic signed
        gwi = gw[i]
        if gwi == 0.0:
            continue
        acc = 0.0
        for ti in range(nt):
            t = tvals[ti]
            ulo = tulo[ti]
            uhi = tuhi[ti]
            # clip so both partners i+u and i+v = i+t-u stay on the grid
            if ulo < -i:
                ulo = -i
            lim = (i + t) - (n - 1)
            if ulo < lim:
                ulo = lim
            if uhi > n - 1 - i:
                uhi = n - 1 - i
            if uhi > i + t:
                uhi = i + t
            if ulo > uhi:
                continue
            s = 2 * i + t
            alo = s - (n - 1)
            if alo < 0:
                alo = 0
            base = doff[s] - alo
            a1lo = i + ulo
            seg = q[base + i + uhi]
            if a1lo > alo:
                seg -= q[base + a1lo - 1]
            if t == 0 and ulo <= 0 and uhi >= 0:
                seg -= gwi * gwi  # zero-deviation triple is excluded
            if seg != 0.0:
                r = gwi * seg
                R[ti, i] = r
                acc += r
        rowsum[i] = acc
    out = np.empty(n)
    for aa in prange(n):
        a = np.int64(aa)
        acc = -rowsum[a]
        for ti in range(nt):
            t = tvals[ti]
            k = t // 3
            r3 = t - 3 * k
            i0 = a - k  # anchor whose deposit floor lands on a
            if r3 == 0:
                if 0 <= i0 < n:
                    acc += R[ti, i0]
            else:
                if 0 <= i0 < n:
                    acc += ((3.0 - r3) / 3.0) * R[ti, i0]
                i1 = i0 - 1
                if 0 <= i1 < n:
                    acc += (r3 / 3.0) * R[ti, i1]
        out[a] = coef * acc / w[a]
    return out


@njit(cache=True)
def triadic_deposit_csr_kernel(values, gw, w, lu, lptr, lv, lmult, coef):
    """Three-agent RHS from a folded (u <= v, multiplicity) pair list.

    Fallback for p < 1 where the per-t rows are not single intervals.
    Same deposit bookkeeping as the interval kernel.
    """
    n = values.size
    gain = np.zeros(n)
    loss = np.zeros(n)
    for ri in range(lu.size):
        u = lu[ri]
        for idx in range(lptr[ri], lptr[ri + 1]):
            v = lv[idx]
            mult = lmult[idx]
            t = u + v
            k = t // 3
            r3 = t - 3 * k
            w1 = r3 / 3.0
            w0 = 1.0 - w1
            ilo = 0
            if -u > ilo:
                ilo = -u
            if -v > ilo:
                ilo = -v
            mx = 0
            if u > mx:
                mx = u
            if v > mx:
                mx = v
            for i in range(ilo, n - mx):
                f = mult * gw[i] * gw[i + u] * gw[i + v]
                if f != 0.0:
                    loss[i] += f
                    q0 = i + k  # deposit target floor; always on the grid
                    if r3 == 0:
                        gain[q0] += f
                    else:
                        gain[q0] += w0 * f
                        gain[q0 + 1] += w1 * f
    out = np.empty(n)
    for a in range(n):
        out[a] = coef * (gain[a] - loss[a]) / w[a]
    return out


@njit(cache=True)
def triple_weighted_sum_kernel(gw, lu, lptr, lv, lweight):
    """sum over the pair list of lweight * sum_i gw_i gw_{i+u} gw_{i+v}."""
    n = gw.size
    total = 0.0
    for ri in range(lu.size):
        u = lu[ri]
        for idx in range(lptr[ri], lptr[ri + 1]):
            v = lv[idx]
            ilo = 0
            if -u > ilo:
                ilo = -u
            if -v > ilo:
                ilo = -v
            mx = 0
            if u > mx:
                mx = u
            if v > mx:
                mx = v
            acc = 0.0
            for i in range(ilo, n - mx):
                acc += gw[i] * gw[i + u] * gw[i + v]
            total += lweight[idx] * acc
    return total
