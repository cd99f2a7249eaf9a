"""Compiled numerical core.

Everything here is scalar-loop code for numba: the regularized incomplete
beta (modified Lentz continued fraction), the truncated-beta cdf, a Brent
root finder for quantiles and a 2-d Nelder-Mead on the log-likelihood.
The public wrappers live in ``dist`` and ``estimate``; nothing in this
module validates its inputs.
"""
import math

import numba as nb
import numpy as np

CF_EPS = 1e-16
CF_FPMIN = 1e-300
CF_MAXIT = 20000

BRENT_XTOL = 1e-12
BRENT_RTOL = 4.0 * np.finfo(float).eps
BRENT_MAXITER = 200

# log-shape box for the simplex search; an optimum pinned to the box is
# reported as a failed fit
LOG_SHAPE_LO = math.log(1e-4)
LOG_SHAPE_HI = math.log(1e5)
BOX_MARGIN = 1e-3

NM_TOL = 1e-8
NM_MAXITER = 5000
NM_STEP = 0.25


@nb.njit(cache=True)
def lbeta(t1, t2):
    return math.lgamma(t1) + math.lgamma(t2) - math.lgamma(t1 + t2)


@nb.njit(cache=True)
def _betacf(t1, t2, x):
    qab = t1 + t2
    qap = t1 + 1.0
    qam = t1 - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < CF_FPMIN:
        d = CF_FPMIN
    d = 1.0 / d
    h = d
    for m in range(1, CF_MAXIT + 1):
        m2 = 2.0 * m
        aa = m * (t2 - m) * x / ((qam + m2) * (t1 + m2))
        d = 1.0 + aa * d
        if abs(d) < CF_FPMIN:
            d = CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < CF_FPMIN:
            c = CF_FPMIN
        d = 1.0 / d
        h *= d * c
        aa = -(t1 + m) * (qab + m) * x / ((t1 + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < CF_FPMIN:
            d = CF_FPMIN
        c = 1.0 + aa / c
        if abs(c) < CF_FPMIN:
            c = CF_FPMIN
        d = 1.0 / d
        de = d * c
        h *= de
        if abs(de - 1.0) < CF_EPS:
            return h
    return np.nan


@nb.njit(cache=True)
def betainc_pair(x, t1, t2, lb):
    """Regularized lower and upper incomplete beta ``(P, Q)`` at ``x``.

    ``lb`` is ``log B(t1, t2)``. Whichever tail is small is computed
    directly so both members keep relative precision there.
    """
    if x <= 0.0:
        return 0.0, 1.0
    if x >= 1.0:
        return 1.0, 0.0
    lfront = t1 * math.log(x) + t2 * math.log1p(-x) - lb
    if x < (t1 + 1.0) / (t1 + t2 + 2.0):
        p = math.exp(lfront) * _betacf(t1, t2, x) / t1
        return p, 1.0 - p
    q = math.exp(lfront) * _betacf(t2, t1, 1.0 - x) / t2
    return 1.0 - q, q


@nb.njit(cache=True)
def support_mass(t1, t2, a, b, lb):
    """Regularized mass of ``[a, b]`` plus the bookkeeping the cdf needs.

    Returns ``(diff, upper, pa, qa)``: with ``upper`` true the mass is
    formed from upper tails (``Q(a) - Q(b)``), which avoids cancellation
    when the support sits in the right tail of the parent beta.
    """
    pa, qa = betainc_pair(a, t1, t2, lb)
    pb, qb = betainc_pair(b, t1, t2, lb)
    if pb > 0.5:
        return qa - qb, True, pa, qa
    return pb - pa, False, pa, qa


@nb.njit(cache=True)
def log_mass(t1, t2, a, b):
    """``log(I_b - I_a)`` for the unnormalized incomplete beta."""
    lb = lbeta(t1, t2)
    diff, upper, pa, qa = support_mass(t1, t2, a, b, lb)
    if not diff > 0.0:
        return -np.inf
    return lb + math.log(diff)


@nb.njit(cache=True)
def _cdf_core(x, t1, t2, a, b, lb, diff, upper, pa, qa):
    if x <= a:
        return 0.0
    if x >= b:
        return 1.0
    px, qx = betainc_pair(x, t1, t2, lb)
    if upper:
        num = qa - qx
    else:
        num = px - pa
    v = num / diff
    if v < 0.0:
        return 0.0
    if v > 1.0:
        return 1.0
    return v


@nb.njit(cache=True)
def cdf_many(x, t1, t2, a, b):
    lb = lbeta(t1, t2)
    diff, upper, pa, qa = support_mass(t1, t2, a, b, lb)
    out = np.empty(x.shape[0])
    for i in range(x.shape[0]):
        out[i] = _cdf_core(x[i], t1, t2, a, b, lb, diff, upper, pa, qa)
    return out


@nb.njit(cache=True)
def _quantile_core(p, t1, t2, a, b, lb, diff, upper, pa, qa):
    # Brent's method (the scipy brentq variant) on cdf(x) - p over [a, b]
    xpre = a
    xcur = b
    fpre = -p
    fcur = 1.0 - p
    xblk = 0.0
    fblk = 0.0
    spre = 0.0
    scur = 0.0
    for _ in range(BRENT_MAXITER):
        if fpre * fcur < 0.0:
            xblk = xpre
            fblk = fpre
            spre = xcur - xpre
            scur = spre
        if abs(fblk) < abs(fcur):
            xpre = xcur
            xcur = xblk
            xblk = xpre
            fpre = fcur
            fcur = fblk
            fblk = fpre
        # x-tolerance relative to the root, so roots near 0 keep full precision
        delta = (BRENT_XTOL * max(abs(xcur), 1e-300) + BRENT_RTOL * abs(xcur)) / 2.0
        sbis = (xblk - xcur) / 2.0
        if fcur == 0.0 or abs(sbis) < delta:
            return xcur
        if abs(spre) > delta and abs(fcur) < abs(fpre):
            if xpre == xblk:
                stry = -fcur * (xcur - xpre) / (fcur - fpre)
            else:
                dpre = (fpre - fcur) / (xpre - xcur)
                dblk = (fblk - fcur) / (xblk - xcur)
                stry = -fcur * (fblk * dblk - fpre * dpre) / (dblk * dpre * (fblk - fpre))
            if 2.0 * abs(stry) < min(abs(spre), 3.0 * abs(sbis) - delta):
                spre = scur
                scur = stry
            else:
                spre = sbis
                scur = sbis
        else:
            spre = sbis
            scur = sbis
        xpre = xcur
        fpre = fcur
        if abs(scur) > delta:
            xcur += scur
        elif sbis > 0.0:
            xcur += delta
        else:
            xcur -= delta
        fcur = _cdf_core(xcur, t1, t2, a, b, lb, diff, upper, pa, qa) - p
    return np.nan


@nb.njit(cache=True)
def quantile_many(p, t1, t2, a, b):
    lb = lbeta(t1, t2)
    diff, upper, pa, qa = support_mass(t1, t2, a, b, lb)
    out = np.empty(p.shape[0])
    for i in range(p.shape[0]):
        out[i] = _quantile_core(p[i], t1, t2, a, b, lb, diff, upper, pa, qa)
    return out


@nb.njit(cache=True)
def neg_loglik(l1, l2, s1, s2, m, a, b):
    """Negative log-likelihood in log-shape coordinates.

    Uses the sufficient statistics ``s1 = sum(log x)`` and
    ``s2 = sum(log(1 - x))`` over ``m`` observations.
    """
    if l1 < LOG_SHAPE_LO or l1 > LOG_SHAPE_HI or l2 < LOG_SHAPE_LO or l2 > LOG_SHAPE_HI:
        return np.inf
    t1 = math.exp(l1)
    t2 = math.exp(l2)
    v = -((t1 - 1.0) * s1 + (t2 - 1.0) * s2 - m * log_mass(t1, t2, a, b))
    if math.isnan(v):
        return np.inf
    return v


@nb.njit(cache=True)
def nelder_mead(s1, s2, m, a, b, x0, y0, step, tol, maxiter):
    """Minimize ``neg_loglik`` from ``(x0, y0)``.

    Returns ``(l1, l2, fmin, converged, evaluations)``. Convergence means
    every vertex lies within ``tol`` (max-norm) of the best one.
    """
    xs = np.empty(3)
    ys = np.empty(3)
    fs = np.empty(3)
    xs[0] = x0
    ys[0] = y0
    xs[1] = x0 + step
    ys[1] = y0
    xs[2] = x0
    ys[2] = y0 + step
    for i in range(3):
        fs[i] = neg_loglik(xs[i], ys[i], s1, s2, m, a, b)
    nev = 3
    converged = False
    while nev < maxiter:
        # order vertices: 0 best, 2 worst
        for i in range(1, 3):
            j = i
            while j > 0 and fs[j] < fs[j - 1]:
                xs[j], xs[j - 1] = xs[j - 1], xs[j]
                ys[j], ys[j - 1] = ys[j - 1], ys[j]
                fs[j], fs[j - 1] = fs[j - 1], fs[j]
                j -= 1
        size = 0.0
        for i in range(1, 3):
            size = max(size, abs(xs[i] - xs[0]), abs(ys[i] - ys[0]))
        if size < tol:
            converged = True
            break
        cx = 0.5 * (xs[0] + xs[1])
        cy = 0.5 * (ys[0] + ys[1])
        xr = 2.0 * cx - xs[2]
        yr = 2.0 * cy - ys[2]
        fr = neg_loglik(xr, yr, s1, s2, m, a, b)
        nev += 1
        if fr < fs[0]:
            xe = 3.0 * cx - 2.0 * xs[2]
            ye = 3.0 * cy - 2.0 * ys[2]
            fe = neg_loglik(xe, ye, s1, s2, m, a, b)
            nev += 1
            if fe < fr:
                xs[2], ys[2], fs[2] = xe, ye, fe
            else:
                xs[2], ys[2], fs[2] = xr, yr, fr
            continue
        if fr < fs[1]:
            xs[2], ys[2], fs[2] = xr, yr, fr
            continue
        if fr < fs[2]:
            xc = cx + 0.5 * (xr - cx)
            yc = cy + 0.5 * (yr - cy)
            fc = neg_loglik(xc, yc, s1, s2, m, a, b)
            nev += 1
            if fc <= fr:
                xs[2], ys[2], fs[2] = xc, yc, fc
                continue
        else:
            xc = cx + 0.5 * (xs[2] - cx)
            yc = cy + 0.5 * (ys[2] - cy)
            fc = neg_loglik(xc, yc, s1, s2, m, a, b)
            nev += 1
            if fc < fs[2]:
                xs[2], ys[2], fs[2] = xc, yc, fc
                continue
        for i in range(1, 3):
            xs[i] = xs[0] + 0.5 * (xs[i] - xs[0])
            ys[i] = ys[0] + 0.5 * (ys[i] - ys[0])
            fs[i] = neg_loglik(xs[i], ys[i], s1, s2, m, a, b)
        nev += 2
    best = 0
    for i in range(1, 3):
        if fs[i] < fs[best]:
            best = i
    return xs[best], ys[best], fs[best], converged, nev


@nb.njit(cache=True)
def _pinned(l):
    return l < LOG_SHAPE_LO + BOX_MARGIN or l > LOG_SHAPE_HI - BOX_MARGIN


@nb.njit(cache=True)
def fit_batch(s1, s2, m, a, b, init1, init2, ps):
    """Fit every row's sufficient statistics and evaluate percentiles.

    Rows that fail (no convergence, optimum on the search box, failed
    root finding) come back with ``ok = False`` and NaN percentiles.
    """
    nrow = s1.shape[0]
    npct = ps.shape[0]
    th1 = np.empty(nrow)
    th2 = np.empty(nrow)
    ll = np.empty(nrow)
    ok = np.zeros(nrow, dtype=np.bool_)
    nev = np.empty(nrow, dtype=np.int64)
    xi = np.full((nrow, npct), np.nan)
    for i in range(nrow):
        l1, l2, f, conv, ne = nelder_mead(
            s1[i], s2[i], m, a, b, math.log(init1[i]), math.log(init2[i]),
            NM_STEP, NM_TOL, NM_MAXITER,
        )
        t1 = math.exp(l1)
        t2 = math.exp(l2)
        th1[i] = t1
        th2[i] = t2
        ll[i] = -f
        nev[i] = ne
        if not conv or _pinned(l1) or _pinned(l2) or not math.isfinite(f):
            continue
        lb = lbeta(t1, t2)
        diff, upper, pa, qa = support_mass(t1, t2, a, b, lb)
        good = True
        for j in range(npct):
            q = _quantile_core(ps[j], t1, t2, a, b, lb, diff, upper, pa, qa)
            if math.isnan(q):
                good = False
            xi[i, j] = q
        ok[i] = good
    return th1, th2, ll, ok, nev, xi


@nb.njit(cache=True)
def ks_many(xsorted, t1, t2, a, b):
    """Two-sided K-S distance of each sorted row against its own model."""
    nrow, n = xsorted.shape
    out = np.empty(nrow)
    for i in range(nrow):
        if math.isnan(t1[i]):
            out[i] = np.nan
            continue
        lb = lbeta(t1[i], t2[i])
        diff, upper, pa, qa = support_mass(t1[i], t2[i], a, b, lb)
        d = 0.0
        for j in range(n):
            f = _cdf_core(xsorted[i, j], t1[i], t2[i], a, b, lb, diff, upper, pa, qa)
            d = max(d, (j + 1.0) / n - f, f - j / n)
        out[i] = d
    return out
