"""Compiled inner loop: dose construction, per-genotype likelihoods and a
Nelder-Mead minimiser. Everything here releases the GIL so sub-populations can
be evaluated from worker threads.

Parameter vectors handed back to Python are laid out as

    [nu, gamma, phi_1..phi_C, noise_mu, noise_rho, noise_omega]
"""

import math

import numpy as np
from numba import njit

from .pg import deviance_residual_scalar, pg1_logpmf_scalar


@njit(cache=True, nogil=True)
def stutter_dose(g, edge_ptr, edge_parent, edge_xi, depth):
    """Recursive stutter dose on the flat sequence axis for one genotype column."""
    n = len(g)
    s = np.zeros(n)
    nxt = np.zeros(n)
    for _ in range(depth):
        for a in range(n):
            acc = 0.0
            for e in range(edge_ptr[a], edge_ptr[a + 1]):
                b = edge_parent[e]
                acc += edge_xi[e] * (g[b] + s[b])
            nxt[a] = acc
        for a in range(n):
            s[a] = nxt[a]
    return s


@njit(cache=True, nogil=True)
def dose_matrix(p, n_markers, offsets, known_dose, edge_ptr, edge_parent, edge_xi, depth):
    """Columns: known contributors (precomputed dose), then the decoded unknowns."""
    n = known_dose.shape[0]
    n_known = known_dose.shape[1]
    n_unknown = len(p) // (2 * n_markers)
    d = np.zeros((n, n_known + n_unknown))
    for i in range(n):
        for c in range(n_known):
            d[i, c] = known_dose[i, c]
    g = np.zeros(n)
    for u in range(n_unknown):
        g[:] = 0.0
        for m in range(n_markers):
            j = 2 * (u * n_markers + m)
            g[offsets[m] + p[j]] += 1.0
            g[offsets[m] + p[j + 1]] += 1.0
        s = stutter_dose(g, edge_ptr, edge_parent, edge_xi, depth)
        for i in range(n):
            d[i, n_known + u] = g[i] + s[i]
    return d


@njit(cache=True, nogil=True)
def softmax_last_fixed(z):
    """Additive log-ratio inverse: C-1 free coordinates, last one pinned at 0."""
    c = len(z) + 1
    phi = np.empty(c)
    mx = 0.0
    for i in range(len(z)):
        if z[i] > mx:
            mx = z[i]
    tot = math.exp(-mx)
    for i in range(len(z)):
        phi[i] = math.exp(z[i] - mx)
        tot += phi[i]
    phi[c - 1] = math.exp(-mx)
    for i in range(c):
        phi[i] /= tot
    return phi


@njit(cache=True, nogil=True)
def _clamp_penalty(v, lo, hi):
    if v < lo:
        return lo, (lo - v) * (lo - v)
    if v > hi:
        return hi, (v - hi) * (v - hi)
    return v, 0.0


ALLELE = 0
NOISE = 1


@njit(cache=True, nogil=True)
def objective(kind, x, y, beta, d, log_lo, log_hi, omega_hi):
    """Negative log-likelihood; for NOISE, ``y`` holds distinct values and
    ``beta`` their multiplicities."""
    if kind == ALLELE:
        return allele_negloglik(x, y, beta, d, log_lo, log_hi)
    return noise_negloglik(x, y, beta, log_lo, log_hi, omega_hi)


@njit(cache=True, nogil=True)
def allele_negloglik(x, y, beta, d, log_lo, log_hi):
    lnu, pen1 = _clamp_penalty(x[0], log_lo[0], log_hi[0])
    lgam, pen2 = _clamp_penalty(x[1], log_lo[1], log_hi[1])
    nu = math.exp(lnu)
    gam = math.exp(lgam)
    c = d.shape[1]
    if c > 1:
        phi = softmax_last_fixed(x[2:])
    else:
        phi = np.ones(1)
    # PG1 log-pmf without the parameter-free -lgamma(y + 1) term
    log_ratio = lgam - math.log1p(gam)
    log1p_gam = math.log1p(gam)
    ll = 0.0
    for i in range(len(y)):
        acc = 0.0
        for k in range(c):
            acc += d[i, k] * phi[k]
        mu = nu * beta[i] * acc
        if mu <= 1e-300:
            return 1e300
        eta = mu / gam
        ll += math.lgamma(y[i] + eta) - math.lgamma(eta) + y[i] * log_ratio - eta * log1p_gam
    return -ll + 1e6 * (pen1 + pen2)


@njit(cache=True, nogil=True)
def noise_profile(lmu, lrho, values, counts, omega_hi):
    """Noise log-likelihood at (mu, rho) with the one-inflation weight profiled
    out: the MLE of P(Y=1) is the observed fraction of ones whenever that
    exceeds the truncated PG1 mass at 1."""
    mu = math.exp(lmu)
    rho = math.exp(lrho)
    log_p0 = -(mu / rho) * math.log1p(rho)
    log_norm = math.log(-math.expm1(log_p0))
    n = 0.0
    n1 = 0.0
    for i in range(len(values)):
        n += counts[i]
        if values[i] == 1.0:
            n1 += counts[i]
    log_p1 = pg1_logpmf_scalar(1.0, mu, rho) - log_norm
    p1 = math.exp(log_p1)
    omega = 0.0
    if n > 0 and n1 / n > p1 and p1 < 1.0:
        omega = (n1 / n - p1) / (1.0 - p1)
        if omega > omega_hi:
            omega = omega_hi
    ll = 0.0
    log1m = math.log1p(-omega) if omega < 1.0 else -np.inf
    for i in range(len(values)):
        v = values[i]
        lt = pg1_logpmf_scalar(v, mu, rho) - log_norm
        if v == 1.0:
            if omega > 0.0:
                a = math.log(omega)
                b = log1m + lt
                mx = max(a, b)
                term = mx + math.log(math.exp(a - mx) + math.exp(b - mx))
            else:
                term = lt
        else:
            term = log1m + lt
        ll += counts[i] * term
    return ll, omega


@njit(cache=True, nogil=True)
def noise_negloglik(x, values, counts, log_lo, log_hi, omega_hi):
    lmu, pen1 = _clamp_penalty(x[0], log_lo[0], log_hi[0])
    lrho, pen2 = _clamp_penalty(x[1], log_lo[1], log_hi[1])
    ll, _ = noise_profile(lmu, lrho, values, counts, omega_hi)
    return -ll + 1e6 * (pen1 + pen2)


@njit(cache=True, nogil=True)
def nelder_mead(kind, x0, step, y, beta, d, lo, hi, omega_hi, ftol, max_evals):
    """Minimise ``objective(kind, x, y, beta, d, lo, hi, omega_hi)``; returns (x, f, n_evals, converged).

    Standard reflection/expansion/contraction/shrink coefficients
    (1, 2, 1/2, 1/2). Stops when the simplex spread in f falls below
    ``ftol * (|f_best| + ftol)``.
    """
    n = len(x0)
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    sim[0] = x0
    for i in range(n):
        sim[i + 1] = x0
        sim[i + 1, i] += step[i]
    evals = 0
    for i in range(n + 1):
        fs[i] = objective(kind, sim[i], y, beta, d, lo, hi, omega_hi)
        evals += 1
    converged = False
    xr = np.empty(n)
    xe = np.empty(n)
    xc = np.empty(n)
    cen = np.empty(n)
    while evals < max_evals:
        order = np.argsort(fs)
        sim = sim[order]
        fs = fs[order]
        if abs(fs[n] - fs[0]) <= ftol * (abs(fs[0]) + ftol):
            converged = True
            break
        cen[:] = 0.0
        for i in range(n):
            cen += sim[i]
        cen /= n
        for j in range(n):
            xr[j] = cen[j] + (cen[j] - sim[n, j])
        fr = objective(kind, xr, y, beta, d, lo, hi, omega_hi)
        evals += 1
        if fr < fs[0]:
            for j in range(n):
                xe[j] = cen[j] + 2.0 * (cen[j] - sim[n, j])
            fe = objective(kind, xe, y, beta, d, lo, hi, omega_hi)
            evals += 1
            if fe < fr:
                sim[n] = xe
                fs[n] = fe
            else:
                sim[n] = xr
                fs[n] = fr
        elif fr < fs[n - 1]:
            sim[n] = xr
            fs[n] = fr
        else:
            if fr < fs[n]:
                for j in range(n):
                    xc[j] = cen[j] + 0.5 * (xr[j] - cen[j])
            else:
                for j in range(n):
                    xc[j] = cen[j] + 0.5 * (sim[n, j] - cen[j])
            fc = objective(kind, xc, y, beta, d, lo, hi, omega_hi)
            evals += 1
            if fc < min(fr, fs[n]):
                sim[n] = xc
                fs[n] = fc
            else:
                for i in range(1, n + 1):
                    for j in range(n):
                        sim[i, j] = sim[0, j] + 0.5 * (sim[i, j] - sim[0, j])
                    fs[i] = objective(kind, sim[i], y, beta, d, lo, hi, omega_hi)
                    evals += 1
    best = np.argmin(fs)
    return sim[best].copy(), fs[best], evals, converged


@njit(cache=True, nogil=True)
def minimize_restarts(kind, x0, step, y, beta, d, lo, hi, omega_hi, ftol, max_evals, n_starts):
    """Nelder-Mead with restarts from the incumbent; stops early once a restart
    no longer improves by more than the tolerance."""
    x = x0.copy()
    f = objective(kind, x, y, beta, d, lo, hi, omega_hi)
    total = 1
    ok = True
    for s in range(n_starts):
        xn, fn, ev, conv = nelder_mead(kind, x, step, y, beta, d, lo, hi, omega_hi, ftol, max_evals)
        total += ev
        if not conv:
            ok = False
        improved = f - fn
        if fn < f:
            x = xn
            f = fn
        if s > 0 and improved <= ftol * (abs(f) + ftol):
            break
    return x, f, total, ok


@njit(cache=True, nogil=True)
def initial_allele_point(y, beta, d, log_lo, log_hi, nu0, gamma0, phi0):
    c = d.shape[1]
    x = np.empty(2 + c - 1)
    phi = phi0.copy()
    if phi[0] <= 0.0:
        # moment heuristic: phi_c from positions carried by contributor c alone
        for k in range(c):
            num = 0.0
            den = 0.0
            for i in range(len(y)):
                other = 0.0
                for k2 in range(c):
                    if k2 != k:
                        other += d[i, k2]
                if d[i, k] > 0 and other == 0.0:
                    num += y[i] / beta[i]
                    den += d[i, k]
            phi[k] = num / den if den > 0 else -1.0
        tot = 0.0
        cnt = 0
        for k in range(c):
            if phi[k] > 0:
                tot += phi[k]
                cnt += 1
        fill = tot / cnt if cnt > 0 else 1.0
        for k in range(c):
            if phi[k] <= 0:
                fill_k = fill if fill > 0 else 1.0
                phi[k] = fill_k
        tot = 0.0
        for k in range(c):
            phi[k] = max(phi[k], 1e-3)
            tot += phi[k]
        for k in range(c):
            phi[k] /= tot
    if nu0 <= 0.0:
        num = 0.0
        den = 0.0
        for i in range(len(y)):
            acc = 0.0
            for k in range(c):
                acc += d[i, k] * phi[k]
            num += y[i]
            den += beta[i] * acc
        nu0 = num / den if num > 0 and den > 0 else 1.0
    x[0] = min(max(math.log(nu0), log_lo[0]), log_hi[0])
    x[1] = min(max(math.log(gamma0), log_lo[1]), log_hi[1])
    for k in range(c - 1):
        x[2 + k] = math.log(phi[k] / phi[c - 1])
    return x


@njit(cache=True, nogil=True)
def evaluate(p, y, n_markers, offsets, known_dose, edge_ptr, edge_parent, edge_xi, depth,
             beta_flat, a_lo, a_hi, n_lo, n_hi, omega_hi, ftol, max_evals, n_starts, init):
    """Fit all continuous parameters for one encoded individual.

    ``init`` is either empty (cold start from moment heuristics) or a full
    parameter vector to warm-start from. Returns
    (allele_ll, noise_ll, theta, n_evals, converged, n_allele_obs).
    """
    d = dose_matrix(p, n_markers, offsets, known_dose, edge_ptr, edge_parent, edge_xi, depth)
    n = len(y)
    c = d.shape[1]
    mask = np.zeros(n, dtype=np.bool_)
    na = 0
    for i in range(n):
        tot = 0.0
        for k in range(c):
            tot += d[i, k]
        if tot > 0.0:
            mask[i] = True
            na += 1
    ya = np.empty(na)
    ba = np.empty(na)
    da = np.empty((na, c))
    j = 0
    noise_vals = np.empty(n - na)
    nn = 0
    for i in range(n):
        if mask[i]:
            ya[j] = y[i]
            ba[j] = beta_flat[i]
            da[j] = d[i]
            j += 1
        elif y[i] > 0:
            noise_vals[nn] = y[i]
            nn += 1
    noise_vals = np.sort(noise_vals[:nn])
    # run-length encode: the noise likelihood depends only on the value histogram
    uvals = np.empty(nn)
    ucnt = np.empty(nn)
    nu_ = 0
    for i in range(nn):
        if nu_ > 0 and uvals[nu_ - 1] == noise_vals[i]:
            ucnt[nu_ - 1] += 1.0
        else:
            uvals[nu_] = noise_vals[i]
            ucnt[nu_] = 1.0
            nu_ += 1
    uvals = uvals[:nu_]
    ucnt = ucnt[:nu_]

    theta = np.empty(c + 5)
    total_evals = 0
    converged = True

    if len(init) > 0:
        x0 = initial_allele_point(ya, ba, da, a_lo, a_hi, init[0], init[1], init[2:2 + c])
    else:
        x0 = initial_allele_point(ya, ba, da, a_lo, a_hi, -1.0, 1.0, -np.ones(c))
    step = np.full(len(x0), 0.5)
    xa, fa, ev, ok = minimize_restarts(ALLELE, x0, step, ya, ba, da, a_lo, a_hi, omega_hi, ftol, max_evals,
                                       n_starts)
    total_evals += ev
    converged = converged and ok
    theta[0] = math.exp(min(max(xa[0], a_lo[0]), a_hi[0]))
    theta[1] = math.exp(min(max(xa[1], a_lo[1]), a_hi[1]))
    if c > 1:
        phi = softmax_last_fixed(xa[2:])
    else:
        phi = np.ones(1)
    for k in range(c):
        theta[2 + k] = phi[k]
    allele_ll = -allele_negloglik(xa, ya, ba, da, a_lo, a_hi)
    for i in range(na):
        allele_ll -= math.lgamma(ya[i] + 1.0)

    noise_ll = 0.0
    if nn > 0:
        if len(init) > 0:
            m0 = init[2 + c]
            r0 = init[3 + c]
        else:
            m0 = 0.0
            for i in range(nu_):
                m0 += uvals[i] * ucnt[i]
            m0 /= nn
            r0 = 1.0
        xn0 = np.empty(2)
        xn0[0] = min(max(math.log(m0), n_lo[0]), n_hi[0])
        xn0[1] = min(max(math.log(r0), n_lo[1]), n_hi[1])
        xn, fn, ev, ok = minimize_restarts(NOISE, xn0, np.full(2, 0.5), uvals, ucnt, da, n_lo, n_hi, omega_hi,
                                           ftol, max_evals, n_starts)
        total_evals += ev
        converged = converged and ok
        lmu = min(max(xn[0], n_lo[0]), n_hi[0])
        lrho = min(max(xn[1], n_lo[1]), n_hi[1])
        noise_ll, omega = noise_profile(lmu, lrho, uvals, ucnt, omega_hi)
        theta[2 + c] = math.exp(lmu)
        theta[3 + c] = math.exp(lrho)
        theta[4 + c] = omega
    else:
        theta[2 + c] = 1.0
        theta[3 + c] = 1.0
        theta[4 + c] = 0.0
    return allele_ll, noise_ll, theta, total_evals, converged, na


@njit(cache=True, nogil=True)
def expected_flat(d, theta, beta_flat):
    c = d.shape[1]
    out = np.empty(d.shape[0])
    for i in range(d.shape[0]):
        acc = 0.0
        for k in range(c):
            acc += d[i, k] * theta[2 + k]
        out[i] = theta[0] * beta_flat[i] * acc
    return out


@njit(cache=True, nogil=True)
def position_residuals(p, theta, y, n_markers, offsets, known_dose, edge_ptr, edge_parent, edge_xi, depth,
                       beta_flat):
    """Deviance residual of every sequence under the individual's expectation.

    Allele-set positions use PG1(mu_hat, gamma_hat); positions outside the allele
    set use the noise model mean and overdispersion.
    """
    d = dose_matrix(p, n_markers, offsets, known_dose, edge_ptr, edge_parent, edge_xi, depth)
    c = d.shape[1]
    mu = expected_flat(d, theta, beta_flat)
    gam = theta[1]
    nmu = theta[2 + c]
    nrho = theta[3 + c]
    r = np.empty(len(y))
    for i in range(len(y)):
        if mu[i] > 0.0:
            r[i] = deviance_residual_scalar(y[i], mu[i], mu[i] / gam)
        else:
            r[i] = deviance_residual_scalar(y[i], nmu, nmu / nrho)
    return r
