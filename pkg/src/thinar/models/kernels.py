"""Compiled recursions for the latent normal layer and its adjoint."""

from __future__ import annotations

import math

import numba
import numpy as np

LOG_2PI = math.log(2.0 * math.pi)


@numba.njit(cache=True)
def latent_forward(nu, phi, theta, latent, x1, lambda1, kappa, known, centred, z_floor):
    """Run the latent recursion for every stratum.

    ``latent`` holds z* (non-centred) or Z (centred), shape (S, T - t0).
    Returns ``(lam, Z, lagsum, zstar, latent_logdens, ok)``; ``latent_logdens``
    is the centred normal log-density sum (zero in non-centred mode, where the
    standard-normal term is added by the caller).
    """
    S, T = nu.shape
    J = theta.shape[0]
    t0 = 1 if known else 0
    lam = np.zeros((S, T))
    Z = np.zeros((S, T))
    lag = np.zeros((S, T))
    zs = np.zeros((S, T))
    dens = 0.0
    for i in range(S):
        if known:
            Z[i, 0] = x1[i]
        for t in range(T):
            if t == 0:
                if known:
                    continue
                lt = lambda1[i]
            else:
                s = 0.0
                for j in range(1, min(J, t) + 1):
                    s += theta[j - 1] * Z[i, t - j]
                lag[i, t] = s
                lt = nu[i, t] + phi[i, t] * s
            if not (lt > z_floor) or not math.isfinite(lt):
                return lam, Z, lag, zs, dens, False
            lam[i, t] = lt
            var = lt + kappa * lt * lt
            sd = math.sqrt(var)
            if centred:
                zt = latent[i, t - t0]
                Z[i, t] = zt
                r = zt - lt
                zs[i, t] = r / sd
                dens += -0.5 * (LOG_2PI + math.log(var)) - 0.5 * r * r / var
            else:
                zs[i, t] = latent[i, t - t0]
                Z[i, t] = lt + sd * zs[i, t]
            if not (Z[i, t] > z_floor):
                return lam, Z, lag, zs, dens, False
    return lam, Z, lag, zs, dens, True


@numba.njit(cache=True)
def latent_backward(gZ, lam, Z, zs, phi, theta, kappa, known, centred):
    """Adjoint pass. ``gZ`` holds direct partials dL/dZ and is updated in place.

    Returns ``(g_latent, g_lam, g_theta, g_kappa)`` where ``g_lam`` is the total
    derivative w.r.t. each lambda_t (so dL/dnu_t = g_lam, dL/dphi_t = g_lam * lag_t).
    """
    S, T = gZ.shape
    J = theta.shape[0]
    t0 = 1 if known else 0
    g_latent = np.zeros((S, T - t0))
    g_lam = np.zeros((S, T))
    g_theta = np.zeros(J)
    g_kappa = 0.0
    for i in range(S):
        for t in range(T - 1, -1, -1):
            if t == 0 and known:
                continue
            lt = lam[i, t]
            var = lt + kappa * lt * lt
            sd = math.sqrt(var)
            dvar_dlam = 1.0 + 2.0 * kappa * lt
            G = gZ[i, t]
            if centred:
                r = Z[i, t] - lt
                # d/dZ and d/dlam of the N(Z; lam, var) log-density
                g_latent[i, t - t0] = G - r / var
                dl_dvar = -0.5 / var + 0.5 * r * r / (var * var)
                gl = r / var + dl_dvar * dvar_dlam
                g_kappa += dl_dvar * lt * lt
            else:
                z = zs[i, t]
                g_latent[i, t - t0] = G * sd
                dsd_dvar = 0.5 / sd
                gl = G * (1.0 + z * dsd_dvar * dvar_dlam)
                g_kappa += G * z * dsd_dvar * lt * lt
            g_lam[i, t] = gl
            if t >= 1:
                p = phi[i, t]
                for j in range(1, min(J, t) + 1):
                    gZ[i, t - j] += gl * p * theta[j - 1]
                    g_theta[j - 1] += gl * p * Z[i, t - j]
    return g_latent, g_lam, g_theta, g_kappa


@numba.njit(cache=True)
def prior_logpdf(code, p0, p1, lognorm, x):
    """Scalar prior log-density and its derivative; codes follow ``Prior.code``."""
    if code == 3:
        if x <= 0.0:
            return -np.inf, 0.0
        return math.log(p0) - p0 * x, -p0
    if code == 1 and x <= 0.0:
        return -np.inf, 0.0
    if code == 2 and (x <= 0.0 or x >= 1.0):
        return -np.inf, 0.0
    z = (x - p0) / p1
    return -0.5 * z * z - math.log(p1) - 0.5 * LOG_2PI - lognorm, -z / p1


@numba.njit(cache=True)
def canonical_logp_grad(u, y, x1, centred, pri, z_floor, sd_floor):
    """Fused log-density and gradient of the single-lag, intercept-only model with x1 known.

    ``u = (log nu, logit phi, logit pi, latent[0..T-2])`` and ``pri`` is a (3, 4)
    array of packed natural-scale priors for (nu, phi, pi).
    """
    T = y.shape[0]
    grad = np.zeros(u.shape[0])
    nu = math.exp(u[0])
    phi = 1.0 / (1.0 + math.exp(-u[1]))
    pi = 1.0 / (1.0 + math.exp(-u[2]))
    dphi = phi * (1.0 - phi)
    dpi = pi * (1.0 - pi)
    lp = u[0] + math.log(dphi) + math.log(dpi)
    lpn, gn = prior_logpdf(int(pri[0, 0]), pri[0, 1], pri[0, 2], pri[0, 3], nu)
    lpp, gp = prior_logpdf(int(pri[1, 0]), pri[1, 1], pri[1, 2], pri[1, 3], phi)
    lpi, gi = prior_logpdf(int(pri[2, 0]), pri[2, 1], pri[2, 2], pri[2, 3], pi)
    lp += lpn + lpp + lpi
    if not math.isfinite(lp):
        return -np.inf, grad
    Z = np.empty(T)
    lam = np.empty(T)
    Z[0] = x1
    for t in range(1, T):
        lt = nu + phi * Z[t - 1]
        if not (lt > z_floor):
            return -np.inf, grad
        lam[t] = lt
        v = u[2 + t]
        if centred:
            Z[t] = v
            r = v - lt
            lp += -0.5 * (LOG_2PI + math.log(lt)) - 0.5 * r * r / lt
        else:
            Z[t] = lt + math.sqrt(lt) * v
            lp += -0.5 * (LOG_2PI + v * v)
        if not (Z[t] > z_floor):
            return -np.inf, grad
    gZ = np.zeros(T)
    g_pi = 0.0
    floor2 = sd_floor * sd_floor
    for t in range(T):
        z = Z[t]
        vr = pi * (1.0 - pi) * z
        fl = vr < floor2
        v = floor2 if fl else vr
        r = y[t] - pi * z
        lp += -0.5 * (LOG_2PI + math.log(v)) - 0.5 * r * r / v
        dv = 0.0 if fl else -0.5 / v + 0.5 * r * r / (v * v)
        gZ[t] = pi * r / v + dv * pi * (1.0 - pi)
        g_pi += z * r / v + dv * (1.0 - 2.0 * pi) * z
    g_nu = 0.0
    g_phi = 0.0
    for t in range(T - 1, 0, -1):
        lt = lam[t]
        G = gZ[t]
        if centred:
            r = Z[t] - lt
            grad[2 + t] = G - r / lt
            gl = r / lt - 0.5 / lt + 0.5 * r * r / (lt * lt)
        else:
            sd = math.sqrt(lt)
            v = u[2 + t]
            grad[2 + t] = G * sd - v
            gl = G * (1.0 + 0.5 * v / sd)
        gZ[t - 1] += gl * phi
        g_nu += gl
        g_phi += gl * Z[t - 1]
    grad[0] = g_nu * nu + 1.0 + gn * nu
    grad[1] = g_phi * dphi + 1.0 - 2.0 * phi + gp * dphi
    grad[2] = g_pi * dpi + 1.0 - 2.0 * pi + gi * dpi
    return lp, grad


@numba.njit(cache=True)
def linear_logp_grad(u, y, X, col_block, coef_mean, coef_sd, has_nu, known, x1, lam1_pri, centred,
                     z_floor, sd_floor):
    """Fused log-density and gradient of a single-series, single-lag model with linear link blocks.

    ``u = (coefficients[0..P-1], [log lambda1], latent...)``; column ``k`` of
    ``X`` (T, P) multiplies ``u[k]`` in block ``col_block[k]`` (0 = log nu,
    1 = log phi, 2 = logit pi). Coefficient priors are normal on the link
    scale; ``lam1_pri`` is the packed prior of ``lambda1`` (ignored when the
    first count is known).
    """
    T = y.shape[0]
    P = X.shape[1]
    grad = np.zeros(u.shape[0])
    lp = 0.0
    for k in range(P):
        z = (u[k] - coef_mean[k]) / coef_sd[k]
        lp += -0.5 * z * z - math.log(coef_sd[k]) - 0.5 * LOG_2PI
        grad[k] = -z / coef_sd[k]
    t0 = 1 if known else 0
    lat = P if known else P + 1
    lam1 = 0.0
    g_lam1_prior = 0.0
    if not known:
        lam1 = math.exp(u[P])
        l1p, g1p = prior_logpdf(int(lam1_pri[0]), lam1_pri[1], lam1_pri[2], lam1_pri[3], lam1)
        lp += l1p + u[P]
        g_lam1_prior = g1p
        if not math.isfinite(lp):
            return -np.inf, grad
    eta = np.zeros((3, T))
    for t in range(T):
        for k in range(P):
            eta[col_block[k], t] += X[t, k] * u[k]
    nu = np.zeros(T)
    phi = np.empty(T)
    pi = np.empty(T)
    for t in range(T):
        if has_nu:
            nu[t] = math.exp(eta[0, t])
        phi[t] = math.exp(eta[1, t])
        pi[t] = 1.0 / (1.0 + math.exp(-eta[2, t]))
    Z = np.zeros(T)
    lam = np.zeros(T)
    if known:
        Z[0] = x1
    for t in range(t0, T):
        lt = lam1 if t == 0 else nu[t] + phi[t] * Z[t - 1]
        if not (lt > z_floor) or not math.isfinite(lt):
            return -np.inf, grad
        lam[t] = lt
        v = u[lat + t - t0]
        if centred:
            Z[t] = v
            r = v - lt
            lp += -0.5 * (LOG_2PI + math.log(lt)) - 0.5 * r * r / lt
        else:
            Z[t] = lt + math.sqrt(lt) * v
            lp += -0.5 * (LOG_2PI + v * v)
        if not (Z[t] > z_floor):
            return -np.inf, grad
    gZ = np.zeros(T)
    g_eta_pi = np.zeros(T)
    floor2 = sd_floor * sd_floor
    for t in range(T):
        z = Z[t]
        p = pi[t]
        vr = p * (1.0 - p) * z
        fl = vr < floor2
        v = floor2 if fl else vr
        r = y[t] - p * z
        lp += -0.5 * (LOG_2PI + math.log(v)) - 0.5 * r * r / v
        dv = 0.0 if fl else -0.5 / v + 0.5 * r * r / (v * v)
        gZ[t] = p * r / v + dv * p * (1.0 - p)
        g_eta_pi[t] = (z * r / v + dv * (1.0 - 2.0 * p) * z) * p * (1.0 - p)
    if not math.isfinite(lp):
        return -np.inf, grad
    g_eta_nu = np.zeros(T)
    g_eta_phi = np.zeros(T)
    for t in range(T - 1, t0 - 1, -1):
        lt = lam[t]
        G = gZ[t]
        v = u[lat + t - t0]
        if centred:
            r = Z[t] - lt
            grad[lat + t - t0] = G - r / lt
            gl = r / lt - 0.5 / lt + 0.5 * r * r / (lt * lt)
        else:
            sd = math.sqrt(lt)
            grad[lat + t - t0] = G * sd - v
            gl = G * (1.0 + 0.5 * v / sd)
        if t == 0:
            grad[P] = gl * lam1 + g_lam1_prior * lam1 + 1.0
        else:
            gZ[t - 1] += gl * phi[t]
            g_eta_nu[t] = gl * nu[t]
            g_eta_phi[t] = gl * Z[t - 1] * phi[t]
    for k in range(P):
        b = col_block[k]
        s = 0.0
        for t in range(T):
            if b == 0:
                s += X[t, k] * g_eta_nu[t]
            elif b == 1:
                s += X[t, k] * g_eta_phi[t]
            else:
                s += X[t, k] * g_eta_pi[t]
        grad[k] += s
    return lp, grad
