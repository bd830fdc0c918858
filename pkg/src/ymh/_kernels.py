"""Compiled per-point kernel for the periodic instanton pair (link sampling).

Mirrors `smoothfields._dipole` plus the cell cutoff of `torus_bubble`, one
point at a time; the numpy version is the reference and tests compare them.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _step(t):
    if t <= 0.0:
        return 0.0
    if t >= 1.0:
        return 1.0
    return t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)


@njit(cache=True, inline="always")
def _step_d(t):
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return 30.0 * t * t * (1.0 - t) * (1.0 - t)


@njit(cache=True, inline="always")
def _qm(a, b, out):
    out[0] = a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3]
    out[1] = a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2]
    out[2] = a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1]
    out[3] = a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0]


@njit(cache=True, inline="always")
def _cj(a, out):
    out[0] = a[0]
    out[1] = -a[1]
    out[2] = -a[2]
    out[3] = -a[3]


@njit(cache=True)
def dipole_links(Y, mu, c1, off, L, rho1, rho2, ball1, ball2, tube, core2, cut):
    """Imaginary-quaternion components (m, 3) of A_mu at the points Y (m, 4)."""
    m = Y.shape[0]
    out = np.zeros((m, 3))
    y1 = np.empty(4)
    y2 = np.empty(4)
    h1 = np.empty(4)
    h2 = np.empty(4)
    dh1 = np.empty(4)
    dh2 = np.empty(4)
    t1 = np.empty(4)
    t2 = np.empty(4)
    p = np.empty(4)
    dp = np.empty(4)
    X = np.empty(4)
    s = np.empty(4)
    w = np.empty(4)
    e = np.empty(4)
    d2 = 0.0
    for k in range(4):
        d2 += off[k] * off[k]
    dist = math.sqrt(d2)
    for k in range(4):
        e[k] = off[k] / dist
    r0, r1c = cut[0], cut[1]
    for i in range(m):
        chi = 1.0
        for k in range(4):
            D = Y[i, k] - c1[k]
            D = D - L * round(D / L)
            y1[k] = D
            y2[k] = D - off[k]
            chi *= _step((r1c - abs(D)) / (r1c - r0))
        if chi == 0.0:
            continue
        q1 = 0.0
        q2 = 0.0
        for k in range(4):
            q1 += y1[k] * y1[k]
            q2 += y2[k] * y2[k]
        n1 = math.sqrt(q1) if q1 > 0 else 1.0
        n2 = math.sqrt(q2) if q2 > 0 else 1.0
        for k in range(4):
            h1[k] = y1[k] / n1
            h2[k] = y2[k] / n2
        for k in range(4):
            dh1[k] = ((1.0 if k == mu else 0.0) - h1[mu] * h1[k]) / n1
            dh2[k] = ((1.0 if k == mu else 0.0) - h2[mu] * h2[k]) / n2
        beta = 1.0 - _step((n2 - core2[0]) / core2[1])
        f2 = q2 / (q2 + rho2 * rho2 * beta)
        f = f2 * q1 / (q1 + rho1 * rho1)
        _cj(h2, t1)
        _qm(h1, t1, p)
        _qm(dh1, t1, dp)
        _cj(dh2, t2)
        _qm(h1, t2, t1)
        for k in range(4):
            dp[k] += t1[k]
        # X = f h2 (conj(h1) dh1) conj(h2) + f2 h2 conj(dh2)
        _cj(h1, t1)
        _qm(t1, dh1, t2)
        _qm(h2, t2, t1)
        _cj(h2, t2)
        _qm(t1, t2, X)
        _cj(dh2, t1)
        _qm(h2, t1, t2)
        for k in range(4):
            X[k] = f * X[k] + f2 * t2[k]
        # unwinding weight phi and its mu-derivative
        tt = 0.0
        for k in range(4):
            tt += y1[k] * e[k]
        tt = min(max(tt, 0.0), dist)
        ds = 0.0
        for k in range(4):
            w[k] = y1[k] - tt * e[k]
            ds += w[k] * w[k]
        ds = math.sqrt(ds)
        a1 = (n1 - ball1[0]) / ball1[1]
        a2 = (n2 - ball2[0]) / ball2[1]
        a3 = (ds - tube[0]) / tube[1]
        S1, S2, S3 = _step(a1), _step(a2), _step(a3)
        phi = S1 * S2 * S3
        if phi <= 0.0:
            for a in range(3):
                out[i, a] = chi * X[a + 1]
            continue
        dds = w[mu] / ds if ds > 0 else 0.0
        dphi = (_step_d(a1) * S2 * S3 / ball1[1] * h1[mu]
                + S1 * _step_d(a2) * S3 / ball2[1] * h2[mu]
                + S1 * S2 * _step_d(a3) / tube[1] * dds)
        # l = log p, dl = its mu-partial
        nv = math.sqrt(p[1] * p[1] + p[2] * p[2] + p[3] * p[3])
        th = math.atan2(nv, p[0])
        if th < 1e-6:
            g = 1.0 + th * th / 6.0
            gp = th / 3.0
        else:
            sn = math.sin(th)
            g = th / sn
            gp = (sn - th * math.cos(th)) / (sn * sn)
        dnv = 0.0
        if nv > 0:
            dnv = (p[1] * dp[1] + p[2] * dp[2] + p[3] * dp[3]) / nv
        dth = p[0] * dnv - nv * dp[0]
        # v = -phi l, dv = -(dphi l + phi dl)
        v1 = -phi * g * p[1]
        v2 = -phi * g * p[2]
        v3 = -phi * g * p[3]
        dv1 = -(dphi * g * p[1] + phi * (gp * dth * p[1] + g * dp[1]))
        dv2 = -(dphi * g * p[2] + phi * (gp * dth * p[2] + g * dp[2]))
        dv3 = -(dphi * g * p[3] + phi * (gp * dth * p[3] + g * dp[3]))
        al = math.sqrt(v1 * v1 + v2 * v2 + v3 * v3)
        if al < 1e-6:
            c = 1.0 - 2.0 * al * al / 3.0
            kk = 2.0 / 3.0 - 2.0 * al * al / 15.0
            ee = 1.0 - al * al / 3.0
            sinc = 1.0 - al * al / 6.0
        else:
            c = math.sin(2 * al) / (2 * al)
            kk = (1.0 - c) / (al * al)
            ee = math.sin(al) ** 2 / (al * al)
            sinc = math.sin(al) / al
        vd = v1 * dv1 + v2 * dv2 + v3 * dv3
        S_1 = c * dv1 + kk * vd * v1 - ee * (v2 * dv3 - v3 * dv2)
        S_2 = c * dv2 + kk * vd * v2 - ee * (v3 * dv1 - v1 * dv3)
        S_3 = c * dv3 + kk * vd * v3 - ee * (v1 * dv2 - v2 * dv1)
        s[0] = math.cos(al)
        s[1] = sinc * v1
        s[2] = sinc * v2
        s[3] = sinc * v3
        _cj(s, t1)
        _qm(t1, X, t2)
        _qm(t2, s, t1)
        out[i, 0] = chi * (t1[1] + S_1)
        out[i, 1] = chi * (t1[2] + S_2)
        out[i, 2] = chi * (t1[3] + S_3)
    return out
