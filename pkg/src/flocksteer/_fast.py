"""Numba kernels for the closed-loop right-hand side and the RK loops.

The flat state is ``y = [x.ravel(), v.ravel()]``. Parameters travel as one
tuple ``(ip, fp, tgt, orient_b, gain_offset, fric_c, steer_B)``; the index
constants below name the slots. Row sums of the influence matrix run left to
right over ``j`` so results do not depend on any scheduling.
"""

import math

import numpy as np
from numba import njit

from .errors import DomainError

# ip slots
I_KERNEL, I_MASK, I_ORIENT, I_STEER, I_TARGET, I_FREEZE, I_N, I_D = range(8)
# fp slots
(F_K0, F_K1, F_K2, F_KAPPA, F_WIDTH, F_MSMOOTH, F_ETA, F_ODELTA, F_GAIN_A, F_GAIN_P,
 F_G1, F_G2, F_RATE, F_FRIC_R, F_EPS, F_FRIC_ON) = range(16)

STATUS_OK = 0
STATUS_BLOWUP = 1
STATUS_DEGENERATE = 2
STATUS_STIFF = 3

BLOWUP = 1e12


def pack(cfg, freeze_positions=False):
    """Flatten a :class:`~flocksteer.model.ModelConfig` into kernel arguments.

    Returns ``None`` if any rule has no compiled counterpart.
    """
    from .model import _per_agent

    steer = cfg.steering
    kernel = cfg.influence.kernel
    if getattr(steer, "code", None) is None or getattr(kernel, "code", None) is None:
        return None
    target = getattr(steer, "target", None)
    if target is not None and getattr(target, "code", None) is None:
        return None
    n, d = cfg.n_agents, cfg.dim
    mask = cfg.influence.masking
    orient = cfg.influence.orientation
    ip = np.array(
        [kernel.code, mask is not None, orient is not None, steer.code,
         -1 if target is None else target.code, bool(freeze_positions), n, d],
        dtype=np.int64,
    )
    fp = np.zeros(16)
    fp[F_K0:F_K2 + 1] = kernel.fast_params()
    if mask is not None:
        fp[F_KAPPA], fp[F_WIDTH], fp[F_MSMOOTH] = mask.kappa, mask.width, mask.smoothing
    if orient is not None:
        fp[F_ETA], fp[F_ODELTA] = orient.eta, orient.delta
    fp[F_GAIN_A], fp[F_GAIN_P] = cfg.gain.A, cfg.gain.power
    fp[F_G1] = getattr(steer, "gamma1", 0.0)
    fp[F_G2] = getattr(steer, "gamma2", 0.0)
    fp[F_RATE] = getattr(steer, "rate", 0.0)
    fp[F_FRIC_R] = cfg.friction.r
    fp[F_EPS] = cfg.eps
    fp[F_FRIC_ON] = 1.0 if cfg.friction.active() else 0.0
    tgt = np.zeros(1) if target is None else np.asarray(target.fast_params(), dtype=float)
    B = getattr(steer, "B", None)
    sB = np.zeros((n, d)) if B is None else np.ascontiguousarray(B, dtype=float)
    return (
        ip,
        fp,
        tgt,
        _per_agent(cfg.orientation_map.b, n, "b"),
        _per_agent(cfg.gain.offset, n, "offset"),
        _per_agent(cfg.friction.c, n, "c"),
        sB,
    )


def workspace(P):
    n, d = int(P[0][I_N]), int(P[0][I_D])
    return np.empty((n, n)), np.empty((n, d)), np.empty((n, d))


@njit(cache=True, nogil=True)
def _phi(code, fp, r2):
    if code == 0:
        return fp[F_K0] * (fp[F_K1] + r2) ** (-fp[F_K2])
    return fp[F_K0] * math.exp(-r2 / fp[F_K1])


@njit(cache=True, nogil=True)
def _softplus(z, k):
    kz = k * z
    if kz > 0.0:
        return (kz + math.log1p(math.exp(-kz))) / k
    return math.log1p(math.exp(kz)) / k


@njit(cache=True, nogil=True)
def _mask(x, i, j, n, d, fp):
    kappa = fp[F_KAPPA]
    width2 = fp[F_WIDTH] * fp[F_WIDTH]
    sm = fp[F_MSMOOTH]
    k = 1.0 / sm
    e2 = 0.0
    for c in range(d):
        e = x[j, c] - x[i, c]
        e2 += e * e
    m = 1.0
    for l in range(n):
        if l == i or l == j:
            continue
        dot = 0.0
        for c in range(d):
            dot += (x[j, c] - x[i, c]) * (x[l, c] - x[i, c])
        proj = dot / (e2 + sm * sm)
        tc = _softplus(proj, k) - _softplus(proj - 1.0, k)
        s2 = 0.0
        for c in range(d):
            r = (x[l, c] - x[i, c]) - tc * (x[j, c] - x[i, c])
            s2 += r * r
        s2 += sm * sm
        m *= 1.0 - kappa * math.exp(-s2 / width2)
    return m


@njit(cache=True, nogil=True)
def influence_into(x, v, P, W):
    """Fill ``W`` with the row-stochastic influence matrix. Returns a status code."""
    ip, fp, tgt, ob, goff, fc, sB = P
    n = ip[I_N]
    d = ip[I_D]
    kcode = ip[I_KERNEL]
    mask_on = ip[I_MASK] != 0
    orient_on = ip[I_ORIENT] != 0
    eta = fp[F_ETA]
    od2 = fp[F_ODELTA] * fp[F_ODELTA]
    status = STATUS_OK
    for i in range(n):
        if orient_on:
            vv = 0.0
            for c in range(d):
                vv += v[i, c] * v[i, c]
            sden = math.sqrt(vv + ob[i] * ob[i])
        s = 0.0
        for j in range(n):
            r2 = 0.0
            for c in range(d):
                e = x[j, c] - x[i, c]
                r2 += e * e
            w = _phi(kcode, fp, r2)
            if mask_on and n >= 3 and j != i:
                w *= _mask(x, i, j, n, d, fp)
            if orient_on:
                dot = 0.0
                for c in range(d):
                    dot += (v[i, c] / sden) * (x[j, c] - x[i, c])
                cosang = dot / math.sqrt(r2 + od2)
                w *= (1.0 + eta * cosang) / (1.0 + eta)
            if not (w > 0.0):
                status = STATUS_DEGENERATE
            W[i, j] = w
            s += w
        for j in range(n):
            W[i, j] = W[i, j] / s
    return status


@njit(cache=True, nogil=True)
def rhs(t, y, P, out, ws):
    ip, fp, tgt, ob, goff, fc, sB = P
    n = ip[I_N]
    d = ip[I_D]
    nd = n * d
    x = y[:nd].reshape((n, d))
    v = y[nd:].reshape((n, d))
    W, vb, beta = ws
    status = influence_into(x, v, P, W)
    for i in range(n):
        for c in range(d):
            acc = 0.0
            for j in range(n):
                acc += W[i, j] * v[j, c]
            vb[i, c] = acc
    scode = ip[I_STEER]
    if scode == 0:
        beta[:, :] = 0.0
    elif scode == 1:
        beta[:, :] = sB
    elif scode == 2:
        decay = math.exp(-fp[F_RATE] * t)
        for i in range(n):
            for c in range(d):
                beta[i, c] = sB[i, c] * decay
    else:
        g1 = fp[F_G1]
        g2 = fp[F_G2]
        if ip[I_TARGET] == 0:
            om = tgt[3]
            rad = tgt[2]
            st = math.sin(om * t)
            ct = math.cos(om * t)
            y0 = tgt[0] + rad * st
            y1 = tgt[1] + rad * ct
            yd0 = rad * om * ct
            yd1 = -rad * om * st
            for i in range(n):
                beta[i, 0] = g1 * (yd0 - v[i, 0]) + g2 * (y0 - x[i, 0])
                beta[i, 1] = g1 * (yd1 - v[i, 1]) + g2 * (y1 - x[i, 1])
        else:
            for i in range(n):
                for c in range(d):
                    yc = tgt[c] + t * tgt[d + c]
                    beta[i, c] = g1 * (tgt[d + c] - v[i, c]) + g2 * (yc - x[i, c])
    A = fp[F_GAIN_A]
    p = fp[F_GAIN_P]
    inv_eps = 1.0 / fp[F_EPS]
    fric_on = fp[F_FRIC_ON] != 0.0
    fr = fp[F_FRIC_R]
    freeze = ip[I_FREEZE] != 0
    for i in range(n):
        s2 = 0.0
        for c in range(d):
            u = vb[i, c] - v[i, c]
            s2 += u * u
        alpha = A / (goff[i] + s2) ** p
        fcoef = 0.0
        if fric_on and fc[i] > 0.0:
            sp = 0.0
            for c in range(d):
                sp += v[i, c] * v[i, c]
            fcoef = fc[i] * math.sqrt(sp) ** fr
        for c in range(d):
            k = i * d + c
            out[k] = 0.0 if freeze else v[i, c]
            out[nd + k] = alpha * inv_eps * (vb[i, c] - v[i, c]) + beta[i, c] - fcoef * v[i, c]
    return status


@njit(cache=True, nogil=True)
def _bad(y):
    for k in range(y.size):
        a = y[k]
        if not (abs(a) <= BLOWUP):
            return True
    return False


@njit(cache=True, nogil=True)
def rk4_run(y, t_origin, i0, dt, nsteps, P):
    """Advance ``y`` in place by ``nsteps`` classical RK4 steps.

    Step ``s`` starts at ``t_origin + (i0 + s) * dt``. Returns ``(status,
    steps_done)``; on failure ``y`` holds the last valid state.
    """
    m = y.size
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    tmp = np.empty(m)
    ws = (np.empty((P[0][I_N], P[0][I_N])), np.empty((P[0][I_N], P[0][I_D])), np.empty((P[0][I_N], P[0][I_D])))
    for s in range(nsteps):
        t = t_origin + (i0 + s) * dt
        st = rhs(t, y, P, k1, ws)
        for k in range(m):
            tmp[k] = y[k] + 0.5 * dt * k1[k]
        st |= rhs(t + 0.5 * dt, tmp, P, k2, ws)
        for k in range(m):
            tmp[k] = y[k] + 0.5 * dt * k2[k]
        st |= rhs(t + 0.5 * dt, tmp, P, k3, ws)
        for k in range(m):
            tmp[k] = y[k] + dt * k3[k]
        st |= rhs(t + dt, tmp, P, k4, ws)
        for k in range(m):
            tmp[k] = y[k] + dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k])
        if st != STATUS_OK:
            return STATUS_DEGENERATE, s
        if _bad(tmp):
            return STATUS_BLOWUP, s
        y[:] = tmp
    return STATUS_OK, nsteps


# Dormand-Prince 5(4) tableau
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40,
)


@njit(cache=True, nogil=True)
def dp45_run(y, t, t_target, h, rtol, atol, hmin, P):
    """Adaptive Dormand-Prince integration of ``y`` from ``t`` to exactly ``t_target``.

    Returns ``(status, t, h_next, accepted, rejected)``.
    """
    m = y.size
    k1 = np.empty(m)
    k2 = np.empty(m)
    k3 = np.empty(m)
    k4 = np.empty(m)
    k5 = np.empty(m)
    k6 = np.empty(m)
    k7 = np.empty(m)
    tmp = np.empty(m)
    ynew = np.empty(m)
    ws = (np.empty((P[0][I_N], P[0][I_N])), np.empty((P[0][I_N], P[0][I_D])), np.empty((P[0][I_N], P[0][I_D])))
    accepted = 0
    rejected = 0
    st = rhs(t, y, P, k1, ws)
    if st != STATUS_OK:
        return STATUS_DEGENERATE, t, h, accepted, rejected
    while t < t_target:
        last = False
        hs = h
        if t + h >= t_target:
            hs = t_target - t
            last = True
        for k in range(m):
            tmp[k] = y[k] + hs * _A21 * k1[k]
        st = rhs(t + _C2 * hs, tmp, P, k2, ws)
        for k in range(m):
            tmp[k] = y[k] + hs * (_A31 * k1[k] + _A32 * k2[k])
        st |= rhs(t + _C3 * hs, tmp, P, k3, ws)
        for k in range(m):
            tmp[k] = y[k] + hs * (_A41 * k1[k] + _A42 * k2[k] + _A43 * k3[k])
        st |= rhs(t + _C4 * hs, tmp, P, k4, ws)
        for k in range(m):
            tmp[k] = y[k] + hs * (_A51 * k1[k] + _A52 * k2[k] + _A53 * k3[k] + _A54 * k4[k])
        st |= rhs(t + _C5 * hs, tmp, P, k5, ws)
        for k in range(m):
            tmp[k] = y[k] + hs * (_A61 * k1[k] + _A62 * k2[k] + _A63 * k3[k] + _A64 * k4[k] + _A65 * k5[k])
        st |= rhs(t + hs, tmp, P, k6, ws)
        for k in range(m):
            ynew[k] = y[k] + hs * (_B1 * k1[k] + _B3 * k3[k] + _B4 * k4[k] + _B5 * k5[k] + _B6 * k6[k])
        st |= rhs(t + hs, ynew, P, k7, ws)
        if st != STATUS_OK:
            return STATUS_DEGENERATE, t, h, accepted, rejected
        err = 0.0
        for k in range(m):
            e = hs * (_E1 * k1[k] + _E3 * k3[k] + _E4 * k4[k] + _E5 * k5[k] + _E6 * k6[k] + _E7 * k7[k])
            sc = atol + rtol * max(abs(y[k]), abs(ynew[k]))
            err += (e / sc) ** 2
        err = math.sqrt(err / m)
        if err != err:
            err = 1e10
        if err <= 1.0:
            if _bad(ynew):
                return STATUS_BLOWUP, t, h, accepted, rejected
            t = t_target if last else t + hs
            y[:] = ynew
            k1[:] = k7
            accepted += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h = max(h, hs * fac) if last else hs * fac
        else:
            rejected += 1
            h = hs * max(0.2, 0.9 * err ** -0.2)
            if h < hmin:
                return STATUS_STIFF, t, h, accepted, rejected
    return STATUS_OK, t, h, accepted, rejected


def closed_rhs(cfg, t, x, v, freeze_positions=False):
    """Compiled ``(dx, dv)`` for ``cfg``; used by tests to compare against the NumPy path."""
    P = pack(cfg, freeze_positions)
    if P is None:
        raise DomainError("configuration has no compiled counterpart")
    n, d = cfg.n_agents, cfg.dim
    y = np.concatenate([np.asarray(x, float).ravel(), np.asarray(v, float).ravel()])
    out = np.empty_like(y)
    rhs(float(t), y, P, out, workspace(P))
    return out[: n * d].reshape(n, d), out[n * d:].reshape(n, d)
