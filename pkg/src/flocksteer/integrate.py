"""Fixed-step RK4 and adaptive Dormand-Prince integration with sampling.

A *system* is any object with ``rhs(t, x, v) -> (dx, dv)``. Systems that also
return compiled arguments from ``fast_params()`` are advanced by the Numba
loops in :mod:`flocksteer._fast`; everything else runs the NumPy steppers
below. Both routes implement the same schemes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _fast
from .errors import DomainError, FlockError, IntegrationError, StiffnessError
from .model import SwarmState

__all__ = ["IntegratorConfig", "Trajectory", "integrate", "step_rk4", "default_dt"]

METHODS = ("rk4", "rk45")


def default_dt(eps=1.0):
    """``min(1e-2, eps / 20)``: about twenty steps per fast time constant."""
    return min(1e-2, eps / 20.0)


@dataclass(frozen=True)
class IntegratorConfig:
    """Integration horizon and scheme.

    ``dt`` is the RK4 step; for ``rk45`` it only sets the sampling grid
    ``dt * sample_every`` and the first trial step. ``None`` picks
    :func:`default_dt` for the system's ``eps``.
    """

    t_end: float
    method: str = "rk4"
    dt: float | None = None
    rtol: float = 1e-8
    atol: float = 1e-10
    sample_every: int = 1
    dt_min: float = 1e-12

    def __post_init__(self):
        if self.method not in METHODS:
            raise DomainError(f"method must be one of {METHODS}, got {self.method!r}")
        if not self.t_end > 0:
            raise DomainError("t_end must be positive")
        if self.dt is not None and not self.dt > 0:
            raise DomainError("dt must be positive")
        if not (self.rtol > 0 and self.atol > 0):
            raise DomainError("rtol and atol must be positive")
        if int(self.sample_every) != self.sample_every or self.sample_every < 1:
            raise DomainError("sample_every must be a positive integer")

    @classmethod
    def with_sample_interval(cls, t_end, interval, eps=1.0, **kwargs):
        """Largest step not above :func:`default_dt` that divides ``interval`` evenly."""
        k = max(1, math.ceil(interval / default_dt(eps) - 1e-9))
        return cls(t_end=t_end, dt=interval / k, sample_every=k, **kwargs)

    def step(self, eps=1.0):
        return self.dt if self.dt is not None else default_dt(eps)


@dataclass
class Trajectory:
    """Sampled solution. ``x`` and ``v`` have shape ``(samples, N, d)``.

    The reduced model stores its single flock velocity as ``v[:, 0, :]``.
    """

    t: np.ndarray
    x: np.ndarray
    v: np.ndarray
    records: list | None = None
    system: object = None
    stats: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.t)

    def state(self, k):
        return SwarmState(self.t[k], self.x[k], self.v[k])

    @property
    def final(self):
        return self.state(-1)


def _pack_flat(x, v):
    return np.concatenate([np.ravel(x), np.ravel(v)]).astype(float)


def _flat_rhs(system, xshape, vshape):
    nx = int(np.prod(xshape))

    def f(t, y):
        dx, dv = system.rhs(t, y[:nx].reshape(xshape), y[nx:].reshape(vshape))
        return _pack_flat(dx, dv)

    return f


def _rk4_py(f, t, y, dt):
    k1 = f(t, y)
    k2 = f(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = f(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = f(t + dt, y + dt * k3)
    return y + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_DP_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0)
_DP_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
)
_DP_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84])
_DP_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def _dp45_py(f, y, t, t_target, h, rtol, atol, hmin):
    """Dormand-Prince 5(4) from ``t`` to ``t_target``; returns ``(y, h, accepted, rejected)``."""
    k1 = f(t, y)
    acc = rej = 0
    while t < t_target:
        last = t + h >= t_target
        hs = t_target - t if last else h
        ks = [k1]
        for s in range(1, 6):
            ys = y + hs * sum(a * k for a, k in zip(_DP_A[s], ks))
            ks.append(f(t + _DP_C[s] * hs, ys))
        ynew = y + hs * sum(b * k for b, k in zip(_DP_B, ks))
        k7 = f(t + hs, ynew)
        e = hs * sum(c * k for c, k in zip(_DP_E, ks + [k7]))
        sc = atol + rtol * np.maximum(np.abs(y), np.abs(ynew))
        err = math.sqrt(np.mean((e / sc) ** 2))
        if not np.isfinite(err):
            err = 1e10
        if err <= 1.0:
            if _blown(ynew):
                raise IntegrationError("state left the finite range", t)
            t = t_target if last else t + hs
            y, k1 = ynew, k7
            acc += 1
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err**-0.2))
            h = max(h, hs * fac) if last else hs * fac
        else:
            rej += 1
            h = hs * max(0.2, 0.9 * err**-0.2)
            if h < hmin:
                raise StiffnessError(_STIFF_HINT.format(h=h), t)
    return y, h, acc, rej


_STIFF_HINT = (
    "adaptive step fell to {h:.3g} below dt_min; the fast scale is too stiff for the "
    "explicit scheme, use rk4 with dt <= eps/20 or a larger dt_min"
)


def _blown(y):
    return not np.all(np.abs(y) <= _fast.BLOWUP)


def step_rk4(state, system, dt):
    """One classical RK4 step of ``system`` from ``state`` (NumPy path)."""
    if dt < 0:
        raise DomainError("dt must be nonnegative")
    if dt == 0:
        return SwarmState(state.t, state.x, state.v)
    f = _flat_rhs(system, state.x.shape, state.v.shape)
    try:
        y = _rk4_py(f, state.t, _pack_flat(state.x, state.v), dt)
    except FlockError as exc:
        raise IntegrationError(str(exc), state.t) from exc
    if _blown(y):
        raise IntegrationError("state left the finite range", state.t)
    nx = state.x.size
    return SwarmState(state.t + dt, y[:nx].reshape(state.x.shape), y[nx:].reshape(state.v.shape))


def integrate(initial, system, icfg, observer=None, use_fast=True):
    """Integrate ``system`` from ``initial`` to ``icfg.t_end`` and sample the solution.

    Parameters
    ----------
    initial : SwarmState
        Initial condition; its ``t`` is the start time.
    system : object
        Provides ``rhs(t, x, v)``; see module docstring.
    icfg : IntegratorConfig
    observer : callable, optional
        Called as ``observer(t, x, v)`` at every sample on the integrating
        thread. Non-``None`` return values are collected in
        ``Trajectory.records``.
    use_fast : bool
        Allow the compiled route when the system supports it.

    Raises
    ------
    IntegrationError
        The state became non-finite or exceeded 1e12 in magnitude, or the
        influence weights degenerated.
    StiffnessError
        The adaptive step fell below ``icfg.dt_min``.
    """
    t0 = float(initial.t)
    if not icfg.t_end > t0:
        raise DomainError(f"t_end={icfg.t_end} must exceed the initial time {t0}")
    xshape, vshape = initial.x.shape, initial.v.shape
    nx = int(np.prod(xshape))
    y = _pack_flat(initial.x, initial.v)
    if _blown(y):
        raise DomainError("initial state is not finite")
    P = system.fast_params() if use_fast and hasattr(system, "fast_params") else None
    f = _flat_rhs(system, xshape, vshape)
    dt = icfg.step(getattr(system, "eps", 1.0))

    ts, xs, vs, recs = [], [], [], []

    def sample(t):
        x = y[:nx].reshape(xshape).copy()
        v = y[nx:].reshape(vshape).copy()
        ts.append(t)
        xs.append(x)
        vs.append(v)
        if observer is not None:
            rec = observer(t, x, v)
            if rec is not None:
                recs.append(rec)

    stats = {"method": icfg.method, "dt": dt, "fast": P is not None, "steps": 0}
    sample(t0)
    span = icfg.t_end - t0
    if icfg.method == "rk4":
        n_full = int(math.floor(span / dt + 1e-9))
        rem = span - n_full * dt
        if rem <= 1e-9 * dt:
            rem = 0.0
        i = 0
        while i < n_full:
            k = min(icfg.sample_every, n_full - i)
            if P is not None:
                status, done = _fast.rk4_run(y, t0, i, dt, k, P)
                if status != _fast.STATUS_OK:
                    _raise_status(status, t0 + (i + done) * dt)
            else:
                for s in range(k):
                    t = t0 + (i + s) * dt
                    y = _guarded_step(f, t, y, dt)
            i += k
            stats["steps"] = i
            if i < n_full or rem == 0.0:
                sample(icfg.t_end if (i == n_full and rem == 0.0) else t0 + i * dt)
        if rem > 0.0:
            t = t0 + n_full * dt
            if P is not None:
                status, _ = _fast.rk4_run(y, t, 0, rem, 1, P)
                if status != _fast.STATUS_OK:
                    _raise_status(status, t)
            else:
                y = _guarded_step(f, t, y, rem)
            stats["steps"] += 1
            sample(icfg.t_end)
    else:
        interval = dt * icfg.sample_every
        h = dt
        t = t0
        m = 1
        accepted = rejected = 0
        while t < icfg.t_end:
            target = min(t0 + m * interval, icfg.t_end)
            if icfg.t_end - target < 1e-9 * interval:
                target = icfg.t_end
            if P is not None:
                status, t, h, acc, rej = _fast.dp45_run(y, t, target, h, icfg.rtol, icfg.atol, icfg.dt_min, P)
                accepted += acc
                rejected += rej
                if status != _fast.STATUS_OK:
                    _raise_status(status, t, h)
            else:
                try:
                    y, h, acc, rej = _dp45_py(f, y, t, target, h, icfg.rtol, icfg.atol, icfg.dt_min)
                    accepted += acc
                    rejected += rej
                except IntegrationError:
                    raise
                except FlockError as exc:
                    raise IntegrationError(str(exc), t) from exc
                t = target
            sample(t)
            m += 1
        stats.update(steps=accepted, rejected=rejected)
    return Trajectory(
        t=np.array(ts),
        x=np.array(xs),
        v=np.array(vs),
        records=recs if observer is not None else None,
        system=system,
        stats=stats,
    )


def _guarded_step(f, t, y, dt):
    try:
        y_new = _rk4_py(f, t, y, dt)
    except FlockError as exc:
        raise IntegrationError(str(exc), t) from exc
    if _blown(y_new):
        raise IntegrationError("state left the finite range", t)
    return y_new


def _raise_status(status, t, h=None):
    if status == _fast.STATUS_BLOWUP:
        raise IntegrationError("state left the finite range", t)
    if status == _fast.STATUS_DEGENERATE:
        raise IntegrationError("raw influence weight underflowed to zero", t)
    raise StiffnessError(_STIFF_HINT.format(h=h), t)
