"""Agent state, model ingredients and right-hand sides of the flocking model.

The velocity equation for agent ``i`` is

    dv_i/dt = (alpha_i / eps) * (vbar_i - v_i) + beta_i - c_i |v_i|^r v_i

with ``vbar_i = sum_j a_ij v_j`` a convex combination given by a strictly
positive, row-stochastic influence matrix, ``alpha_i = xi_i(vbar_i - v_i)``
a bounded gain and ``beta_i`` a steering acceleration. ``eps = 1`` and
``c = 0`` give the plain closed loop with steering.

Everything here is the readable NumPy reference path. The integrator
switches to the compiled kernels in :mod:`flocksteer._fast` when a
configuration only uses built-in rules; tests pin the two paths together.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DegenerateInfluenceError, DomainError

__all__ = [
    "SwarmState",
    "PowerKernel",
    "GaussianKernel",
    "Masking",
    "OrientationBias",
    "InfluenceRule",
    "OrientationMap",
    "GainRule",
    "NoSteering",
    "ConstantSteering",
    "DecayingSteering",
    "ScheduleSteering",
    "CircleTarget",
    "LinearTarget",
    "TrackingSteering",
    "FrictionRule",
    "ModelConfig",
    "OpenLoopSystem",
    "influence_matrix",
    "local_mean_velocity",
    "gain_vector",
    "rhs_closed",
    "rhs_open",
    "steering_eval",
]


def _points(a, name):
    arr = np.array(a, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DomainError(f"{name} must be an N x d array with N, d >= 1, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def _per_agent(value, n, name):
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        return np.full(n, float(arr))
    if arr.shape != (n,):
        raise DomainError(f"{name} must be a scalar or have length {n}, got shape {arr.shape}")
    return arr.copy()


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SwarmState:
    """Positions and velocities of ``N`` agents in ``d`` dimensions at time ``t``."""

    t: float
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = _points(self.x, "x")
        v = _points(self.v, "v")
        if x.shape != v.shape:
            raise DomainError(f"x and v shapes differ: {x.shape} vs {v.shape}")
        if not np.isfinite(self.t):
            raise DomainError("t must be finite")
        object.__setattr__(self, "t", float(self.t))
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "v", _frozen(v))

    @property
    def n_agents(self):
        return self.x.shape[0]

    @property
    def dim(self):
        return self.x.shape[1]


# ---------------------------------------------------------------------------
# Influence ingredients
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerKernel:
    """``phi(r) = K / (a^2 + r^2)^beta``, the Cucker-Smale family."""

    K: float = 1.0
    a: float = 1.0
    beta: float = 0.3

    code = 0

    def __post_init__(self):
        if not (self.K > 0 and self.a > 0 and self.beta >= 0):
            raise DomainError("PowerKernel needs K > 0, a > 0, beta >= 0")

    def of_r2(self, r2):
        return self.K * (self.a**2 + np.asarray(r2, dtype=float)) ** (-self.beta)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.of_r2(r * r)

    def fast_params(self):
        return np.array([self.K, self.a**2, self.beta])


@dataclass(frozen=True)
class GaussianKernel:
    """``phi(r) = K exp(-(r / length)^2)``."""

    K: float = 1.0
    length: float = 1.0

    code = 1

    def __post_init__(self):
        if not (self.K > 0 and self.length > 0):
            raise DomainError("GaussianKernel needs K > 0 and length > 0")

    def of_r2(self, r2):
        return self.K * np.exp(-np.asarray(r2, dtype=float) / self.length**2)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return self.of_r2(r * r)

    def fast_params(self):
        return np.array([self.K, self.length**2, 0.0])


@dataclass(frozen=True)
class Masking:
    """Line-of-sight attenuation of ``j``'s influence on ``i`` by third agents.

    ``m_ij = prod_{l != i, j} (1 - kappa * exp(-s_l^2 / width^2))`` where
    ``s_l`` is a smoothed distance from ``x_l`` to the segment ``[x_i, x_j]``.
    The projection parameter is clamped with a softplus difference of
    sharpness ``1 / smoothing`` and ``s_l^2`` carries an additive
    ``smoothing^2`` so the factor stays C^1 at coincident agents. ``m_ii = 1``.
    """

    kappa: float = 0.5
    width: float = 1.0
    smoothing: float = 0.05

    def __post_init__(self):
        if not 0 <= self.kappa < 1:
            raise DomainError("masking kappa must lie in [0, 1)")
        if not (self.width > 0 and self.smoothing > 0):
            raise DomainError("masking width and smoothing must be positive")

    def floor(self, n):
        return (1.0 - self.kappa) ** max(n - 2, 0)


@dataclass(frozen=True)
class OrientationBias:
    """Field-of-view weighting ``g(c) = (1 + eta c) / (1 + eta)``.

    ``c = <sigma_i(v_i), (x_j - x_i) / sqrt(|x_j - x_i|^2 + delta^2)>``.
    """

    eta: float = 0.5
    delta: float = 0.05

    def __post_init__(self):
        if not 0 <= self.eta < 1:
            raise DomainError("orientation eta must lie in [0, 1)")
        if not self.delta > 0:
            raise DomainError("orientation delta must be positive")

    def floor(self):
        return (1.0 - self.eta) / (1.0 + self.eta)


@dataclass(frozen=True)
class InfluenceRule:
    kernel: PowerKernel | GaussianKernel = field(default_factory=PowerKernel)
    masking: Masking | None = None
    orientation: OrientationBias | None = None

    def modifier_floor(self, n):
        f = 1.0
        if self.masking is not None:
            f *= self.masking.floor(n)
        if self.orientation is not None:
            f *= self.orientation.floor()
        return f


@dataclass(frozen=True)
class OrientationMap:
    """Heading map ``sigma_i(u) = u / sqrt(|u|^2 + b_i^2)`` into the closed unit ball."""

    b: float | np.ndarray = 1.0

    def __post_init__(self):
        b = np.asarray(self.b, dtype=float)
        if np.any(b == 0) or not np.all(np.isfinite(b)):
            raise DomainError("orientation parameter b must be finite and nonzero")

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        if v.ndim == 1:
            b = float(np.ravel(self.b)[0])
            return v / np.sqrt(v @ v + b**2)
        b = _per_agent(self.b, v.shape[0], "b")
        return v / np.sqrt(np.sum(v * v, axis=1) + b**2)[:, None]


@dataclass(frozen=True)
class GainRule:
    """Gain ``xi_i(u) = A / (offset_i + |u|^2)^power``.

    ``power = 0.5`` is the bounded default with ``xi(u) |u| < A``. ``power = 0``
    is a constant gain ``A`` (no acceleration bound), mostly useful for tests
    against linear closed forms.
    """

    A: float = 1.0
    offset: float | np.ndarray = 1.0
    power: float = 0.5

    def __post_init__(self):
        off = np.asarray(self.offset, dtype=float)
        if not self.A > 0 or np.any(off <= 0) or self.power < 0:
            raise DomainError("GainRule needs A > 0, offset > 0, power >= 0")

    @classmethod
    def constant(cls, alpha):
        return cls(A=alpha, offset=1.0, power=0.0)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        if u.ndim == 1:
            off = float(np.asarray(self.offset, dtype=float).ravel()[0])
            return self.A / (off + u @ u) ** self.power
        off = _per_agent(self.offset, u.shape[0], "offset")
        return self.A / (off + np.sum(u * u, axis=1)) ** self.power

    def at_zero(self, n):
        return self.A / _per_agent(self.offset, n, "offset") ** self.power

    def min_on_ball(self, radius, n):
        """Minimum of every ``xi_i`` over ``|u| <= radius`` (radial, nonincreasing)."""
        return float(np.min(self.A / (_per_agent(self.offset, n, "offset") + radius**2) ** self.power))

    def acceleration_bound(self, n=1):
        """``sup_u xi_i(u) |u|`` over all agents; ``inf`` when unbounded."""
        p = self.power
        if p < 0.5:
            return np.inf
        if p == 0.5:
            return float(self.A)
        off = _per_agent(self.offset, n, "offset")
        s2 = off / (2 * p - 1)
        return float(np.max(self.A * np.sqrt(s2) / (off + s2) ** p))


# ---------------------------------------------------------------------------
# Steering and friction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NoSteering:
    code = 0

    def __call__(self, t, x, v):
        return np.zeros_like(np.asarray(x, dtype=float))

    def diameter_integral(self):
        return 0.0


@dataclass(frozen=True)
class ConstantSteering:
    """Open-loop ``beta_i(t) = B_i``."""

    B: np.ndarray

    code = 1

    def __post_init__(self):
        object.__setattr__(self, "B", _frozen(_points(self.B, "B")))

    def __call__(self, t, x, v):
        return np.array(self.B)

    def diameter_integral(self):
        diffs = self.B[:, None, :] - self.B[None, :, :]
        return 0.0 if np.all(diffs == 0) else np.inf


@dataclass(frozen=True)
class DecayingSteering:
    """Open-loop ``beta_i(t) = B_i exp(-rate t)``; its steering diameter integrates to ``diam(B) / rate``."""

    B: np.ndarray
    rate: float = 1.0

    code = 2

    def __post_init__(self):
        object.__setattr__(self, "B", _frozen(_points(self.B, "B")))
        if not self.rate > 0:
            raise DomainError("decay rate must be positive")

    def __call__(self, t, x, v):
        return self.B * np.exp(-self.rate * t)

    def diameter_integral(self):
        diffs = self.B[:, None, :] - self.B[None, :, :]
        return float(np.max(np.sqrt(np.sum(diffs**2, axis=-1)))) / self.rate


@dataclass(frozen=True)
class ScheduleSteering:
    """Arbitrary open-loop schedule ``t -> (N, d)`` array. Not compiled."""

    func: Callable[[float], np.ndarray]

    code = None

    def __call__(self, t, x, v):
        return np.asarray(self.func(t), dtype=float)

    def diameter_integral(self):
        return None


@dataclass(frozen=True)
class CircleTarget:
    """``y(t) = center + radius * (sin(omega t), cos(omega t))`` in the plane."""

    center: tuple = (100.0, 10.0)
    radius: float = 10.0
    omega: float = 0.1

    code = 0

    def position(self, t):
        c = np.asarray(self.center, dtype=float)
        return c + self.radius * np.array([np.sin(self.omega * t), np.cos(self.omega * t)])

    def velocity(self, t):
        w = self.radius * self.omega
        return w * np.array([np.cos(self.omega * t), -np.sin(self.omega * t)])

    @property
    def dim(self):
        return 2

    def fast_params(self):
        c = np.asarray(self.center, dtype=float)
        return np.array([c[0], c[1], self.radius, self.omega])


@dataclass(frozen=True)
class LinearTarget:
    """``y(t) = origin + velocity * t``."""

    origin: tuple
    velocity_vec: tuple

    code = 1

    def position(self, t):
        return np.asarray(self.origin, dtype=float) + t * np.asarray(self.velocity_vec, dtype=float)

    def velocity(self, t):
        return np.asarray(self.velocity_vec, dtype=float)

    @property
    def dim(self):
        return len(self.origin)

    def fast_params(self):
        return np.concatenate([np.asarray(self.origin, float), np.asarray(self.velocity_vec, float)])


@dataclass(frozen=True)
class TrackingSteering:
    """Feedback ``beta_i = gamma1 (y'(t) - v_i) + gamma2 (y(t) - x_i)`` toward a shared target."""

    gamma1: float = 2.0
    gamma2: float = 0.1
    target: CircleTarget | LinearTarget = field(default_factory=CircleTarget)

    code = 3

    def __call__(self, t, x, v):
        y = self.target.position(t)
        yd = self.target.velocity(t)
        return self.gamma1 * (yd - np.asarray(v, float)) + self.gamma2 * (y - np.asarray(x, float))

    def diameter_integral(self):
        return None


@dataclass(frozen=True)
class FrictionRule:
    """Friction acceleration ``-c_i |v_i|^r v_i``."""

    c: float | np.ndarray = 0.0
    r: float = 1.0

    def __post_init__(self):
        if np.any(np.asarray(self.c, dtype=float) < 0) or self.r < 0:
            raise DomainError("friction needs c >= 0 and r >= 0")

    def active(self):
        return bool(np.any(np.asarray(self.c, dtype=float) > 0))

    def __call__(self, v):
        v = np.asarray(v, dtype=float)
        c = _per_agent(self.c, v.shape[0], "c")
        speed = np.sqrt(np.sum(v * v, axis=1))
        return -(c * speed**self.r)[:, None] * v


# ---------------------------------------------------------------------------
# Core operations
# ---------------------------------------------------------------------------


def _softplus(z, k):
    return np.logaddexp(0.0, k * z) / k


def _masking_factor(x, mask):
    n = x.shape[0]
    if n < 3:
        return np.ones((n, n))
    e = x[None, :, :] - x[:, None, :]  # e[i, j] = x_j - x_i
    e2 = np.sum(e * e, axis=-1)
    w = x[None, None, :, :] - x[:, None, None, :]  # w[i, ., l] = x_l - x_i
    proj = np.einsum("ijd,ild->ijl", e, w[:, 0]) / (e2 + mask.smoothing**2)[:, :, None]
    k = 1.0 / mask.smoothing
    tc = _softplus(proj, k) - _softplus(proj - 1.0, k)
    resid = w - tc[..., None] * e[:, :, None, :]
    s2 = np.sum(resid * resid, axis=-1) + mask.smoothing**2
    f = 1.0 - mask.kappa * np.exp(-s2 / mask.width**2)
    idx = np.arange(n)
    f[idx, :, idx] = 1.0  # l == i
    f[:, idx, idx] = 1.0  # l == j
    m = np.prod(f, axis=2)
    m[idx, idx] = 1.0
    return m


def _orientation_factor(x, v, bias, orient):
    sig = orient(v)
    e = x[None, :, :] - x[:, None, :]
    r2 = np.sum(e * e, axis=-1)
    c = np.einsum("id,ijd->ij", sig, e) / np.sqrt(r2 + bias.delta**2)
    return (1.0 + bias.eta * c) / (1.0 + bias.eta)


def influence_matrix(x, v, rule, orient=None):
    """Row-stochastic influence matrix ``a_ij``.

    Raw weights ``phi(|x_j - x_i|) * m_ij * g_ij`` (self-weight included) are
    divided by their row sums.

    Raises
    ------
    DomainError
        Non-finite or mis-shaped input.
    DegenerateInfluenceError
        A raw weight underflowed to zero.
    """
    x = _points(x, "x")
    v = _points(v, "v")
    if x.shape != v.shape:
        raise DomainError(f"x and v shapes differ: {x.shape} vs {v.shape}")
    diff = x[None, :, :] - x[:, None, :]
    w = rule.kernel.of_r2(np.sum(diff * diff, axis=-1))
    if rule.masking is not None:
        w = w * _masking_factor(x, rule.masking)
    if rule.orientation is not None:
        w = w * _orientation_factor(x, v, rule.orientation, orient or OrientationMap())
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise DegenerateInfluenceError("raw influence weight underflowed to zero")
    return w / w.sum(axis=1, keepdims=True)


def local_mean_velocity(A, v):
    A = np.asarray(A, dtype=float)
    v = np.asarray(v, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1] or v.ndim != 2 or v.shape[0] != A.shape[1]:
        raise DomainError(f"dimension mismatch: A {A.shape}, v {v.shape}")
    return A @ v


def gain_vector(vbar, v, rule):
    """``alpha_i = xi_i(vbar_i - v_i)``."""
    return rule(np.asarray(vbar, float) - np.asarray(v, float))


def steering_eval(rule, x_i, v_i, t, i=0):
    """Steering acceleration of agent ``i`` at position ``x_i`` and velocity ``v_i``.

    Feedback rules use ``x_i`` and ``v_i``; open-loop schedules ignore them
    and return row ``i`` of the schedule.
    """
    x_i = np.atleast_1d(np.asarray(x_i, dtype=float))
    v_i = np.atleast_1d(np.asarray(v_i, dtype=float))
    if isinstance(rule, TrackingSteering):
        return rule(t, x_i, v_i)
    if isinstance(rule, NoSteering):
        return np.zeros_like(x_i)
    B = getattr(rule, "B", None)
    template = np.zeros_like(B) if B is not None else None
    return np.asarray(rule(t, template, template), dtype=float)[i]


@dataclass(frozen=True)
class ModelConfig:
    """Closed-loop model: influence, gain, steering, friction and timescale ratio ``eps``."""

    n_agents: int
    dim: int
    influence: InfluenceRule = field(default_factory=InfluenceRule)
    gain: GainRule = field(default_factory=GainRule)
    steering: object = field(default_factory=NoSteering)
    friction: FrictionRule = field(default_factory=FrictionRule)
    orientation_map: OrientationMap = field(default_factory=OrientationMap)
    eps: float = 1.0

    def __post_init__(self):
        if self.n_agents < 1 or self.dim < 1:
            raise DomainError("need n_agents >= 1 and dim >= 1")
        if not (self.eps > 0 and np.isfinite(self.eps)):
            raise DomainError("eps must be positive and finite")
        n = self.n_agents
        _per_agent(self.gain.offset, n, "gain.offset")
        _per_agent(self.friction.c, n, "friction.c")
        _per_agent(self.orientation_map.b, n, "orientation_map.b")
        B = getattr(self.steering, "B", None)
        if B is not None and B.shape != (n, self.dim):
            raise DomainError(f"steering B must have shape {(n, self.dim)}, got {B.shape}")
        target = getattr(self.steering, "target", None)
        if target is not None and target.dim != self.dim:
            raise DomainError(f"target dimension {target.dim} does not match dim={self.dim}")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def parts(self, t, x, v):
        """Influence matrix, effective gains ``alpha_i / eps`` and steering at one instant."""
        A = influence_matrix(x, v, self.influence, self.orientation_map)
        alpha = gain_vector(A @ v, v, self.gain)
        beta = np.asarray(self.steering(t, x, v), dtype=float)
        return A, alpha / self.eps, beta

    def rhs(self, t, x, v):
        A, alpha_eff, beta = self.parts(t, x, v)
        dv = alpha_eff[:, None] * (A @ v - v) + beta
        if self.friction.active():
            dv = dv + self.friction(v)
        return np.array(v, dtype=float), dv

    def fast_params(self):
        """Arguments for the compiled right-hand side, or ``None`` when a rule is Python-only."""
        from . import _fast

        return _fast.pack(self)


def rhs_closed(state, cfg):
    """Time derivative ``(dx/dt, dv/dt)`` of the closed loop with steering and friction."""
    if not isinstance(state, SwarmState):
        raise DomainError("rhs_closed expects a SwarmState")
    if state.x.shape != (cfg.n_agents, cfg.dim):
        raise DomainError(f"state shape {state.x.shape} does not match config {(cfg.n_agents, cfg.dim)}")
    return cfg.rhs(state.t, state.x, state.v)


@dataclass(frozen=True)
class OpenLoopSystem:
    """Open loop with gains ``alpha(t)``, influence ``a(t)`` and steering ``beta(t)`` given as schedules.

    ``alpha`` maps ``t`` to ``N`` nonnegative gains, ``influence`` maps ``t`` to
    an ``N x N`` row-stochastic matrix with nonnegative entries and ``steering``
    maps ``t`` to an ``N x d`` array (or is ``None`` for no steering).
    """

    n_agents: int
    dim: int
    alpha: Callable[[float], np.ndarray]
    influence: Callable[[float], np.ndarray]
    steering: Callable[[float], np.ndarray] | None = None
    friction: FrictionRule = field(default_factory=FrictionRule)
    stochastic_tol: float = 1e-12

    def parts(self, t, x, v):
        A = np.asarray(self.influence(t), dtype=float)
        n = self.n_agents
        if A.shape != (n, n):
            raise DomainError(f"influence schedule must be {n} x {n}, got {A.shape}")
        if np.any(A < 0) or np.any(np.abs(A.sum(axis=1) - 1.0) > self.stochastic_tol):
            raise DomainError("influence schedule is not row-stochastic with nonnegative entries")
        alpha = np.broadcast_to(np.asarray(self.alpha(t), dtype=float), (n,)).copy()
        if np.any(alpha < 0):
            raise DomainError("open-loop gains must be nonnegative")
        if self.steering is None:
            beta = np.zeros((n, self.dim))
        else:
            beta = np.broadcast_to(np.asarray(self.steering(t), dtype=float), (n, self.dim)).copy()
        return A, alpha, beta

    def rhs(self, t, x, v):
        A, alpha, beta = self.parts(t, x, v)
        dv = alpha[:, None] * (A @ v - v) + beta
        if self.friction.active():
            dv = dv + self.friction(v)
        return np.array(v, dtype=float), dv

    def fast_params(self):
        return None


def rhs_open(state, system):
    """Time derivative of the open loop for the supplied schedules."""
    x = _points(state.x, "x")
    v = _points(state.v, "v")
    return system.rhs(state.t, x, v)
