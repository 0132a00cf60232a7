"""Flocking diagnostics: diameters, active sets, influence and gain floors,
the flocking certificate, contraction and energy monitors, and two exact
oracles for the inequalities the contraction argument rests on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .errors import DomainError, SamplingError
from .model import (
    DecayingSteering,
    GainRule,
    ModelConfig,
    NoSteering,
    OpenLoopSystem,
    SwarmState,
    _points,
)

__all__ = [
    "DiameterSample",
    "diameter",
    "diameters",
    "ActiveSetReport",
    "active_sets",
    "psi_lower_bound",
    "alpha_lower_bound",
    "FlockingCertificate",
    "flocking_certificate",
    "velocity_envelope",
    "ThetaPolicy",
    "DiagnosticsRecord",
    "DiagnosticsObserver",
    "ContractionReport",
    "monitor_contraction",
    "EnergyReport",
    "energy_decay_check",
    "maximal_action_oracle",
    "hull_support_oracle",
]

VERDICTS = ("unconditional", "conditional-satisfied", "conditional-violated", "inconclusive")


# ---------------------------------------------------------------------------
# Diameters and active sets
# ---------------------------------------------------------------------------


def diameter(points):
    """Largest pairwise Euclidean distance and the lexicographically smallest pair achieving it.

    A single point has diameter 0 with pair ``(0, 0)``.
    """
    p = _points(points, "points")
    n = p.shape[0]
    if n == 1:
        return 0.0, (0, 0)
    diff = p[:, None, :] - p[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    iu = np.triu_indices(n, 1)
    vals = dist[iu]
    k = int(np.argmax(vals))  # first maximum in row-major order
    return float(vals[k]), (int(iu[0][k]), int(iu[1][k]))


@dataclass(frozen=True)
class DiameterSample:
    t: float
    d_X: float
    d_V: float
    d_beta: float
    pair_X: tuple
    pair_V: tuple
    pair_beta: tuple


def diameters(state, beta=None):
    """Position, velocity and steering diameters of ``state``; ``beta=None`` means no steering."""
    dX, pX = diameter(state.x)
    dV, pV = diameter(state.v)
    if beta is None:
        dB, pB = 0.0, (0, 0) if state.n_agents == 1 else (0, 1)
    else:
        beta = _points(beta, "beta")
        if beta.shape != state.x.shape:
            raise DomainError(f"beta shape {beta.shape} does not match state {state.x.shape}")
        dB, pB = diameter(beta)
    return DiameterSample(state.t, dX, dV, dB, pX, pV, pB)


@dataclass(frozen=True)
class ActiveSetReport:
    """Threshold sets of an influence matrix.

    ``membership[p, j]`` is ``a_pj >= theta``; ``pair_counts[p, q]`` is the
    size of the common active set of ``p`` and ``q``.
    """

    theta: float
    membership: np.ndarray
    pair_counts: np.ndarray
    global_set: frozenset

    def agent_set(self, p):
        return frozenset(np.flatnonzero(self.membership[p]).tolist())

    def pair_set(self, p, q):
        return frozenset(np.flatnonzero(self.membership[p] & self.membership[q]).tolist())

    @property
    def count(self):
        return len(self.global_set)


def active_sets(A, theta):
    """Active sets of ``A`` at level ``theta`` in ``(0, 1]``."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DomainError(f"A must be square, got shape {A.shape}")
    if not 0 < theta <= 1:
        raise DomainError(f"theta must lie in (0, 1], got {theta}")
    M = A >= theta
    Mi = M.astype(np.int64)
    glob = frozenset(np.flatnonzero(np.all(M, axis=0)).tolist())
    return ActiveSetReport(float(theta), M, Mi @ Mi.T, glob)


# ---------------------------------------------------------------------------
# Floors for influence weights and gains
# ---------------------------------------------------------------------------


def psi_lower_bound(rule, n, r):
    """Certified lower bound on every normalized influence weight when all distances are at most ``r``.

    ``phi(r) / ((n - 1) phi(0) + phi(r))`` times the masking and orientation
    floors. Nonincreasing in ``r`` because the kernel is.
    """
    if n < 1:
        raise DomainError("n must be >= 1")
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise DomainError("r must be nonnegative")
    p0 = float(rule.kernel(0.0))
    pr = rule.kernel(r)
    out = pr / ((n - 1) * p0 + pr) * rule.modifier_floor(n)
    return float(out) if out.ndim == 0 else out


def alpha_lower_bound(rule, M, n=1):
    """Minimum of every gain over the ball ``|u| <= M``.

    Radial rules expose ``min_on_ball``. Returns ``None`` when no minimizer is
    available, which callers treat as inconclusive.
    """
    if M < 0:
        raise DomainError("M must be nonnegative")
    if isinstance(rule, GainRule):
        if np.ndim(rule.offset) == 1:
            n = len(rule.offset)
        return rule.min_on_ball(M, n)
    finder = getattr(rule, "min_on_ball", None)
    return None if finder is None else float(finder(M, n))


# ---------------------------------------------------------------------------
# Flocking certificate
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FlockingCertificate:
    """Outcome of the initial-diameter flocking test.

    The velocity diameter obeys ``d/dt d_V <= -rate_floor(d_X) d_V + d_beta``
    with ``rate_floor(r) = alpha_lower * n_agents * psi(r)``. Integrating it
    against ``d/dt d_X <= d_V`` bounds ``d_X`` by ``d_star`` whenever
    ``lhs = d_V0 + steering_integral`` is below ``alpha_lower * n_agents *
    psi_integral``. That requirement also implies the weaker form with
    ``n_agents**2`` in place of ``n_agents``.

    ``psi_integral`` is ``inf`` when the tail diverges, otherwise the
    quadrature over ``[d_X0, r_max]``; ``tail_estimate`` is the fitted
    power-law tail beyond ``r_max``.
    """

    verdict: str
    d_X0: float
    d_V0: float
    steering_integral: float | None
    lhs: float | None
    alpha_lower: float | None
    n_agents: int
    tail_exponent: float
    tail_class: str
    psi_integral: float
    quad_error: float
    tail_estimate: float
    r_max: float
    d_star: float | None
    rate: float | None
    notes: tuple = field(default_factory=tuple)

    def as_dict(self):
        return {
            "verdict": self.verdict,
            "d_X0": self.d_X0,
            "d_V0": self.d_V0,
            "steering_integral": self.steering_integral,
            "lhs": self.lhs,
            "alpha_lower": self.alpha_lower,
            "n_agents": self.n_agents,
            "tail_exponent": self.tail_exponent,
            "tail_class": self.tail_class,
            "psi_integral": self.psi_integral,
            "quad_error": self.quad_error,
            "tail_estimate": self.tail_estimate,
            "r_max": self.r_max,
            "d_star": self.d_star,
            "rate": self.rate,
            "notes": list(self.notes),
        }


def _tail_fit(psi, R):
    """Log-log slope of ``psi`` on ``[R, 10 R]`` and the power-law tail estimate beyond ``R``."""
    r = np.geomspace(R, 10 * R, 21)
    vals = psi(r)
    if np.any(vals <= 0):
        return -np.inf, 0.0
    slope = float(np.polyfit(np.log(r), np.log(vals), 1)[0])
    if slope >= -1:
        return slope, np.inf
    return slope, float(vals[0] * R / (-slope - 1))


def _psi_integral(psi, a, b):
    """``int_a^b psi`` via the log substitution; returns ``(value, abs_error)``."""
    if b <= a:
        return 0.0, 0.0
    lo = math.log(max(a, 1e-300)) if a > 0 else None
    total = err = 0.0
    if lo is None:
        # split off [0, 1e-6 * b] so the log map starts from a positive point
        a1 = 1e-6 * b
        v, e = quad(psi, 0.0, a1, limit=200)
        total, err = v, e
        a, lo = a1, math.log(a1)
    v, e = quad(lambda s: psi(math.exp(s)) * math.exp(s), lo, math.log(b), limit=400, epsabs=0.0, epsrel=1e-10)
    return total + v, err + e


def flocking_certificate(initial, cfg, steering_integral=None, steering_sup_decay=None, margin=0.05):
    """Decide whether the initial diameters guarantee flocking.

    Parameters
    ----------
    initial : SwarmState
    cfg : ModelConfig
    steering_integral : float, optional
        ``int_0^inf d_beta``. Defaults to the steering rule's own value when it
        has one (``None`` for feedback and schedules, which makes the verdict
        inconclusive).
    steering_sup_decay : bool, optional
        Assert that ``d_beta(t) -> 0``. Defaults to ``True`` for rules where
        this is structural (no steering, exponential decay).
    margin : float
        Dead band around the critical tail exponent -1.

    Returns
    -------
    FlockingCertificate
        ``conditional-satisfied`` and ``unconditional`` are only returned when
        the numbers recorded in the certificate prove them.
    """
    notes = []
    n = cfg.n_agents
    ds = diameters(initial)
    dX0, dV0 = ds.d_X, ds.d_V
    if steering_integral is None:
        steering_integral = cfg.steering.diameter_integral()
        if steering_integral is None:
            notes.append("steering diameter integral unknown for this rule")
    elif steering_integral < 0:
        raise DomainError("steering_integral must be nonnegative")
    if steering_sup_decay is None:
        steering_sup_decay = isinstance(cfg.steering, (NoSteering, DecayingSteering)) or steering_integral == 0.0
    usable = steering_integral is not None and math.isfinite(steering_integral)
    if steering_integral is not None and not usable:
        notes.append("steering diameter is not integrable")
    if usable and steering_integral > 0 and not steering_sup_decay:
        notes.append("steering diameter not asserted to vanish")
        usable = False
    if cfg.friction.active():
        notes.append("friction terms are outside the certificate")
        usable = False

    def psi(r):
        return psi_lower_bound(cfg.influence, n, r)

    R = 1e3 * (dX0 if dX0 > 0 else 1.0)
    slope, tail = _tail_fit(psi, R)
    if slope > -1 + margin:
        tail_class = "divergent"
    elif slope < -1 - margin:
        tail_class = "convergent"
    else:
        tail_class = "boundary"
        notes.append(f"tail exponent {slope:.4g} within {margin} of -1")
    I, qerr = _psi_integral(psi, dX0, R)
    if tail_class == "divergent":
        I_total = math.inf
    else:
        I_total = I

    lhs = dV0 + steering_integral if usable else None
    a_lo = None
    if lhs is not None:
        a_lo = alpha_lower_bound(cfg.gain, lhs, n)
        if a_lo is None:
            notes.append("gain rule has no certified minimum")
        else:
            a_lo = a_lo / cfg.eps

    verdict = "inconclusive"
    if lhs is not None and a_lo is not None:
        k = a_lo * n
        if tail_class == "divergent":
            verdict = "unconditional"
        elif lhs < k * (I - qerr):
            verdict = "conditional-satisfied"
        elif tail_class == "convergent" and lhs >= k * (I + qerr + 2 * tail):
            verdict = "conditional-violated"

    d_star = rate = None
    if verdict in ("unconditional", "conditional-satisfied"):
        d_star = _solve_d_star(psi, dX0, lhs, a_lo * n, R)
        if d_star is not None and math.isfinite(d_star):
            rate = a_lo * n * psi(d_star)
    return FlockingCertificate(
        verdict=verdict,
        d_X0=dX0,
        d_V0=dV0,
        steering_integral=steering_integral,
        lhs=lhs,
        alpha_lower=a_lo,
        n_agents=n,
        tail_exponent=slope,
        tail_class=tail_class,
        psi_integral=I_total,
        quad_error=qerr,
        tail_estimate=tail,
        r_max=R,
        d_star=d_star,
        rate=rate,
        notes=tuple(notes),
    )


def _solve_d_star(psi, dX0, lhs, k, R):
    """Smallest ``d >= dX0`` with ``k * int_{dX0}^d psi = lhs`` (unique since psi > 0)."""
    if lhs == 0:
        return dX0

    def F(d):
        return k * _psi_integral(psi, dX0, d)[0] - lhs

    hi = R
    while F(hi) <= 0:
        hi *= 10
        if hi > 1e300:
            return math.inf
    return brentq(F, dX0, hi, xtol=1e-12 * max(1.0, dX0), rtol=1e-14)


def velocity_envelope(cert, t, d_beta=None):
    """Exponential envelope ``e^{-rate t} d_V0 + int_0^t e^{-rate (t - s)} d_beta(s) ds``.

    ``d_beta`` holds samples on the grid ``t``; trapezoid rule, which is
    exact for zero steering.
    """
    if cert.rate is None:
        raise DomainError("certificate carries no contraction rate")
    t = np.asarray(t, dtype=float)
    env = cert.d_V0 * np.exp(-cert.rate * t)
    if d_beta is None:
        return env
    d_beta = np.asarray(d_beta, dtype=float)
    forced = np.zeros_like(t)
    for k in range(1, len(t)):
        h = t[k] - t[k - 1]
        decay = math.exp(-cert.rate * h)
        forced[k] = forced[k - 1] * decay + 0.5 * h * (d_beta[k - 1] * decay + d_beta[k])
    return env + forced


# ---------------------------------------------------------------------------
# Sampling observer and monitors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThetaPolicy:
    """Choice of active-set threshold at each sample.

    ``fixed``: ``value``. ``psi``: the influence floor at the current
    position diameter. ``min_entry``: smallest entry of the influence matrix,
    so every agent is active. ``uniform``: ``value / N``.
    """

    kind: str = "psi"
    value: float | None = None

    def __post_init__(self):
        if self.kind not in ("fixed", "psi", "min_entry", "uniform"):
            raise DomainError(f"unknown theta policy {self.kind!r}")
        if self.kind in ("fixed", "uniform") and not (self.value is not None and self.value > 0):
            raise DomainError(f"theta policy {self.kind!r} needs a positive value")

    def __call__(self, A, d_X, rule=None):
        n = A.shape[0]
        if self.kind == "fixed":
            return float(self.value)
        if self.kind == "uniform":
            return float(self.value) / n
        if self.kind == "min_entry" or rule is None:
            return float(np.min(A))
        return psi_lower_bound(rule, n, d_X)


@dataclass(frozen=True)
class DiagnosticsRecord:
    """Per-sample diagnostics; ``min_alpha`` is the smallest effective gain ``alpha_i / eps``."""

    t: float
    d_X: float
    d_V: float
    d_beta: float
    lambda_global: int
    min_alpha: float
    energy: float

    FIELDS = ("d_X", "d_V", "d_beta", "lambda_global", "min_alpha", "energy")

    def values(self):
        return [getattr(self, f) for f in self.FIELDS]


class DiagnosticsObserver:
    """Integrator observer that turns each sample into a :class:`DiagnosticsRecord`."""

    def __init__(self, system, theta=ThetaPolicy()):
        self.system = system
        self.theta = theta

    def __call__(self, t, x, v):
        A, alpha, beta = self.system.parts(t, x, v)
        ds = diameters(SwarmState(t, x, v), beta)
        rule = getattr(self.system, "influence", None)
        theta = self.theta(A, ds.d_X, rule if not callable(rule) else None)
        lam = active_sets(A, min(max(theta, np.finfo(float).tiny), 1.0)).count
        energy = 0.5 * float(np.max(np.sum(np.asarray(v) ** 2, axis=1)))
        return DiagnosticsRecord(t, ds.d_X, ds.d_V, ds.d_beta, lam, float(np.min(alpha)), energy)


@dataclass(frozen=True)
class ContractionReport:
    """Worst margins of the two diameter inequalities over interior samples.

    A margin is ``bound - finite_difference_derivative``; the check passes when
    every margin is at least ``-tol``.
    """

    n_checked: int
    worst_margin_x: float
    worst_margin_v: float
    t_worst_x: float
    t_worst_v: float
    tol_x: float
    tol_v: float

    @property
    def ok(self):
        return self.worst_margin_x >= -self.tol_x and self.worst_margin_v >= -self.tol_v


def monitor_contraction(traj, theta=ThetaPolicy(), system=None, max_spacing=1e-2):
    """Check ``d/dt d_X <= d_V`` and ``d/dt d_V <= -alpha_0 lam_pq^2 theta^2 d_V + d_beta``.

    ``alpha_0`` is the smallest effective gain, ``lam_pq`` the size of the
    common active set of the pair spanning the velocity diameter. Derivatives
    are centered differences; each inequality gets ``tol = 10 * max |second
    difference|`` of its diameter to absorb truncation error and kinks where
    the spanning pair switches.

    Raises
    ------
    SamplingError
        Fewer than three samples or a spacing above ``max_spacing``.
    """
    system = system if system is not None else traj.system
    t = np.asarray(traj.t, dtype=float)
    if len(t) < 3:
        raise SamplingError("need at least three samples")
    h = np.diff(t)
    if np.max(h) > max_spacing * (1 + 1e-9):
        raise SamplingError(f"sample spacing {np.max(h):.3g} exceeds {max_spacing:.3g}")
    rule = getattr(system, "influence", None)
    rule = None if callable(rule) else rule
    dX = np.empty(len(t))
    dV = np.empty(len(t))
    bound_v = np.empty(len(t))
    for k in range(len(t)):
        A, alpha, beta = system.parts(t[k], traj.x[k], traj.v[k])
        ds = diameters(SwarmState(t[k], traj.x[k], traj.v[k]), beta)
        th = min(theta(A, ds.d_X, rule), 1.0)
        p, q = ds.pair_V
        lam = int(np.sum((A[p] >= th) & (A[q] >= th)))
        dX[k], dV[k] = ds.d_X, ds.d_V
        bound_v[k] = -float(np.min(alpha)) * lam**2 * th**2 * ds.d_V + ds.d_beta
    span = t[2:] - t[:-2]
    der_x = (dX[2:] - dX[:-2]) / span
    der_v = (dV[2:] - dV[:-2]) / span
    mx = dV[1:-1] - der_x
    mv = bound_v[1:-1] - der_v
    tol_x = 10.0 * float(np.max(np.abs(_second_difference(dX))))
    tol_v = 10.0 * float(np.max(np.abs(_second_difference(dV))))
    kx, kv = int(np.argmin(mx)), int(np.argmin(mv))
    return ContractionReport(len(mx), float(mx[kx]), float(mv[kv]), float(t[kx + 1]), float(t[kv + 1]), tol_x, tol_v)


def _second_difference(d):
    return d[2:] - 2.0 * d[1:-1] + d[:-2]


@dataclass(frozen=True)
class EnergyReport:
    """``energy = max_i |v_i|^2 / 2`` against the friction decay bound."""

    t: np.ndarray
    energy: np.ndarray
    bound: np.ndarray
    max_increase: float
    max_excess: float
    tol: float

    @property
    def monotone(self):
        return self.max_increase <= self.tol

    @property
    def within_bound(self):
        return self.max_excess <= self.tol

    @property
    def ok(self):
        return self.monotone and self.within_bound


def energy_decay_check(traj, friction, tol=1e-6):
    """Check that kinetic energy decays under friction at least as fast as the power-law bound.

    Bound: ``(E0^(-r/2) + 2^(r/2) r c_min t)^(-2/r)``.

    Raises
    ------
    DomainError
        Some ``c_i = 0``, ``r = 0`` or the trajectory carries steering.
    """
    n = traj.x.shape[1]
    c = np.broadcast_to(np.asarray(friction.c, dtype=float), (n,))
    if np.any(c <= 0) or not friction.r > 0:
        raise DomainError("energy bound needs every c_i > 0 and r > 0")
    system = traj.system
    steer = getattr(system, "steering", None)
    if isinstance(system, ModelConfig) and not isinstance(steer, NoSteering):
        raise DomainError("energy bound needs zero steering")
    if isinstance(system, OpenLoopSystem) and steer is not None:
        raise DomainError("energy bound needs zero steering")
    t = np.asarray(traj.t, dtype=float) - traj.t[0]
    E = 0.5 * np.max(np.sum(traj.v**2, axis=2), axis=1)
    r = friction.r
    E0 = E[0]
    if E0 == 0:
        bound = np.zeros_like(E)
    else:
        bound = (E0 ** (-r / 2) + 2 ** (r / 2) * r * c.min() * t) ** (-2 / r)
    inc = float(np.max(np.diff(E), initial=0.0))
    excess = float(np.max(E - bound))
    return EnergyReport(t, E, bound, inc, excess, tol)


# ---------------------------------------------------------------------------
# Exact oracles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleResult:
    holds: bool
    lhs: object
    rhs: object
    detail: str = ""


def _fractions(a):
    return [[Fraction(float(x)) for x in row] for row in np.atleast_2d(np.asarray(a, dtype=float))]


def maximal_action_oracle(S, u, w, theta, M=None):
    """Exact check of ``|<S u, w>| <= M U W (1 - lam^2 theta^2)`` for antisymmetric ``S``.

    ``U`` and ``W`` are the sums of the nonnegative vectors ``u`` and ``w``;
    ``lam`` counts indices with ``u_j >= theta U`` and ``w_j >= theta W``.
    Every input float is converted to an exact rational, so the comparison has
    no rounding. ``M`` defaults to ``max |S_ij|``.
    """
    S = np.asarray(S, dtype=float)
    u = np.asarray(u, dtype=float)
    w = np.asarray(w, dtype=float)
    n = S.shape[0]
    if S.shape != (n, n) or u.shape != (n,) or w.shape != (n,):
        raise DomainError("S must be n x n and u, w length n")
    if not np.array_equal(S, -S.T):
        raise DomainError("S is not antisymmetric")
    if np.any(u < 0) or np.any(w < 0):
        raise DomainError("u and w must be nonnegative")
    if not theta > 0:
        raise DomainError("theta must be positive")
    Sf = _fractions(S)
    uf = [Fraction(float(x)) for x in u]
    wf = [Fraction(float(x)) for x in w]
    th = Fraction(float(theta))
    Mf = max((abs(x) for row in Sf for x in row), default=Fraction(0)) if M is None else Fraction(float(M))
    if any(abs(x) > Mf for row in Sf for x in row):
        raise DomainError("M is smaller than max |S_ij|")
    lhs = abs(sum(Sf[i][j] * uf[j] * wf[i] for i in range(n) for j in range(n)))
    U, W = sum(uf), sum(wf)
    lam = sum(1 for j in range(n) if uf[j] >= th * U and wf[j] >= th * W)
    rhs = Mf * U * W * (1 - lam * lam * th * th)
    return OracleResult(lhs <= rhs, lhs, rhs, f"lambda={lam}")


def hull_support_oracle(points, n_samples=50, rng=None):
    """Check that the diameter pair ``(p, q)`` supports the hull: ``<v_p - v_q, v - v_q> >= -1e-12``.

    Tested at every input point and at ``n_samples`` random convex
    combinations drawn from a flat Dirichlet distribution.
    """
    P = _points(points, "points")
    if P.shape[0] < 2:
        raise DomainError("need at least two points")
    rng = np.random.default_rng(rng)
    _, (p, q) = diameter(P)
    e = P[p] - P[q]
    wts = rng.dirichlet(np.ones(P.shape[0]), size=n_samples)
    cand = np.vstack([P, wts @ P])
    ip = (cand - P[q]) @ e
    worst = float(np.min(ip))
    return OracleResult(worst >= -1e-12, worst, -1e-12, f"pair=({p}, {q})")
