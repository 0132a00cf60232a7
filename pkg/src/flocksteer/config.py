"""Experiment configuration: YAML tree validated by pydantic models.

Unknown keys are rejected. Validation errors are reported as
:class:`~flocksteer.errors.ConfigError` with the dotted field path and the
source line of the offending node.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from typing import List, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError, DomainError
from .integrate import IntegratorConfig, default_dt
from .model import (
    CircleTarget,
    ConstantSteering,
    DecayingSteering,
    FrictionRule,
    GainRule,
    GaussianKernel,
    InfluenceRule,
    LinearTarget,
    Masking,
    ModelConfig,
    NoSteering,
    OrientationBias,
    OrientationMap,
    PowerKernel,
    SwarmState,
    TrackingSteering,
)

PRESETS = ("paper-sec5",)

Scalar = Union[float, List[float]]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class KernelSpec(_Strict):
    name: Literal["power", "gaussian"] = "power"
    K: float = Field(1.0, gt=0)
    a: float = Field(1.0, gt=0)
    beta: float = Field(0.3, ge=0)
    length: float = Field(1.0, gt=0)


class MaskingSpec(_Strict):
    enabled: bool = False
    kappa: float = Field(0.5, ge=0, lt=1)
    width: float = Field(1.0, gt=0)
    smoothing: float = Field(0.05, gt=0)


class OrientationSpec(_Strict):
    enabled: bool = False
    eta: float = Field(0.5, ge=0, lt=1)
    delta: float = Field(0.05, gt=0)
    b: Scalar = 1.0


class GainSpec(_Strict):
    form: Literal["bounded", "constant"] = "bounded"
    A: float = Field(1.0, gt=0)
    offset: Scalar = 1.0
    power: float = Field(0.5, ge=0)


class TargetSpec(_Strict):
    kind: Literal["circle", "linear"] = "circle"
    center: List[float] = [100.0, 10.0]
    radius: float = 10.0
    omega: float = 0.1
    origin: Optional[List[float]] = None
    velocity: Optional[List[float]] = None


class SteeringSpec(_Strict):
    form: Literal["none", "constant", "decaying", "tracking"] = "none"
    gamma1: float = 2.0
    gamma2: float = 0.1
    target: TargetSpec = TargetSpec()
    B: Optional[List[List[float]]] = None
    rate: float = Field(1.0, gt=0)

    @model_validator(mode="after")
    def _needs_b(self):
        if self.form in ("constant", "decaying") and self.B is None:
            raise ValueError(f"steering form '{self.form}' needs B")
        return self


class FrictionSpec(_Strict):
    c: Scalar = 0.0
    r: float = Field(1.0, ge=0)


class ModelSpec(_Strict):
    n_agents: int = Field(ge=1)
    dim: int = Field(ge=1)
    eps: float = Field(1.0, gt=0)
    kernel: KernelSpec = KernelSpec()
    masking: MaskingSpec = MaskingSpec()
    orientation: OrientationSpec = OrientationSpec()
    gain: GainSpec = GainSpec()
    steering: SteeringSpec = SteeringSpec()
    friction: FrictionSpec = FrictionSpec()


class IntegratorSpec(_Strict):
    method: Literal["rk4", "rk45"] = "rk4"
    dt: Optional[float] = Field(None, gt=0)
    rtol: float = Field(1e-8, gt=0)
    atol: float = Field(1e-10, gt=0)
    t_end: float = Field(gt=0)
    sample_every: Optional[int] = Field(None, ge=1)
    sample_interval: Optional[float] = Field(None, gt=0)

    @model_validator(mode="after")
    def _one_sampling(self):
        if self.sample_every is not None and self.sample_interval is not None:
            raise ValueError("give sample_every or sample_interval, not both")
        return self


class RandomBoxSpec(_Strict):
    seed: int = 0
    position_box: List[List[float]]
    velocity_box: List[List[float]]


class InitialSpec(_Strict):
    positions: Optional[List[List[float]]] = None
    velocities: Optional[List[List[float]]] = None
    random: Optional[RandomBoxSpec] = None

    @model_validator(mode="after")
    def _one_source(self):
        explicit = self.positions is not None or self.velocities is not None
        if explicit and self.random is not None:
            raise ValueError("give explicit arrays or random boxes, not both")
        if not explicit and self.random is None:
            raise ValueError("initial condition needs positions/velocities or random boxes")
        if explicit and (self.positions is None or self.velocities is None):
            raise ValueError("explicit initial condition needs both positions and velocities")
        return self


class OutputSpec(_Strict):
    trajectory: str = "trajectory.csv"
    summary: str = "summary.json"
    certificate: str = "certificate.json"
    comparison: str = "comparison.csv"
    transient: str = "transient.csv"
    transient_summary: str = "transient.json"
    checkpoints: Optional[List[float]] = None


class ThetaSpec(_Strict):
    policy: Literal["psi", "fixed", "min_entry", "uniform"] = "psi"
    value: Optional[float] = Field(None, gt=0)


class AnalysisSpec(_Strict):
    theta: ThetaSpec = ThetaSpec()
    certificate: bool = False
    steering_integral: Optional[float] = Field(None, ge=0)
    steering_decays: Optional[bool] = None
    eps_sweep: List[float] = [0.1, 0.01, 0.001]
    t_skip: Optional[float] = Field(None, ge=0)
    vf0_source: Literal["transient", "formula"] = "transient"
    compare_method: Literal["rk4", "rk45"] = "rk45"
    tau_end: float = Field(50.0, gt=0)


class ExperimentConfig(_Strict):
    model: ModelSpec
    integrator: IntegratorSpec
    initial: InitialSpec
    outputs: OutputSpec = OutputSpec()
    analysis: AnalysisSpec = AnalysisSpec()

    # -- construction of runtime objects ------------------------------------

    def build_model(self, eps=None):
        m = self.model
        n, d = m.n_agents, m.dim
        if m.kernel.name == "power":
            kernel = PowerKernel(m.kernel.K, m.kernel.a, m.kernel.beta)
        else:
            kernel = GaussianKernel(m.kernel.K, m.kernel.length)
        masking = Masking(m.masking.kappa, m.masking.width, m.masking.smoothing) if m.masking.enabled else None
        orient = OrientationBias(m.orientation.eta, m.orientation.delta) if m.orientation.enabled else None
        if m.gain.form == "constant":
            gain = GainRule(m.gain.A, _arr(m.gain.offset), 0.0)
        else:
            gain = GainRule(m.gain.A, _arr(m.gain.offset), m.gain.power)
        s = m.steering
        if s.form == "none":
            steering = NoSteering()
        elif s.form == "constant":
            steering = ConstantSteering(np.array(s.B))
        elif s.form == "decaying":
            steering = DecayingSteering(np.array(s.B), s.rate)
        else:
            t = s.target
            if t.kind == "circle":
                target = CircleTarget(tuple(t.center), t.radius, t.omega)
            else:
                if t.origin is None or t.velocity is None:
                    raise ConfigError("linear target needs origin and velocity", "model.steering.target")
                target = LinearTarget(tuple(t.origin), tuple(t.velocity))
            steering = TrackingSteering(s.gamma1, s.gamma2, target)
        return ModelConfig(
            n_agents=n,
            dim=d,
            influence=InfluenceRule(kernel, masking, orient),
            gain=gain,
            steering=steering,
            friction=FrictionRule(_arr(m.friction.c), m.friction.r),
            orientation_map=OrientationMap(_arr(m.orientation.b)),
            eps=m.eps if eps is None else eps,
        )

    def build_initial(self, seed=None):
        n, d = self.model.n_agents, self.model.dim
        ini = self.initial
        if ini.random is None:
            x, v = np.array(ini.positions, dtype=float), np.array(ini.velocities, dtype=float)
        else:
            box = ini.random
            rng = np.random.default_rng(box.seed if seed is None else seed)
            x = _uniform_box(rng, box.position_box, n, d, "initial.random.position_box")
            v = _uniform_box(rng, box.velocity_box, n, d, "initial.random.velocity_box")
        for arr, name in ((x, "initial.positions"), (v, "initial.velocities")):
            if arr.shape != (n, d):
                raise ConfigError(f"expected shape {(n, d)}, got {arr.shape}", name)
        return SwarmState(0.0, x, v)

    def build_integrator(self, eps=None):
        i = self.integrator
        eps = self.model.eps if eps is None else eps
        if i.sample_interval is not None and i.dt is None:
            return IntegratorConfig.with_sample_interval(i.t_end, i.sample_interval, eps=eps, method=i.method,
                                                         rtol=i.rtol, atol=i.atol)
        if i.sample_interval is not None:
            k = max(1, round(i.sample_interval / i.dt))
            return IntegratorConfig(t_end=i.t_end, method=i.method, dt=i.dt, rtol=i.rtol, atol=i.atol, sample_every=k)
        return IntegratorConfig(t_end=i.t_end, method=i.method, dt=i.dt, rtol=i.rtol, atol=i.atol,
                                sample_every=i.sample_every or 1)

    def sample_interval(self, eps=None):
        i = self.integrator
        if i.sample_interval is not None:
            return i.sample_interval
        eps = self.model.eps if eps is None else eps
        return (i.dt or default_dt(eps)) * (i.sample_every or 1)


def _arr(value):
    return np.array(value, dtype=float) if isinstance(value, list) else float(value)


def _uniform_box(rng, box, n, d, name):
    box = np.array(box, dtype=float)
    if box.shape != (d, 2) or np.any(box[:, 1] < box[:, 0]):
        raise ConfigError(f"box must be {d} rows of [low, high]", name)
    return rng.uniform(box[:, 0], box[:, 1], size=(n, d))


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------


def _line_index(node, path=(), out=None):
    """Map every key path in a composed YAML tree to its 1-based source line."""
    out = {} if out is None else out
    out[path] = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = k.value
            out[path + (key,)] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (i,), out)
    return out


def _locate(loc, lines):
    parts = tuple(p for p in loc if not (isinstance(p, str) and ("[" in p or p.startswith("function"))))
    for k in range(len(parts), -1, -1):
        key = tuple(str(p) if isinstance(p, str) else p for p in parts[:k])
        if key in lines:
            return lines[key]
    return None


def parse_config(text, source="<string>"):
    """Validate YAML ``text`` into an :class:`ExperimentConfig`."""
    try:
        root = yaml.compose(text)
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"{source}: malformed YAML: {getattr(exc, 'problem', exc)}",
                          line=None if mark is None else mark.line + 1) from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a mapping", line=1)
    lines = _line_index(root)
    try:
        cfg = ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        err = exc.errors()[0]
        loc = tuple(err["loc"])
        field = ".".join(str(p) for p in loc)
        raise ConfigError(err["msg"], field or None, _locate(loc, lines)) from exc
    try:
        cfg.build_model()
        cfg.build_initial()
    except DomainError as exc:
        raise ConfigError(str(exc), "model") from exc
    return cfg


def preset_text(name):
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    return resources.files("flocksteer").joinpath("presets", f"{name}.yaml").read_text(encoding="utf-8")


def load_config(path_or_preset):
    """Load a config file, or a bundled preset by name."""
    p = Path(path_or_preset)
    if p.is_file():
        return parse_config(p.read_text(encoding="utf-8"), str(p))
    if str(path_or_preset) in PRESETS:
        return parse_config(preset_text(str(path_or_preset)), str(path_or_preset))
    raise ConfigError(f"no config file or preset named {str(path_or_preset)!r}")
