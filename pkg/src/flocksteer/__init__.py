"""Steered flocking with bounded gains: simulation, certificates and reduced models."""

from .errors import (
    ConfigError,
    DegenerateInfluenceError,
    DomainError,
    FlockError,
    IntegrationError,
    SamplingError,
    StiffnessError,
)
from .integrate import IntegratorConfig, Trajectory, integrate, step_rk4
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
    OpenLoopSystem,
    OrientationBias,
    OrientationMap,
    PowerKernel,
    ScheduleSteering,
    SwarmState,
    TrackingSteering,
    gain_vector,
    influence_matrix,
    local_mean_velocity,
    rhs_closed,
    rhs_open,
    steering_eval,
)

__all__ = [
    "IntegratorConfig",
    "Trajectory",
    "integrate",
    "step_rk4",
    "ConfigError",
    "DegenerateInfluenceError",
    "DomainError",
    "FlockError",
    "IntegrationError",
    "SamplingError",
    "StiffnessError",
    "CircleTarget",
    "ConstantSteering",
    "DecayingSteering",
    "FrictionRule",
    "GainRule",
    "GaussianKernel",
    "InfluenceRule",
    "LinearTarget",
    "Masking",
    "ModelConfig",
    "NoSteering",
    "OpenLoopSystem",
    "OrientationBias",
    "OrientationMap",
    "PowerKernel",
    "ScheduleSteering",
    "SwarmState",
    "TrackingSteering",
    "gain_vector",
    "influence_matrix",
    "local_mean_velocity",
    "rhs_closed",
    "rhs_open",
    "steering_eval",
]

__version__ = "0.1.0"
