"""Conflict-aware safety and active perception control over Gaussian splat maps."""

from splatcbf.splat_field import (
    Splat,
    SplatField,
    covariance_of,
    generate_field,
    load_field,
    neighbors_within,
    save_field,
)
from splatcbf.risk import (
    DistanceDistribution,
    RiskParams,
    avar,
    distance_distribution,
    min_risk,
    rho_with_gradient,
    var,
)
from splatcbf.barriers import (
    BarrierEval,
    PerceptionParams,
    SafetyBarrierParams,
    alpha_eta,
    alpha_pi,
    alpha_s,
    perception_barrier_angular,
    perception_barrier_spatial,
    safety_barrier,
    softmin_bounds_check,
)
from splatcbf.info_gain import (
    CameraModel,
    MaskParams,
    Pose,
    eig,
    info_ascent_directions,
    mask_radius,
    masked_splats,
    next_best_view,
    splat_visibility,
    update_map,
)
from splatcbf.qp import QpProblem, QpSolution, kkt_report, solve
from splatcbf.controller import ConflictAwareController, ControlOutput, ControllerConfig
from splatcbf.sim import RunMetrics, Scenario, batch, integrate, run

__version__ = "0.1.0"

__all__ = [
    "BarrierEval",
    "CameraModel",
    "ConflictAwareController",
    "ControlOutput",
    "ControllerConfig",
    "DistanceDistribution",
    "MaskParams",
    "PerceptionParams",
    "Pose",
    "QpProblem",
    "QpSolution",
    "RiskParams",
    "RunMetrics",
    "SafetyBarrierParams",
    "Scenario",
    "Splat",
    "SplatField",
    "alpha_eta",
    "alpha_pi",
    "alpha_s",
    "avar",
    "batch",
    "covariance_of",
    "distance_distribution",
    "eig",
    "generate_field",
    "info_ascent_directions",
    "integrate",
    "kkt_report",
    "load_field",
    "mask_radius",
    "masked_splats",
    "min_risk",
    "neighbors_within",
    "next_best_view",
    "perception_barrier_angular",
    "perception_barrier_spatial",
    "rho_with_gradient",
    "run",
    "safety_barrier",
    "save_field",
    "softmin_bounds_check",
    "solve",
    "splat_visibility",
    "update_map",
    "var",
]
