"""Pose uncertainty bounds from differentiable rendering.

Treats a renderer as the measurement function for camera pose on SE(3),
assembles the Fisher information of the pose from analytic image Jacobians,
and turns it into Cramer-Rao covariance bounds, identifiability diagnostics,
multi-camera information fusion, and bandwidth-budgeted tile selection,
together with a Monte Carlo harness that checks the bounds empirically.
"""

from .se3 import Pose, exp, log, adjoint, compose, inverse
from .renderer import (
    Camera,
    SplatScene,
    FeatureScene,
    PixelSubset,
    TileGrid,
    PhotometricModel,
    FeatureModel,
    render,
    render_jvp,
    project_features,
    feature_jacobian,
)
from .fisher import (
    IsotropicVariance,
    DiagonalVariance,
    BlockDiagonalVariance,
    FisherInfo,
    CrbReport,
    assemble_fim,
    crb,
    reparameterize,
    identifiability,
    estimate_noise,
)
from .multiagent import (
    AgentObservation,
    TileBlock,
    Budget,
    LogDet,
    Trace,
    LambdaMin,
    MountedModel,
    transport,
    fuse,
    tile_infos,
    select_greedy,
    select_exhaustive,
    select_random,
)
from .validation import (
    TrialConfig,
    TrialResult,
    CalibrationCurve,
    finite_diff_jacobian,
    perturb_and_align,
    ba_covariance,
    calibrate,
    texture_sweep,
    chi_square_quantile,
)

__version__ = "0.1.0"
