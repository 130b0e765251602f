"""Particle-evolution approximation of optimal transport plans.

Evolves paired particles under a relaxed transport energy (transport
cost plus soft marginal penalties) so their final positions sample an
approximate optimal coupling between two continuous densities; the same
machinery solves Wasserstein barycenters through a multi-marginal block
system.  Exact small-scale solvers are included for validation.
"""

__version__ = "0.1.0"

from .barycenter import (
    BarycenterConfig,
    BarycenterResult,
    BarycenterSystem,
    bary_drift,
    run_barycenter,
)
from .config import ConfigError, RunConfig, parse_config
from .diagnostics import (
    Coupling,
    energy_estimate,
    exact_assignment,
    gaussian_barycenter_1d,
    gaussian_map_1d,
    interpolate,
    marginal_w2_1d,
    sorted_coupling_1d,
)
from .dynamics import (
    BlowUpError,
    CostFunction,
    ParticleSystem,
    SolverConfig,
    TransportResult,
    batch_drift,
    cost_eval,
    cost_grad,
    rbm_partition,
    run_transport,
    step,
)
from .kde import (
    RbfKernel,
    grad_log_kde,
    log_kde_density,
    rbf_eval,
    rbf_grad,
    silverman_bandwidth,
)
from .marginals import GrayImage, Marginal, image_to_mixture, load_gray_image

__all__ = [
    "__version__",
    "BarycenterConfig",
    "BarycenterResult",
    "BarycenterSystem",
    "BlowUpError",
    "ConfigError",
    "CostFunction",
    "Coupling",
    "GrayImage",
    "Marginal",
    "ParticleSystem",
    "RbfKernel",
    "RunConfig",
    "SolverConfig",
    "TransportResult",
    "bary_drift",
    "batch_drift",
    "cost_eval",
    "cost_grad",
    "energy_estimate",
    "exact_assignment",
    "gaussian_barycenter_1d",
    "gaussian_map_1d",
    "grad_log_kde",
    "image_to_mixture",
    "interpolate",
    "load_gray_image",
    "log_kde_density",
    "marginal_w2_1d",
    "parse_config",
    "rbf_eval",
    "rbf_grad",
    "rbm_partition",
    "run_barycenter",
    "run_transport",
    "silverman_bandwidth",
    "sorted_coupling_1d",
    "step",
]
