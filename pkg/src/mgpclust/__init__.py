"""Time-varying Bayesian clustering of multivariate functional data.

Month-partitioned regressions with urn-clustered coefficients, latent
factor Gaussian-process residuals mixed across components, fitted by a
Gibbs sampler, together with a forward simulator, posterior summaries,
an hourly-data pipeline, and a batch CLI.
"""

__version__ = "0.1.0"

from .model import (ClusterState, Dataset, McmcSchedule, ModelConfig,
                    ParameterState, PriorSpec, validate_config, validate_state)

__all__ = [
    "__version__",
    "ClusterState",
    "Dataset",
    "McmcSchedule",
    "ModelConfig",
    "ParameterState",
    "PriorSpec",
    "validate_config",
    "validate_state",
]
