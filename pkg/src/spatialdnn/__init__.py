"""Deep ReLU network regression for spatially dependent data.

Submodules
----------
grf        covariance models and Gaussian random field sampling
netcore    sparse ReLU network, backprop, Adam with L1 proximal steps
baselines  Nadaraya-Watson kernel regression and a backfitted additive model
theory     calculators for the smoothness bookkeeping and risk bounds
simbench   simulation designs, metrics, interval bands and the benchmark harness
housing    California housing ingestion and k-fold comparison
cli        command line entry point
"""

from spatialdnn.errors import (
    DegenerateCovariateError,
    DivergenceError,
    DomainError,
    InvalidInputError,
    NotPositiveDefiniteError,
    PreconditionError,
    SchemaError,
    SpatialDNNError,
    UnsupportedReplicateCountError,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateCovariateError",
    "DivergenceError",
    "DomainError",
    "InvalidInputError",
    "NotPositiveDefiniteError",
    "PreconditionError",
    "SchemaError",
    "SpatialDNNError",
    "UnsupportedReplicateCountError",
]
