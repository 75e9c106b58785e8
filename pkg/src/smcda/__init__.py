"""Particle filters, ensemble Kalman filters, particle smoothers and particle MCMC."""

from .errors import (
    CapabilityError,
    DegenerateWeightsError,
    DivergenceError,
    DomainError,
    IntegrationError,
    NumericalError,
)
from .rng import RngStream
from .ssm import (
    LinearGaussian,
    LinearGaussianParams,
    Lorenz96,
    Lorenz96Params,
    ObservationOperator,
    StateSpaceModel,
    StochasticVolatility,
    SVParams,
)

__version__ = "0.1.0"

__all__ = [
    "CapabilityError",
    "DegenerateWeightsError",
    "DivergenceError",
    "DomainError",
    "IntegrationError",
    "NumericalError",
    "RngStream",
    "LinearGaussian",
    "LinearGaussianParams",
    "Lorenz96",
    "Lorenz96Params",
    "ObservationOperator",
    "StateSpaceModel",
    "StochasticVolatility",
    "SVParams",
]
