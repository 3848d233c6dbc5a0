"""Ensemble data assimilation: particle and ensemble Kalman filters, transport
couplings and MCMC samplers, with exact Kalman oracles for linear-Gaussian
twin experiments."""

from .errors import ConfigError, DassimError, NumericalError
from .prob import GaussianDensity, GridDensity1D, WeightedEnsemble

__version__ = "0.1.0"
