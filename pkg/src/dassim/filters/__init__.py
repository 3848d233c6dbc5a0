from .continuous import meanfield_transform_step, meanfield_y_velocity, moser_transport, moser_velocity_1d
from .ensemble import (
    enkf_perturbed_step,
    esrf_optimal_transform,
    esrf_step,
    esrf_transform,
    etkb_filter_step,
    etkb_flow,
)
from .kalman import kalman_bucy_functional, kalman_bucy_moments, kalman_forecast, kalman_update
from .particle import (
    bayes_importance_update,
    guided_smc_step,
    incremental_bayes_weights,
    nudged_gaussian_proposal,
    optimal_gaussian_proposal,
    sir_filter_step,
    transition_proposal,
)
from .state import Diagnostics, FilterState, GuidedProposal

FILTER_NAMES = ("sir", "enkf", "esrf", "esrf-ot", "etkbf", "guided", "meanfield")
