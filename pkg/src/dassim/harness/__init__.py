from .config import ExperimentConfig, load_config, parse_config
from .experiment import (
    MetricsRecord,
    compute_rmse,
    kalman_reference_run,
    run_filter,
    run_twin_experiment,
    twin_data,
)
