from .config import DEFAULT_TYPES, TARGET_TYPES, ExperimentConfig, load_config
from .experiment import (ExperimentResults, Lab, Moments, analyze, compute_moments, ensure_moments,
                         run_experiment, run_plateau, run_sensitivity)
from .latents import LatentPropertyReport, latent_properties, latent_property_report
from .reports import ResultRow, ResultsTable, emit_tables, results_table
