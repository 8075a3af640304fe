"""Sum-of-trees regression with a Matérn spatial field for clustered survey data."""
from .data_model import SpatialDataset, load_dataset, save_dataset
from .gp import MaternParams, PcPriorConfig, SigmaEPriorConfig, calibrate_priors
from .predict import (GriddedSurface, RegionSpec, aggregate_areal, compute_metrics,
                      partial_dependence, predict_surface)
from .sampler import ChainConfig, MeshConfig, PosteriorSamples, PriorConfig, fit_comparator, run_chain
from .simgen import ScenarioConfig, simulate_scenario

__all__ = [
    "ChainConfig", "GriddedSurface", "MaternParams", "MeshConfig", "PcPriorConfig",
    "PosteriorSamples", "PriorConfig", "RegionSpec", "ScenarioConfig", "SigmaEPriorConfig",
    "SpatialDataset", "aggregate_areal", "calibrate_priors", "compute_metrics", "fit_comparator",
    "load_dataset", "partial_dependence", "predict_surface", "run_chain", "save_dataset",
    "simulate_scenario",
]
__version__ = "0.1.0"
