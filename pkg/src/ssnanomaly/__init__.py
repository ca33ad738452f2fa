"""Anomaly detection for water-quality sensors on stream networks.

Spatio-temporal Bayesian model with stream-network covariance, posterior
predictive and residual-based anomaly detectors, simulation and scoring
utilities, and a preprocessing pipeline for multi-site level data.
"""
from .covariance import SpatialCovParams, total_covariance
from .detectors import (
    AnomalyLabels,
    ArimaOrder,
    HmmFit,
    MixtureFit,
    detect_arima,
    detect_hmm,
    detect_mixture,
    detect_ppd,
    make_refit,
)
from .errors import DataError, NumericalError, SSNAnomalyError
from .evaluate import ConfusionMetrics, brier, confusion, mcc
from .impale import cluster_sites, detect_events_mhmm, dtw_distance, impute_multivariate
from .model import (
    McmcConfig,
    ModelParams,
    ObservationSet,
    PosteriorSamples,
    PredictiveSummary,
    PriorSpec,
    default_priors,
    log_likelihood,
    posterior_predictive,
    sample_posterior,
    simulate_from_model,
)
from .network import Segment, SitePlacement, StreamNetwork, build_network, generate_random_network
from .recursive import BatchState, fit_recursive, moment_match
from .simulate import ANOMALY_TYPES, LabeledDataset, SimConfig, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "ANOMALY_TYPES",
    "AnomalyLabels",
    "ArimaOrder",
    "BatchState",
    "ConfusionMetrics",
    "DataError",
    "HmmFit",
    "LabeledDataset",
    "McmcConfig",
    "MixtureFit",
    "ModelParams",
    "NumericalError",
    "ObservationSet",
    "PosteriorSamples",
    "PredictiveSummary",
    "PriorSpec",
    "SSNAnomalyError",
    "Segment",
    "SimConfig",
    "SitePlacement",
    "SpatialCovParams",
    "StreamNetwork",
    "brier",
    "build_network",
    "cluster_sites",
    "confusion",
    "default_priors",
    "detect_arima",
    "detect_events_mhmm",
    "detect_hmm",
    "detect_mixture",
    "detect_ppd",
    "dtw_distance",
    "fit_recursive",
    "generate_random_network",
    "impute_multivariate",
    "log_likelihood",
    "make_refit",
    "mcc",
    "moment_match",
    "posterior_predictive",
    "sample_posterior",
    "simulate_dataset",
    "simulate_from_model",
    "total_covariance",
]
