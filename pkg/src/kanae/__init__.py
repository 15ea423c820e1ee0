"""Kolmogorov-Arnold autoencoders for unsupervised process fault detection."""

__version__ = "0.1.0"

from .errors import (
    ConfigurationError,
    ContractError,
    DataError,
    DegenerateDistributionError,
    KanaeError,
    ModelFileError,
    NumericError,
    TrainingError,
)
from .model import (
    VARIANTS,
    AeArchitecture,
    Model,
    build_model,
    count_parameters,
    default_architecture,
    load_model,
    loss,
    reconstruct,
    save_model,
)
from .train import TrainConfig, TrainHistory, fit_scaler, split_simulations, sweep, train
from .detect import (
    aggregate,
    evaluate_profile,
    evaluate_run,
    fit_profile,
    kde_threshold,
    load_profile,
    save_profile,
    spe,
)
from .bayes import RopeConfig, fdr_deltas, signed_rank_posterior
from .data import FaultScenario, SyntheticPlant, build_subsets, load_dataset, synth_plant
