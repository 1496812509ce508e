"""Conditional VAE forecasting of dense pixel trajectories, with its evaluation toolkit."""
from .codec import (
    NormalizedSpectral,
    SpectralField,
    TrajectoryField,
    decode_field,
    encode_field,
    recombine,
    split_normalize,
)
from .cvae import CvaeConfig, GaussianPosterior, Model, Prediction
from .scenes import Dataset, SceneSpec, build_dataset, generate_scene
from .trainer import TrainConfig, TrainHistory, train

__version__ = "0.1.0"
