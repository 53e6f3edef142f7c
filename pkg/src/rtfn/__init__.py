"""RTFN: a dual-branch (convolution + LSTM attention) network for time-series
classification and autoencoder-based clustering, in plain numpy."""

__version__ = "0.1.0"

from rtfn.clustering import kmeans, leaderboard, rand_index, top1_accuracy
from rtfn.data import SeriesDataset, load_multivariate_csv, load_ucr_tsv, make_synthetic, znormalize
from rtfn.model import Decoder, RtfnConfig, RtfnModel, load_checkpoint, save_checkpoint
from rtfn.training import TrainConfig, lr_schedule, train_autoencoder, train_supervised

__all__ = [
    "Decoder", "RtfnConfig", "RtfnModel", "SeriesDataset", "TrainConfig",
    "kmeans", "leaderboard", "load_checkpoint", "load_multivariate_csv", "load_ucr_tsv",
    "lr_schedule", "make_synthetic", "rand_index", "save_checkpoint", "top1_accuracy",
    "train_autoencoder", "train_supervised", "znormalize",
]
