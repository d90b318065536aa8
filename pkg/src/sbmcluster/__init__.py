"""Stochastic-block-model clustering: soft EM, Monte-Carlo EM and Generalized k-means."""

from sbmcluster.model import (
    BlockModelSummary,
    DegenerateModelError,
    HardClustering,
    RatingDataset,
    SimpleGraph,
    SoftModel,
    entropy_term_f,
    hard_entropy,
    soft_entropy,
)
from sbmcluster.rng import RngSpec

__version__ = "0.1.0"

__all__ = [
    "BlockModelSummary",
    "DegenerateModelError",
    "HardClustering",
    "RatingDataset",
    "RngSpec",
    "SimpleGraph",
    "SoftModel",
    "entropy_term_f",
    "hard_entropy",
    "soft_entropy",
]
