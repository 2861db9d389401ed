"""Hybrid matrix-factorization recommender with text and visual item priors.

The engine factorizes a sparse user-to-item rating matrix into latent
factors, optionally regularizing each item factor toward a prior mean
produced from side information: a trainable text network (convolutional
or recurrent-convolutional) fused with precomputed multi-level visual
features. Six model variants are supported, from plain probabilistic
matrix factorization (PMF) up to the fully fused VRConvMF.
"""

__version__ = "0.1.0"

from vrcmf.ratings import RatingsMatrix, DatasetSplit, DatasetStats
from vrcmf.config import TrainConfig

__all__ = ["RatingsMatrix", "DatasetSplit", "DatasetStats", "TrainConfig", "__version__"]
