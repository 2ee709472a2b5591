"""Bayesian nonlinear dimensionality reduction with anchored latent decoders."""

from .analysis import (
    coclustering,
    dahl_least_squares,
    distance_error,
    distance_trace,
    pairwise_distances,
    spectral_cluster,
    split_rhat,
)
from .anchors import AnchorSet, LLEConfig, build_anchor_set, lle_embed, pretrain_decoder
from .data import Dataset, RunConfig, load_csv, paper_configs, simulate_hypersphere
from .estimators import AnchoredDecoderSampler, LocallyLinearEmbedding, PosteriorSpectralClustering
from .linalg import cholesky_solve, kmeans, sym_eig
from .model import AnchoredPosterior, DecoderParams, ModelSpec, decode, log_likelihood, log_prior
from .sampler import ChainTrace, NutsConfig, run_chains

__version__ = "0.1.0"

__all__ = [
    "AnchorSet",
    "AnchoredDecoderSampler",
    "AnchoredPosterior",
    "ChainTrace",
    "Dataset",
    "DecoderParams",
    "LLEConfig",
    "LocallyLinearEmbedding",
    "ModelSpec",
    "NutsConfig",
    "PosteriorSpectralClustering",
    "RunConfig",
    "build_anchor_set",
    "cholesky_solve",
    "coclustering",
    "dahl_least_squares",
    "decode",
    "distance_error",
    "distance_trace",
    "kmeans",
    "lle_embed",
    "load_csv",
    "log_likelihood",
    "log_prior",
    "pairwise_distances",
    "paper_configs",
    "pretrain_decoder",
    "run_chains",
    "simulate_hypersphere",
    "spectral_cluster",
    "split_rhat",
    "sym_eig",
]
