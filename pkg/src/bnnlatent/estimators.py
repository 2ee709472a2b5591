"""scikit-learn style wrappers around the functional modules."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import analysis
from .anchors import LLEConfig, _local_weights, build_anchor_set, lle_embed
from .model import AnchoredPosterior, ModelSpec
from .sampler import NutsConfig, run_chains
from .utils import derive_seed


class LocallyLinearEmbedding(TransformerMixin, BaseEstimator):
    """Locally linear embedding with barycentric out-of-sample mapping.

    Parameters
    ----------
    n_components : int
        Embedding dimension.
    n_neighbors : int
        Neighbours used to reconstruct each point.
    ridge : float
        Regulariser, relative to the trace of each local Gram matrix.
    """

    def __init__(self, n_components=2, n_neighbors=5, ridge=1e-3):
        self.n_components = n_components
        self.n_neighbors = n_neighbors
        self.ridge = ridge

    def fit(self, X, y=None):
        X = check_array(X, ensure_min_samples=2)
        cfg = LLEConfig(self.n_neighbors, self.ridge, self.n_components)
        self.embedding_ = lle_embed(X, cfg)
        self.train_ = X
        self.n_features_in_ = X.shape[1]
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_

    def transform(self, X):
        """Map each row as the weighted mean of its neighbours' embeddings."""
        check_is_fitted(self, "embedding_")
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        T = self.train_
        d = np.sum(X * X, axis=1)[:, None] - 2.0 * X @ T.T + np.sum(T * T, axis=1)[None, :]
        nbrs = np.argsort(d, axis=1, kind="stable")[:, : self.n_neighbors]
        out = np.empty((X.shape[0], self.n_components))
        for i in range(X.shape[0]):
            Z = T[nbrs[i]] - X[i]
            out[i] = _local_weights(Z @ Z.T, self.ridge) @ self.embedding_[nbrs[i]]
        return out


class AnchoredDecoderSampler(TransformerMixin, BaseEstimator):
    """Bayesian latent decoder fitted by NUTS, with optional anchor points.

    ``fit`` builds anchors and samples the posterior. ``transform`` returns
    the posterior-mean latent configuration of the fitted observations;
    the model has no encoder, so other inputs are rejected.
    """

    def __init__(
        self,
        n_components=2,
        hidden=10,
        n_ref=40,
        constrain=True,
        lle_scope="anchors",
        n_neighbors=5,
        ridge=1e-3,
        latent_prior="normal",
        chains=4,
        warmup=1000,
        iters=1000,
        target_accept=0.8,
        max_tree_depth=10,
        n_jobs=1,
        random_state=0,
    ):
        self.n_components = n_components
        self.hidden = hidden
        self.n_ref = n_ref
        self.constrain = constrain
        self.lle_scope = lle_scope
        self.n_neighbors = n_neighbors
        self.ridge = ridge
        self.latent_prior = latent_prior
        self.chains = chains
        self.warmup = warmup
        self.iters = iters
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.n_jobs = n_jobs
        self.random_state = random_state

    def fit(self, Y, y=None):
        Y = check_array(Y, ensure_min_samples=2)
        N, p = Y.shape
        spec = ModelSpec(p, self.n_components, self.hidden, N)
        seed = int(self.random_state)
        self.anchors_ = None
        if self.n_ref:
            cfg = LLEConfig(self.n_neighbors, self.ridge, self.n_components)
            self.anchors_ = build_anchor_set(
                Y, self.n_ref, cfg, spec, seed=seed, lle_scope=self.lle_scope, rescale=self.constrain
            )
        idx = self.anchors_.indices if self.anchors_ is not None else None
        vals = self.anchors_.values if self.anchors_ is not None else None
        self.posterior_ = AnchoredPosterior(
            Y, spec, idx, vals, constrain=self.constrain, latent_prior=self.latent_prior
        )
        nuts = NutsConfig(
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            warmup_iters=self.warmup,
            sample_iters=self.iters,
            chains=self.chains,
            seed=seed,
            n_jobs=self.n_jobs,
        )
        self.traces_ = run_chains(self.posterior_, self.posterior_.dim, nuts, names=self.posterior_.layout.names())
        self.latent_draws_ = np.stack([self.posterior_.latent_draws(t.draws) for t in self.traces_])
        self.embedding_ = self.latent_draws_.mean(axis=(0, 1))
        self.fitted_Y_ = Y
        self.n_features_in_ = p
        return self

    def fit_transform(self, Y, y=None):
        return self.fit(Y).embedding_

    def transform(self, Y):
        check_is_fitted(self, "embedding_")
        Y = check_array(Y)
        if Y.shape != self.fitted_Y_.shape or not np.array_equal(Y, self.fitted_Y_):
            raise NotImplementedError("latents are only available for the observations passed to fit")
        return self.embedding_

    def distance_traces(self, n_pairs=6, seed=0):
        """(chains, draws, pairs) distance series for random free pairs, and the pairs."""
        check_is_fitted(self, "latent_draws_")
        N = self.latent_draws_.shape[2]
        pairs = analysis.random_pairs(N, n_pairs, seed, candidates=self.posterior_.free_index)
        return analysis.distance_trace(list(self.latent_draws_), pairs), pairs

    def split_rhat(self, n_pairs=6, seed=0) -> np.ndarray:
        series, _ = self.distance_traces(n_pairs, seed)
        return np.array([analysis.split_rhat(series[:, :, m]) for m in range(series.shape[2])])


class PosteriorSpectralClustering(ClusterMixin, BaseEstimator):
    """Spectral clustering of every posterior draw, summarised by co-clustering.

    ``fit`` takes a (K, N, q) stack of latent draws. ``labels_`` is the
    least-squares (Dahl) representative partition and ``coclustering_``
    the posterior co-clustering probability matrix.
    """

    def __init__(self, n_clusters=2, thin=1, random_state=0):
        self.n_clusters = n_clusters
        self.thin = thin
        self.random_state = random_state

    def fit(self, latent_draws, y=None):
        L = np.asarray(latent_draws, dtype=float)
        if L.ndim == 2:
            L = L[None]
        if L.ndim != 3:
            raise ValueError(f"expected (draws, N, q) latent stack, got shape {L.shape}")
        check_array(L[0])
        parts = [
            analysis.spectral_cluster(
                analysis.pairwise_distances(L[k]), self.n_clusters, derive_seed(self.random_state, "cluster", k)
            )
            for k in range(0, L.shape[0], self.thin)
        ]
        self.partitions_ = np.array(parts)
        self.coclustering_ = analysis.coclustering_mean(parts)
        self.dahl_index_, self.dahl_objectives_ = analysis.dahl_from_labels(parts, self.coclustering_)
        self.labels_ = self.partitions_[self.dahl_index_]
        return self
